"""Deterministic ground truth for the probabilistic solvers.

* :func:`solve_fd` -- explicit finite differences for
  ``u_t + f(u, u_x) u_x = 1/2 u_xx + g(u, u_x)`` with zero-gradient boundaries.
* :func:`cole_hopf` -- exact viscous Burgers solution (viscosity 1/2) by
  quadrature of the Hopf-Cole integral.
* :func:`heat_apply` -- the heat semigroup ``P_s = exp(s/2 Laplacian)`` by
  Gauss-Hermite quadrature.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import integrate
from scipy.interpolate import CubicSpline

from .coefficients import CoefficientSet, InitialData
from .errors import CFLError, MaxPrincipleError, QuadratureError, RangeError

logger = logging.getLogger(__name__)

CFL_DIFFUSION = 0.9
CFL_ADVECTION = 0.9


@dataclass(frozen=True)
class Grid:
    x_min: float
    x_max: float
    G: int

    def __post_init__(self):
        if self.G < 3:
            raise ValueError("a grid needs at least 3 points")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")

    @classmethod
    def from_spacing(cls, x_min: float, x_max: float, dx: float) -> "Grid":
        G = int(round((x_max - x_min) / dx)) + 1
        return cls(float(x_min), float(x_min + (G - 1) * dx), G)

    @classmethod
    def padded(cls, lo: float, hi: float, T: float, dx: float, scale: float = 3.0) -> "Grid":
        """Cover ``[lo, hi]`` plus ``6 sqrt(T) + scale`` on each side."""
        pad = 6.0 * math.sqrt(T) + scale
        return cls.from_spacing(lo - pad, hi + pad, dx)

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.G)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.G - 1)

    def contains(self, x, margin: float = 0.0) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.x_min + margin - 1e-12) and np.all(x <= self.x_max - margin + 1e-12))


def central_gradient(values: np.ndarray, dx: float) -> np.ndarray:
    return np.gradient(values, dx, axis=0)


def second_difference(values: np.ndarray, dx: float) -> np.ndarray:
    """Central second difference, with the stencil mirrored at the ends."""
    padded = np.concatenate([values[1:2], values, values[-2:-1]], axis=0)
    return (padded[2:] - 2.0 * values + padded[:-2]) / dx**2


def _interp(grid: Grid, table: np.ndarray, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    xs = grid.points
    flat = x.ravel()
    cols = [np.interp(flat, xs, table[:, i]) for i in range(table.shape[1])]
    return np.stack(cols, axis=-1).reshape(x.shape + (table.shape[1],))


@dataclass(eq=False)
class GridFunction:
    """m-component function on a uniform grid, values of shape ``(G, m)``.

    Calling it interpolates linearly and clamps outside ``[x_min, x_max]``.
    """

    grid: Grid
    values: np.ndarray
    gradient: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.grid.G:
            raise ValueError(f"{v.shape[0]} values for a {self.grid.G}-point grid")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function has non-finite values")
        self.values = v
        if self.gradient is not None:
            self.gradient = np.asarray(self.gradient, dtype=float).reshape(v.shape)

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def x(self) -> np.ndarray:
        return self.grid.points

    def __call__(self, x) -> np.ndarray:
        return _interp(self.grid, self.values, x)

    def with_gradient(self) -> "GridFunction":
        if self.gradient is None:
            self.gradient = central_gradient(self.values, self.grid.dx)
        return self

    def grad_at(self, x) -> np.ndarray:
        return _interp(self.grid, self.with_gradient().gradient, x)

    def second_derivative(self) -> np.ndarray:
        return second_difference(self.values, self.grid.dx)

    def sup_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.values, axis=1)))

    def component_sup(self) -> np.ndarray:
        return np.max(np.abs(self.values), axis=0)

    def lipschitz(self) -> float:
        return float(np.max(np.linalg.norm(np.diff(self.values, axis=0), axis=1)) / self.grid.dx)

    def to_csv(self, path: str | Path) -> None:
        """Columns: x, u1..um, du1..dum."""
        self.with_gradient()
        m = self.m
        header = ["x"] + [f"u{i + 1}" for i in range(m)] + [f"du{i + 1}" for i in range(m)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for x, u, du in zip(self.x, self.values, self.gradient):
                w.writerow([repr(float(x))] + [repr(float(v)) for v in u] + [repr(float(v)) for v in du])

    @classmethod
    def from_csv(cls, path: str | Path) -> "GridFunction":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        m = (data.shape[1] - 1) // 2
        x = data[:, 0]
        return cls(Grid(float(x[0]), float(x[-1]), len(x)), data[:, 1 : 1 + m], data[:, 1 + m :])


@dataclass(eq=False)
class GridFamily:
    """Snapshots of a grid function at increasing times."""

    times: np.ndarray
    frames: list[GridFunction]

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) != len(self.frames) or len(self.frames) == 0:
            raise ValueError("need one frame per time")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("snapshot times must increase")

    @property
    def grid(self) -> Grid:
        return self.frames[0].grid

    def _bracket(self, t: float) -> tuple[int, float]:
        ts = self.times
        if t < ts[0] - 1e-12 or t > ts[-1] + 1e-12:
            raise RangeError(f"time {t} outside snapshot range [{ts[0]}, {ts[-1]}]")
        j = int(np.searchsorted(ts, t, side="right")) - 1
        j = min(max(j, 0), len(ts) - 1)
        if j == len(ts) - 1 or abs(t - ts[j]) < 1e-12:
            return j, 0.0
        return j, (t - ts[j]) / (ts[j + 1] - ts[j])

    def frame_at(self, t: float) -> GridFunction:
        j, w = self._bracket(t)
        if w == 0.0:
            return self.frames[j]
        a, b = self.frames[j].with_gradient(), self.frames[j + 1].with_gradient()
        return GridFunction(a.grid, (1 - w) * a.values + w * b.values, (1 - w) * a.gradient + w * b.gradient)

    def value(self, x, t: float) -> np.ndarray:
        return self.frame_at(t)(x)

    def grad(self, x, t: float) -> np.ndarray:
        return self.frame_at(t).grad_at(x)


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def _rhs(coeffs: CoefficientSet, u: np.ndarray, dx: float) -> tuple[np.ndarray, np.ndarray]:
    padded = np.concatenate([u[1:2], u, u[-2:-1]], axis=0)
    ux = (padded[2:] - padded[:-2]) / (2.0 * dx)
    uxx = (padded[2:] - 2.0 * u + padded[:-2]) / dx**2
    a = np.asarray(coeffs.f(u, ux), dtype=float).reshape(-1)
    out = 0.5 * uxx - a[:, None] * ux
    if coeffs.g is not None:
        out = out + np.asarray(coeffs.g(u, ux)).reshape(u.shape)
    return out, a


def _check_cfl(dt: float, dx: float, amax: float) -> None:
    diff_max = CFL_DIFFUSION * dx**2
    if dt > diff_max * (1 + 1e-12):
        raise CFLError(f"dt={dt:.3e} exceeds diffusion limit 0.9 dx^2 = {diff_max:.3e}", diff_max)
    if amax > 0 and dt * amax > CFL_ADVECTION * dx * (1 + 1e-12):
        adv_max = CFL_ADVECTION * dx / amax
        raise CFLError(f"dt={dt:.3e} exceeds advection limit 0.9 dx / max|f| = {adv_max:.3e}", min(diff_max, adv_max))


def solve_fd_family(
    coeffs: CoefficientSet,
    grid: Grid,
    times: Sequence[float],
    dt_pde: float | None = None,
    initial: GridFunction | None = None,
) -> GridFamily:
    """Explicit Euler with central differences; snapshots exactly at ``times``.

    ``dt_pde`` defaults to the diffusion CFL limit. Between snapshots the step
    is shrunk so that every requested time is hit exactly.
    """
    times = np.asarray(sorted(set(float(t) for t in times)))
    if times[0] < 0:
        raise ValueError("snapshot times must be non-negative")
    dx = grid.dx
    if dt_pde is None:
        dt_pde = CFL_DIFFUSION * dx**2
    u = initial.values.copy() if initial is not None else np.asarray(coeffs.u0(grid.points), dtype=float).reshape(grid.G, -1)
    bound = np.max(np.abs(u), axis=0)
    _, a = _rhs(coeffs, u, dx)
    _check_cfl(dt_pde, dx, float(np.max(np.abs(a))))
    frames, t = [], 0.0
    for target in times:
        span = target - t
        n = int(math.ceil(span / dt_pde - 1e-9)) if span > 0 else 0
        k = span / n if n else 0.0
        for _ in range(n):
            rhs, a = _rhs(coeffs, u, dx)
            _check_cfl(k, dx, float(np.max(np.abs(a))))
            u = u + k * rhs
            if coeffs.g is None and np.any(np.max(np.abs(u), axis=0) > bound * (1 + 1e-10)):
                raise MaxPrincipleError("finite-difference state exceeded the initial sup-norm")
        t = target
        frames.append(GridFunction(grid, u.copy(), central_gradient(u, dx)))
    return GridFamily(times, frames)


def solve_fd(coeffs: CoefficientSet, grid: Grid, T: float, dt_pde: float | None = None) -> GridFunction:
    return solve_fd_family(coeffs, grid, [T], dt_pde).frames[-1]


# ---------------------------------------------------------------------------
# Cole-Hopf
# ---------------------------------------------------------------------------

def _potential(u0: Callable, x: float, lo: float, hi: float) -> Callable:
    """Numerical antiderivative of a scalar u0, anchored at x."""
    ys = np.linspace(lo, hi, 4001)
    vals = np.asarray(u0(ys), dtype=float).reshape(len(ys))
    cum = integrate.cumulative_simpson(vals, x=ys, initial=0.0)
    spline = CubicSpline(ys, cum)
    return lambda y: spline(y) - spline(x)


def _scalar(u0) -> Callable:
    fn = u0.u0 if isinstance(u0, InitialData) else u0
    return lambda y: np.asarray(fn(y), dtype=float).reshape(np.shape(y))


def cole_hopf(
    u0,
    x: float,
    T: float,
    antiderivative: Callable | None = None,
    method: str = "quad",
    rel_tol: float = 1e-8,
) -> float:
    """Viscous Burgers ``u_t + u u_x = 1/2 u_xx`` at ``(x, T)``.

    ``u = -d/dx log phi`` with ``phi(., T) = K_T * exp(-U0)``, ``U0' = u0``.
    With ``y = x + sqrt(T) s`` two forms are available:

    * ``"quad"``: adaptive quadrature of ``E[u0(y) w] / E[w]``,
    * ``"hermite"``: Gauss-Hermite on ``E[-s / sqrt(T) w] / E[w]``,

    where ``w = exp(-(U0(y) - U0(x)))`` and ``s`` is standard normal.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    fn = _scalar(u0)
    if T == 0:
        return float(fn(np.array(x)))
    if antiderivative is None and isinstance(u0, InitialData):
        antiderivative = u0.antiderivative
    rt = math.sqrt(T)
    probe = np.linspace(x - 10.0, x + 10.0, 401)
    scale = float(np.max(np.abs(fn(probe))))
    S = 8.0 + 2.0 * rt * scale
    if antiderivative is None:
        dU = _potential(fn, x, x - rt * S, x + rt * S)
    else:
        ax = float(antiderivative(np.array(x)))
        dU = lambda y: antiderivative(y) - ax  # noqa: E731
    expo = lambda s: -0.5 * s * s - dU(x + rt * s)  # noqa: E731
    shift = float(np.max(expo(np.linspace(-S, S, 801))))

    if method == "quad":
        def weight(s):
            return math.exp(float(expo(s)) - shift)

        def integral(fun, floor):
            val, err, *_ = integrate.quad(fun, -S, S, epsabs=floor * 1e-2, epsrel=rel_tol * 1e-2,
                                          limit=400, full_output=1)
            if not err <= rel_tol * abs(val) + floor:
                raise QuadratureError(f"Cole-Hopf quadrature did not converge (err {err:.2e}, value {val:.3e})")
            return val

        den = integral(weight, 1e-300)
        num = integral(lambda s: float(fn(np.array(x + rt * s))) * weight(s), rel_tol * den * max(scale, 1e-300))
        return num / den
    if method == "hermite":
        nodes, weights = hermegauss(200)
        keep = np.abs(nodes) <= S + 4
        s, wq = nodes[keep], weights[keep]
        w = np.exp(expo(s) + 0.5 * s * s - shift) * wq
        return float(np.sum(-s / rt * w) / np.sum(w))
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# heat semigroup
# ---------------------------------------------------------------------------

_HERMITE_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _hermite(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n not in _HERMITE_CACHE:
        nodes, weights = hermegauss(n)
        _HERMITE_CACHE[n] = (nodes, weights / math.sqrt(2 * math.pi))
    return _HERMITE_CACHE[n]


def heat_apply(w, s: float, x: float, n_nodes: int = 121):
    """``(P_s w)(x) = E[w(x + sqrt(s) N(0, 1))]``.

    ``w`` is a callable or a :class:`GridFunction`; grid functions are clamped
    outside their domain, with a warning when the clamped region carries weight.
    """
    if s < 0:
        raise ValueError("s must be non-negative")
    if s == 0:
        return w(np.asarray(x, dtype=float))
    nodes, weights = _hermite(n_nodes)
    pts = x + math.sqrt(s) * nodes
    if isinstance(w, GridFunction):
        live = pts[weights > 1e-16]
        if not w.grid.contains(live):
            warnings.warn(f"heat_apply: quadrature nodes leave [{w.grid.x_min}, {w.grid.x_max}]; clamping",
                          RuntimeWarning, stacklevel=2)
    vals = np.asarray(w(pts), dtype=float)
    return np.tensordot(weights, vals, axes=(0, 0))
