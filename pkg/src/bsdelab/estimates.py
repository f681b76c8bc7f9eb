"""Gradient estimates for convection-only systems, both sides evaluated numerically.

The left-hand sides come from the finite-difference oracle (heat semigroup
applied to ``|u_x|^p`` along the backward time axis); the right-hand sides come
from the fixed point on the tree (predictable brackets of ``Y`` and moments of
the exponential density ``R`` driven by ``f(Y)``).

Scope: ``f`` depends on ``y`` only and ``g = 0``.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .cameron_martin import picard_solve
from .coefficients import CoefficientSet
from .errors import ScopeError
from .girsanov import exponential_martingale
from .pde_oracle import Grid, GridFamily, GridFunction, heat_apply, solve_fd_family
from .wiener_tree import AdaptedProcess, bracket, build_tree, cond_exp_all

BALL_SAMPLES = 4096
DEFAULT_SLACK = 0.10


@dataclass
class EstimateReport:
    name: str
    lhs: float
    rhs: float
    slack: float
    passed: bool = field(init=False)
    component: int | None = None
    inputs: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lhs = float(self.lhs)
        self.rhs = float(self.rhs)
        self.passed = bool(self.lhs <= self.rhs * (1.0 + self.slack))

    def as_dict(self) -> dict:
        out = asdict(self)
        out["pass"] = out.pop("passed")
        return out

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), default=float)


CSV_COLUMNS = ["name", "component", "lhs", "rhs", "slack", "pass", "x", "T", "t", "p", "coefficients", "N"]


def write_reports_csv(reports: Sequence[EstimateReport], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in reports:
            inp = r.inputs
            w.writerow([r.name, "" if r.component is None else r.component, repr(r.lhs), repr(r.rhs),
                        r.slack, r.passed, inp.get("x", ""), inp.get("T", ""), inp.get("t", ""),
                        inp.get("p", ""), inp.get("coefficients", ""), inp.get("N", "")])


def _check_scope(coeffs: CoefficientSet) -> None:
    if coeffs.f_uses_z:
        raise ScopeError("gradient estimates need f = f(y); this convection depends on z")
    if not coeffs.g_zero:
        raise ScopeError("gradient estimates need g = 0")


def _check_p(p: float) -> None:
    if not 1.0 <= p < 2.0:
        raise ValueError(f"p must lie in [1, 2), got {p}")


def moment_exponent(p: float) -> float:
    """``q = 2 / (2 - p)``: the power of R appearing in the Hoelder split."""
    return 2.0 / (2.0 - p)


def max_f_squared(coeffs: CoefficientSet, radius: float | None = None, n: int = BALL_SAMPLES,
                  chunk: int = 1 << 20) -> float:
    """max |f(y)|^2 over the Euclidean ball |y| <= radius (default |u0|_inf).

    Box samples outside the ball are pulled radially onto the sphere, so the
    boundary is covered as densely as the interior.
    """
    m = coeffs.m
    if m > 2:
        raise ValueError("dense ball sampling is limited to m <= 2")
    r = coeffs.u0_sup if radius is None else float(radius)
    axis = np.linspace(-r, r, n)
    best = 0.0
    if m == 1:
        y = axis[:, None]
        return float(np.max(np.asarray(coeffs.f(y, np.zeros_like(y))) ** 2))
    for start in range(0, n * n, chunk):
        idx = np.arange(start, min(start + chunk, n * n))
        y = np.stack([axis[idx // n], axis[idx % n]], axis=-1)
        norm = np.linalg.norm(y, axis=-1, keepdims=True)
        y = y * np.minimum(1.0, r / np.maximum(norm, 1e-300))
        best = max(best, float(np.max(np.asarray(coeffs.f(y, np.zeros_like(y))) ** 2)))
    return best


def binomial_moment(c: float, h: float, q: float, k: int) -> float:
    """E[R_k^q] on the tree for constant f = c: ``[((1+ch)^q + (1-ch)^q) / 2]^k``."""
    return (0.5 * ((1.0 + c * h) ** q + (1.0 - c * h) ** q)) ** k


class EstimateContext:
    """Shared work for one ``(coeffs, x, T)``: the tree fixed point and FD snapshots."""

    def __init__(self, coeffs: CoefficientSet, x: float, T: float, N: int = 12, dx: float = 0.02,
                 n_quad: int = 200, tol: float = 1e-12, max_iter: int = 100):
        _check_scope(coeffs)
        self.coeffs, self.x, self.T, self.N = coeffs, float(x), float(T), int(N)
        self.dx, self.n_quad = float(dx), int(n_quad)
        self.tree = build_tree(N, T)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            self.xi, self.diagnostics = picard_solve(coeffs, x, self.tree, tol=tol, max_iter=max_iter)
        self.beyond_horizon = any(issubclass(w.category, RuntimeWarning) for w in caught)
        self.Y = cond_exp_all(self.xi)
        self.grid = Grid.padded(x, x, T, dx, scale=4.0)
        self._brackets: dict[int, AdaptedProcess] = {}
        self._families: dict[float, GridFamily] = {}
        self._density = None

    def level(self, t: float) -> int:
        k = int(round(t / self.tree.dt))
        if abs(k * self.tree.dt - t) > 1e-9 * max(1.0, self.T) or not 0 <= k <= self.N:
            raise ValueError(f"t={t} is not a tree time (dt={self.tree.dt})")
        return k

    def expected_bracket(self, i: int, k: int) -> float:
        if i not in self._brackets:
            Yi = self.Y.component(i)
            self._brackets[i] = bracket(Yi, Yi)
        return float(np.mean(self._brackets[i][k]))

    @property
    def density(self):
        if self._density is None:
            fv = [np.asarray(self.coeffs.f(self.Y[k], None), dtype=float).reshape(-1, 1)
                  for k in range(self.N)]
            self._density = exponential_martingale(AdaptedProcess(self.tree, tuple(fv)))
        return self._density

    def density_moment(self, q: float, k: int) -> float:
        return float(np.mean(self.density.R[k] ** q))

    def density_moment_integral(self, q: float, k: int) -> float:
        """Integral over [0, t_k] of E R_s^q; R is constant between tree times."""
        return sum(self.density_moment(q, j) for j in range(k)) * self.tree.dt

    def quadrature_nodes(self, t: float) -> np.ndarray:
        return np.arange(self.n_quad) * (t / self.n_quad)

    def family(self, t: float) -> GridFamily:
        key = round(t, 14)
        if key not in self._families:
            times = sorted({self.T} | {self.T - s for s in self.quadrature_nodes(t)})
            self._families[key] = solve_fd_family(self.coeffs, self.grid, times)
        return self._families[key]

    def gradient(self) -> np.ndarray:
        return self.family(0.0).frame_at(self.T).grad_at(self.x)

    def heat_gradient_integral(self, t: float, p: float) -> np.ndarray:
        """Left-endpoint quadrature of s -> P_s |u_x|^p (x, T - s) over [0, t]."""
        fam = self.family(t)
        total = np.zeros(self.coeffs.m)
        ds = t / self.n_quad
        for s in self.quadrature_nodes(t):
            frame = fam.frame_at(self.T - s).with_gradient()
            w = GridFunction(frame.grid, np.abs(frame.gradient) ** p)
            total += np.asarray(heat_apply(w, s, self.x)).reshape(-1) * ds
        return total

    def inputs(self, **extra) -> dict:
        out = {"x": self.x, "T": self.T, "N": self.N, "coefficients": self.coeffs.name,
               "grid": {"x_min": self.grid.x_min, "x_max": self.grid.x_max, "G": self.grid.G},
               "picard_iterations": self.diagnostics.iterations, "beyond_horizon": self.beyond_horizon}
        out.update(extra)
        return out


def _context(coeffs, x, T, N, ctx) -> EstimateContext:
    if ctx is not None:
        if ctx.coeffs is not coeffs or ctx.x != float(x) or ctx.T != float(T) or ctx.N != int(N):
            raise ValueError("context was built for different (coeffs, x, T, N)")
        return ctx
    return EstimateContext(coeffs, x, T, N)


def estimate_one(coeffs: CoefficientSet, x: float, T: float, t: float, p: float, *, N: int = 12,
                 slack: float = DEFAULT_SLACK, ctx: EstimateContext | None = None) -> list[EstimateReport]:
    """Hoelder bound on the heat-averaged p-th power of the gradient, one report per component."""
    _check_p(p)
    _check_scope(coeffs)
    if not 0 < t <= T:
        raise ValueError("need 0 < t <= T")
    ctx = _context(coeffs, x, T, N, ctx)
    k = ctx.level(t)
    q = moment_exponent(p)
    lhs = ctx.heat_gradient_integral(t, p)
    r_int = ctx.density_moment_integral(q, k)
    d = 1
    reports = []
    for i in range(coeffs.m):
        br = ctx.expected_bracket(i, k)
        rhs = d ** (1 - p / 2) * br ** (p / 2) * r_int ** (1 - p / 2)
        reports.append(EstimateReport("estimate_one", lhs[i], rhs, slack, i,
                                      ctx.inputs(t=t, p=p, expected_bracket=br, moment_integral=r_int)))
    return reports


def estimate_two(coeffs: CoefficientSet, x: float, T: float, *, N: int = 12, slack: float = DEFAULT_SLACK,
                 ctx: EstimateContext | None = None) -> list[EstimateReport]:
    """|u_x|^2 (x, T) against (1/t) E<Y>_t at the first tree time t = dt."""
    _check_scope(coeffs)
    ctx = _context(coeffs, x, T, N, ctx)
    lhs = np.asarray(ctx.gradient()).reshape(-1) ** 2
    dt = ctx.tree.dt
    reports = []
    for i in range(coeffs.m):
        by_time = {f"{j}dt": ctx.expected_bracket(i, j) / (j * dt) for j in (1, 2, 4) if j <= ctx.N}
        reports.append(EstimateReport("estimate_two", lhs[i], by_time["1dt"], slack, i,
                                      ctx.inputs(t=dt, rhs_by_time=by_time)))
    return reports


def density_moment_bound(coeffs: CoefficientSet, t: float, p: float, *, x: float = 0.0, T: float | None = None,
                         N: int = 12, slack: float = DEFAULT_SLACK,
                         ctx: EstimateContext | None = None) -> EstimateReport:
    """E[R_t^q] on the tree against exp(p / (2-p)^2 * t * max |f|^2), q = 2 / (2-p)."""
    _check_p(p)
    _check_scope(coeffs)
    T = t if T is None else T
    ctx = _context(coeffs, x, T, N, ctx)
    k = ctx.level(t)
    q = moment_exponent(p)
    fmax = max_f_squared(coeffs)
    lhs = ctx.density_moment(q, k)
    rhs = math.exp(p / (2 - p) ** 2 * t * fmax)
    return EstimateReport("density_moment_bound", lhs, rhs, slack, None,
                          ctx.inputs(t=t, p=p, max_f_squared=fmax))


def gradient_corollary(coeffs: CoefficientSet, x: float, T: float, t: float, p: float, *, N: int = 12,
                       slack: float = DEFAULT_SLACK, ctx: EstimateContext | None = None) -> list[EstimateReport]:
    """Closed-form bound d^(1-p/2) |u0^i|^p exp(p / (2(2-p)) t max |f|^2)."""
    _check_p(p)
    _check_scope(coeffs)
    if not 0 < t <= T:
        raise ValueError("need 0 < t <= T")
    ctx = _context(coeffs, x, T, N, ctx)
    lhs = ctx.heat_gradient_integral(t, p)
    fmax = max_f_squared(coeffs)
    growth = math.exp(p / (2 * (2 - p)) * t * fmax)
    d = 1
    return [EstimateReport("gradient_corollary", lhs[i], d ** (1 - p / 2) * sup**p * growth, slack, i,
                           ctx.inputs(t=t, p=p, max_f_squared=fmax))
            for i, sup in enumerate(coeffs.initial.component_sup)]


def run_suite(coeffs: CoefficientSet, x: float, T: float, t: float, ps: Sequence[float], *, N: int = 12,
              slack: float = DEFAULT_SLACK) -> list[EstimateReport]:
    """All four estimates for each p, sharing one context."""
    ctx = EstimateContext(coeffs, x, T, N)
    reports = estimate_two(coeffs, x, T, N=N, slack=slack, ctx=ctx)
    for p in ps:
        reports += estimate_one(coeffs, x, T, t, p, N=N, slack=slack, ctx=ctx)
        reports.append(density_moment_bound(coeffs, t, p, x=x, T=T, N=N, slack=slack, ctx=ctx))
        reports += gradient_corollary(coeffs, x, T, t, p, N=N, slack=slack, ctx=ctx)
    return reports
