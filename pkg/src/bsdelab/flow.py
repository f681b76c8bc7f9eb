"""Nonlinear stochastic flow with tracked spatial derivatives.

A :class:`FlowState` holds, for every tree level ``t`` and grid point ``x``,
the random field ``xi_t(x)`` together with ``d/dx xi_t`` and ``d2/dx2 xi_t``
(arrays of shape ``(2**t, G, m)``). The map

    Phi(xi)_t = u0(X_t),   X_t = x + B_t - sum_{s<t} f(E[xi_t | F_s]) dt

is applied with derivatives propagated through the chain rule:

    dX_t  = 1 - sum_{s<t} f'(Y_s) . E[dxi_t | F_s] dt
    d2X_t = -sum_{s<t} [f''(Y_s)(E[dxi_t | F_s], E[dxi_t | F_s]) + f'(Y_s) . E[d2xi_t | F_s]] dt

so the derivative fields are exact derivatives of the discrete map, not grid
differences. Only ``d = 1`` and ``f = f(y)`` are supported.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .coefficients import CoefficientSet, sampled_flow_constants
from .errors import CertificationError, ConvergenceError, KBoundError, RangeError, ScopeError, StepSizeError
from .pde_oracle import Grid, GridFamily
from .wiener_tree import PathTree, build_tree


@dataclass(frozen=True)
class FlowCoefficients:
    """u0 with its first two derivatives and f = f(y) with its first two.

    ``C0`` bounds |u0|, |u0'|, |u0''|; ``C1`` bounds |f'|, |f''|, |f'''|.
    """

    name: str
    m: int
    u0: Callable
    du0: Callable
    d2u0: Callable
    f: Callable
    df: Callable
    d2f: Callable
    C0: float
    C1: float

    @classmethod
    def from_coefficients(cls, coeffs: CoefficientSet, C0: float | None = None,
                          C1: float | None = None) -> "FlowCoefficients":
        if coeffs.f_uses_z or not coeffs.g_zero:
            raise ScopeError("the flow construction needs f = f(y) and g = 0")
        init, conv = coeffs.initial, coeffs.convection
        s0, s1 = sampled_flow_constants(coeffs)
        c0 = s0 if C0 is None else float(C0)
        declared = conv.flow_bound if C1 is None else C1
        c1 = s1 if declared is None else float(declared)
        if s0 > c0 * (1 + 1e-9) or s1 > c1 * (1 + 1e-9):
            raise CertificationError(f"sampled (C0, C1) = ({s0:.6g}, {s1:.6g}) exceed ({c0:.6g}, {c1:.6g})")
        f = conv.f
        return cls(coeffs.name, coeffs.m, init.u0, init.du0, init.d2u0,
                   lambda y: f(y, None), conv.df, conv.d2f, c0, c1)


@dataclass(eq=False)
class FlowState:
    grid: Grid
    tree: PathTree
    xi: tuple
    dxi: tuple
    d2xi: tuple

    def __post_init__(self):
        for name in ("xi", "dxi", "d2xi"):
            levels = getattr(self, name)
            if len(levels) != self.tree.N + 1:
                raise ValueError(f"{name}: need {self.tree.N + 1} time levels")
            for t, a in enumerate(levels):
                if a.shape[:2] != (2**t, self.grid.G):
                    raise ValueError(f"{name}[{t}] has shape {a.shape}, expected (2**{t}, {self.grid.G}, m)")

    @property
    def m(self) -> int:
        return self.xi[0].shape[-1]

    def __sub__(self, other: "FlowState") -> "FlowState":
        if other.tree is not self.tree or other.grid != self.grid:
            raise ValueError("states live on different trees or grids")
        return FlowState(self.grid, self.tree,
                         tuple(a - b for a, b in zip(self.xi, other.xi)),
                         tuple(a - b for a, b in zip(self.dxi, other.dxi)),
                         tuple(a - b for a, b in zip(self.d2xi, other.d2xi)))

    def mean(self, j: int, t: int) -> np.ndarray:
        """E^P of the j-th derivative field at level t, shape (G, m)."""
        return np.mean((self.xi, self.dxi, self.d2xi)[j][t], axis=0)

    @classmethod
    def constant(cls, grid: Grid, tree: PathTree, c) -> "FlowState":
        c = np.atleast_1d(np.asarray(c, dtype=float))
        xi = tuple(np.broadcast_to(c, (2**t, grid.G, c.size)).copy() for t in range(tree.N + 1))
        zeros = tuple(np.zeros_like(a) for a in xi)
        return cls(grid, tree, xi, zeros, tuple(z.copy() for z in zeros))


def free_state(fc: FlowCoefficients, grid: Grid, tree: PathTree) -> FlowState:
    """The f = 0 flow: u0(x + B_t) and its derivatives."""
    x = grid.points[None, :]
    pos = [x + tree.B[t][:, None] for t in range(tree.N + 1)]
    return FlowState(grid, tree, tuple(fc.u0(p) for p in pos), tuple(fc.du0(p) for p in pos),
                     tuple(fc.d2u0(p) for p in pos))


def _halve(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a[0::2] + a[1::2])


def _level_map(fc: FlowCoefficients, tree: PathTree, x: np.ndarray, t: int, xi, dxi, d2xi):
    """(X, dX, d2X) at level t for the level-t fields."""
    G = x.size
    if t == 0:
        return np.broadcast_to(x, (1, G)).copy(), np.ones((1, G)), np.zeros((1, G))
    Y, dY, d2Y = [None] * t, [None] * t, [None] * t
    cur = (xi, dxi, d2xi)
    for s in range(t - 1, -1, -1):
        cur = tuple(_halve(a) for a in cur)
        Y[s], dY[s], d2Y[s] = cur
    dt, h = tree.dt, tree.h
    D, DX, D2X = np.zeros((1, G)), np.zeros((1, G)), np.zeros((1, G))
    for s in range(t):
        fy = np.asarray(fc.f(Y[s]), dtype=float)
        if np.max(np.abs(fy)) * h >= 1.0:
            raise StepSizeError(f"max |f| h = {np.max(np.abs(fy)) * h:.4f} >= 1 at level {s}")
        gy = fc.df(Y[s])
        Hy = fc.d2f(Y[s])
        D = D + fy * dt
        DX = DX + np.sum(gy * dY[s], axis=-1) * dt
        D2X = D2X + (np.einsum("...ij,...i,...j->...", Hy, dY[s], dY[s]) + np.sum(gy * d2Y[s], axis=-1)) * dt
        D, DX, D2X = (np.repeat(a, 2, axis=0) for a in (D, DX, D2X))
    X = x[None, :] + tree.B[t][:, None] - D
    return X, 1.0 - DX, -D2X


def flow_map(fc: FlowCoefficients, state: FlowState, t: int):
    """Forward positions X_t and their x-derivatives for one level."""
    return _level_map(fc, state.tree, state.grid.points, t, state.xi[t], state.dxi[t], state.d2xi[t])


def phi_flow(state: FlowState, fc: FlowCoefficients) -> FlowState:
    xi, dxi, d2xi = [], [], []
    for t in range(state.tree.N + 1):
        X, dX, d2X = flow_map(fc, state, t)
        g1, g2 = fc.du0(X), fc.d2u0(X)
        xi.append(fc.u0(X))
        dxi.append(g1 * dX[..., None])
        d2xi.append(g2 * (dX**2)[..., None] + g1 * d2X[..., None])
    return FlowState(state.grid, state.tree, tuple(xi), tuple(dxi), tuple(d2xi))


def h_norm(state: FlowState) -> float:
    """max over levels and nodes of sum_j sup_x |d^j xi_t(x)|."""
    best = 0.0
    for levels in zip(state.xi, state.dxi, state.d2xi):
        per_node = sum(np.max(np.linalg.norm(a, axis=-1), axis=1) for a in levels)
        best = max(best, float(np.max(per_node)))
    return best


def flow_horizon(C0: float, C1: float, d: int = 1) -> tuple[float, float]:
    """(T_max, K) for the invariant ball of radius K = 2 C0 (1+d)^2."""
    if C0 < 0 or C1 < 0:
        raise ValueError("C0 and C1 must be non-negative")
    K = 2.0 * C0 * (1 + d) ** 2
    if C0 * C1 == 0:
        return math.inf, K
    T = 1.0 / (2.0 * math.sqrt(C0 * C1) * math.sqrt(d + 0.5 + C0 * (1 + C1) * (1 + d) ** 2))
    return min(T, 1.0), K


def boundedness_bound(C0: float, C1: float, T: float, norm: float, d: int = 1) -> float:
    """C0 (1+d)^2 + C0 C1 T {(2d+1) + (1 + C1 T) norm} norm."""
    return C0 * (1 + d) ** 2 + C0 * C1 * T * ((2 * d + 1) + (1 + C1 * T) * norm) * norm


@dataclass
class FlowDiagnostics:
    iterations: int = 0
    distances: list[float] = field(default_factory=list)
    ratios: list[float] = field(default_factory=list)
    norms: list[float] = field(default_factory=list)
    T: float = 0.0
    T_max: float = math.inf
    K: float = 0.0

    def as_dict(self) -> dict:
        return {"iterations": self.iterations, "distances": self.distances, "ratios": self.ratios,
                "norms": self.norms, "T": self.T, "T_max": self.T_max, "K": self.K}

    def to_json(self) -> str:
        return json.dumps(self.as_dict())


def picard_flow(fc: FlowCoefficients, grid: Grid, T: float, N: int, tol: float = 1e-10,
                max_iter: int = 50) -> tuple[FlowState, FlowDiagnostics]:
    tree = build_tree(N, T)
    T_max, K = flow_horizon(fc.C0, fc.C1)
    diag = FlowDiagnostics(T=T, T_max=T_max, K=K)
    inside = T <= T_max
    if not inside:
        warnings.warn(f"T={T:.4g} exceeds the flow horizon {T_max:.4g}; the K-ball is not certified",
                      RuntimeWarning, stacklevel=2)
    state = free_state(fc, grid, tree)
    diag.norms.append(h_norm(state))
    for it in range(1, max_iter + 1):
        new = phi_flow(state, fc)
        norm = h_norm(new)
        if inside and norm > K:
            raise KBoundError(f"iterate {it} has norm {norm:.6g} > K = {K:.6g} with T <= T_max")
        dist = h_norm(new - state)
        diag.iterations = it
        diag.norms.append(norm)
        diag.distances.append(dist)
        if len(diag.distances) > 1 and diag.distances[-2] > 1e-14:
            diag.ratios.append(dist / diag.distances[-2])
        state = new
        if dist <= tol:
            return state, diag
    raise ConvergenceError(f"flow iteration did not reach tol={tol:g} in {max_iter} iterations",
                           diag.distances, diag.ratios)


def bismut_check(xi_star: FlowState, u_oracle: GridFamily, levels=None) -> dict[int, float]:
    """Sup relative errors of E[d^j xi_t(x)] against the oracle's d^j u(x, t_k), j = 0, 1, 2.

    Each error is normalised by the sup of the oracle quantity over the same
    (t, x) set.
    """
    tree, grid = xi_star.tree, xi_star.grid
    og = u_oracle.grid
    if not og.contains(grid.points):
        raise RangeError("oracle grid does not cover the flow grid")
    levels = range(tree.N + 1) if levels is None else levels
    err = np.zeros(3)
    scale = np.zeros(3)
    x = grid.points
    for t in levels:
        frame = u_oracle.frame_at(tree.time(t)).with_gradient()
        ref = (frame(x), frame.grad_at(x), _interp_table(og, frame.second_derivative(), x))
        for j in range(3):
            err[j] = max(err[j], float(np.max(np.abs(xi_star.mean(j, t) - ref[j]))))
            scale[j] = max(scale[j], float(np.max(np.abs(ref[j]))))
    return {j: float(err[j] / scale[j]) if scale[j] > 0 else float(err[j]) for j in range(3)}


def _interp_table(grid: Grid, table: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.stack([np.interp(x, grid.points, table[:, i]) for i in range(table.shape[1])], axis=-1)


def random_state(grid: Grid, tree: PathTree, m: int, rng: np.random.Generator, amplitude: float = 1.0,
                 frequency: float = 2.0) -> FlowState:
    """Adapted field c sin(k x + phase) with random (c, k, phase) per level, node and component.

    The derivative layers are the exact x-derivatives of the value layer.
    """
    x = grid.points[None, :, None]
    xi, dxi, d2xi = [], [], []
    for t in range(tree.N + 1):
        shape = (2**t, 1, m)
        c = rng.uniform(-amplitude, amplitude, shape)
        k = rng.uniform(0.0, frequency, shape)
        ph = rng.uniform(0.0, 2 * np.pi, shape)
        arg = k * x + ph
        xi.append(c * np.sin(arg))
        dxi.append(c * k * np.cos(arg))
        d2xi.append(-c * k**2 * np.sin(arg))
    return FlowState(grid, tree, tuple(xi), tuple(dxi), tuple(d2xi))


def check_boundedness(fc: FlowCoefficients, state: FlowState) -> tuple[float, float]:
    """(||Phi(state)||, bound) for the one-step boundedness estimate."""
    out = phi_flow(state, fc)
    return h_norm(out), boundedness_bound(fc.C0, fc.C1, state.tree.T, h_norm(state))
