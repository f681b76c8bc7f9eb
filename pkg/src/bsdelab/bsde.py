"""Backward SDEs on the path tree and their Girsanov transform.

The explicit backward scheme is

    Y_N = xi
    Z_k = (Y_{k+1}^+ - Y_{k+1}^-) / (2h)
    Y_k = E[Y_{k+1} | F_k] + g(t_k, E[Y_{k+1} | F_k], Z_k) dt

and the martingale part is ``S_k = Y_k + sum_{j<k} g_j dt``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import StabilityError
from .girsanov import as_drift, check_step_size, compensate, drifted_brownian, tilt_from_drift
from .wiener_tree import (
    AdaptedProcess,
    Measure,
    TerminalVariable,
    _average_children,
    accumulate,
    cond_exp_all,
    martingale_density,
    martingale_residual,
    sibling_difference,
)

# g(t, y, z) -> (n, m) for y, z of shape (n, m)
Driver = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class BsdeSolution:
    Y: AdaptedProcess
    Z: AdaptedProcess
    S: AdaptedProcess
    measure: Measure | None = None
    driver: Driver | None = None
    # y-argument at which g was evaluated on each non-leaf level
    driver_y: AdaptedProcess | None = None

    @property
    def tree(self):
        return self.Y.tree


def solve_martingale_bsde(xi: TerminalVariable) -> BsdeSolution:
    Y = cond_exp_all(xi)
    Z = martingale_density(Y, check=False)
    return BsdeSolution(Y=Y, Z=Z, S=Y)


def solve_driver_bsde(xi: TerminalVariable, g: Driver | None, lipschitz: float = 0.0) -> BsdeSolution:
    if g is None:
        return solve_martingale_bsde(xi)
    tree = xi.tree
    if lipschitz < 0:
        raise ValueError("Lipschitz constant must be non-negative")
    if tree.T * lipschitz >= 1.0:
        raise StabilityError(f"N dt Lip(g) = {tree.T * lipschitz:.3f} >= 1 for the explicit scheme")
    h, dt = tree.h, tree.dt
    Y = [None] * (tree.N + 1)
    Z = [None] * tree.N
    G = [None] * tree.N
    EY = [None] * tree.N
    Y[tree.N] = xi.values
    for k in range(tree.N - 1, -1, -1):
        mean = _average_children(Y[k + 1], None)
        Z[k] = sibling_difference(Y[k + 1]) / (2.0 * h)
        G[k] = np.asarray(g(tree.time(k), mean, Z[k]), dtype=float).reshape(mean.shape)
        EY[k] = mean
        Y[k] = mean + G[k] * dt
    Yp = AdaptedProcess(tree, tuple(Y))
    Gp = AdaptedProcess(tree, tuple(gk * dt for gk in G))
    S = Yp + accumulate(Gp)
    return BsdeSolution(
        Y=Yp,
        Z=AdaptedProcess(tree, tuple(Z)),
        S=S,
        driver=g,
        driver_y=AdaptedProcess(tree, tuple(EY)),
    )


@dataclass(frozen=True, eq=False)
class TransformResult:
    solution: BsdeSolution
    residual: float
    level_residuals: np.ndarray
    q_martingale_residual: float
    fvals: AdaptedProcess


def drift_values(sol: BsdeSolution, f: Callable | AdaptedProcess) -> AdaptedProcess:
    """``f(Y_k, Z_k)`` on levels 0..N-1 (or pass-through of precomputed values)."""
    tree = sol.tree
    if isinstance(f, AdaptedProcess) or not callable(f):
        return as_drift(tree, f)
    levels = [np.asarray(f(sol.Y[k], sol.Z[k]), dtype=float).reshape(-1, 1) for k in range(tree.N)]
    return AdaptedProcess(tree, tuple(levels))


def transform_bsde(sol: BsdeSolution, f: Callable | AdaptedProcess) -> TransformResult:
    """Move ``(Y, S)`` from P to the measure with density E(int f(Y, Z) dB).

    Returns ``(Y, S~ = S - <S, N>)`` under Q together with the largest per-node
    residual of

        Y_{k+1} - Y_k = -g(t_k, y_k, Z~_k) dt + Z~_k f_k dt + (S~_{k+1} - S~_k)

    where ``Z~ = D_{B~}(S~)``.
    """
    tree = sol.tree
    fv = drift_values(sol, f)
    check_step_size(tree, fv)
    Q = tilt_from_drift(fv, tree)
    S_t = compensate(sol.S, fv, check=False)
    B_t = drifted_brownian(tree, fv)
    Z_t = martingale_density(S_t, integrator=B_t, check=False)
    dt = tree.dt
    per_level = np.zeros(tree.N)
    for k in range(tree.N):
        rhs = Z_t[k] * fv[k] * dt
        if sol.driver is not None:
            rhs = rhs - np.asarray(sol.driver(tree.time(k), sol.driver_y[k], Z_t[k])).reshape(Z_t[k].shape) * dt
        dY = sol.Y[k + 1] - np.repeat(sol.Y[k], 2, axis=0)
        dS = S_t[k + 1] - np.repeat(S_t[k], 2, axis=0)
        r = dY - np.repeat(rhs, 2, axis=0) - dS
        per_level[k] = float(np.max(np.abs(r)))
    q_res = martingale_residual(S_t, Q)
    new = BsdeSolution(Y=sol.Y, Z=Z_t, S=S_t, measure=Q, driver=sol.driver, driver_y=sol.driver_y)
    return TransformResult(new, float(per_level.max(initial=0.0)), per_level, q_res, fv)
