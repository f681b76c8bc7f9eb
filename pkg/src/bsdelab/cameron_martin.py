"""Nonlinear Cameron-Martin representation by Picard iteration on the tree.

For fixed ``x`` and horizon ``T`` the terminal variable ``xi`` solves

    xi = u0(x + B_T - sum_k f(Y(xi)_k, Z(xi)_k) dt)

where ``(Y(xi), Z(xi))`` solves the driver-free BSDE with terminal value
``xi`` (or the Lipschitz-driver BSDE when ``g`` is present). Then
``u(x, T) = Y(xi)_0`` and ``u_x(x, T) ~ Z(xi)_0``.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bsde import BsdeSolution, solve_driver_bsde, solve_martingale_bsde
from .coefficients import CoefficientSet
from .errors import ConvergenceError, GradientBoundError, RangeError
from .pde_oracle import Grid, GridFamily, GridFunction
from .wiener_tree import AdaptedProcess, PathTree, TerminalVariable, build_tree, expectation


def contraction_horizon(C_u0: float, C_f: float) -> float:
    """Largest T for which the Picard map is certified to halve distances."""
    if C_u0 < 0 or C_f < 0:
        raise ValueError("Lipschitz constants must be non-negative")
    if C_u0 * C_f == 0:
        return math.inf
    return math.sqrt(1.0 / (8.0 * C_u0**2 * C_f**2) + 1.0) - 1.0


def contraction_factor(T: float, C_u0: float, C_f: float) -> float:
    if T < 0:
        raise ValueError("T must be non-negative")
    return math.sqrt(2.0) * C_u0 * C_f * math.sqrt(T * (T + 2.0))


@dataclass
class FixedPointDiagnostics:
    iterations: int = 0
    distances: list[float] = field(default_factory=list)
    ratios: list[float] = field(default_factory=list)
    final_residual: float = math.nan
    horizon: float = math.inf
    T: float = 0.0
    bound: float = 0.0
    max_abs: list[float] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "distances": self.distances,
            "ratios": self.ratios,
            "final_residual": self.final_residual,
            "horizon": self.horizon,
            "T": self.T,
            "contraction_factor": self.bound,
        }


def _bsde(xi: TerminalVariable, coeffs: CoefficientSet) -> BsdeSolution:
    if coeffs.g is None:
        return solve_martingale_bsde(xi)
    return solve_driver_bsde(xi, coeffs.driver(), coeffs.C_g)


def drift_integral(sol: BsdeSolution, coeffs: CoefficientSet) -> AdaptedProcess:
    """Left-endpoint sums ``D_k = sum_{j<k} f(Y_j, Z_j) dt`` along each path."""
    tree = sol.tree
    acc = [np.zeros(1)]
    for k in range(tree.N):
        fk = np.asarray(coeffs.f(sol.Y[k], sol.Z[k]), dtype=float).reshape(-1)
        acc.append(np.repeat(acc[-1] + fk * tree.dt, 2))
    return AdaptedProcess(tree, tuple(a[:, None] for a in acc))


def _apply(xi: TerminalVariable, coeffs: CoefficientSet, x: float) -> tuple[TerminalVariable, BsdeSolution, AdaptedProcess]:
    sol = _bsde(xi, coeffs)
    D = drift_integral(sol, coeffs)
    tree = xi.tree
    out = np.asarray(coeffs.u0(x + tree.B[-1] - D[tree.N][:, 0]), dtype=float).reshape(tree.n_leaves, -1)
    return TerminalVariable(tree, out), sol, D


def phi(xi: TerminalVariable, coeffs: CoefficientSet, x: float, tree: PathTree | None = None) -> TerminalVariable:
    if tree is not None and tree is not xi.tree:
        raise ValueError("xi does not live on the given tree")
    return _apply(xi, coeffs, x)[0]


def initial_iterate(coeffs: CoefficientSet, x: float, tree: PathTree) -> TerminalVariable:
    """``u0(x + B_T)``: the solution when f = 0."""
    return TerminalVariable(tree, np.asarray(coeffs.u0(x + tree.B[-1])).reshape(tree.n_leaves, -1))


def picard_solve(
    coeffs: CoefficientSet,
    x: float,
    tree: PathTree,
    tol: float = 1e-10,
    max_iter: int = 50,
    xi0: TerminalVariable | None = None,
) -> tuple[TerminalVariable, FixedPointDiagnostics]:
    if tol <= 0:
        raise ValueError("tol must be positive")
    tau = contraction_horizon(coeffs.C_u0, coeffs.C_f)
    diag = FixedPointDiagnostics(horizon=tau, T=tree.T,
                                 bound=contraction_factor(tree.T, coeffs.C_u0, coeffs.C_f))
    if tree.T > tau:
        warnings.warn(f"T={tree.T:.4g} exceeds the contraction horizon {tau:.4g}; "
                      "convergence is not guaranteed", RuntimeWarning, stacklevel=2)
    xi = initial_iterate(coeffs, x, tree) if xi0 is None else xi0
    diag.max_abs.append(float(np.max(np.abs(xi.values))))
    for it in range(1, max_iter + 1):
        new = phi(xi, coeffs, x)
        dist = (new - xi).l2_norm()
        diag.iterations = it
        diag.distances.append(dist)
        diag.max_abs.append(float(np.max(np.abs(new.values))))
        if len(diag.distances) > 1 and diag.distances[-2] > 1e-14:
            diag.ratios.append(dist / diag.distances[-2])
        xi = new
        if dist <= tol:
            diag.final_residual = (phi(xi, coeffs, x) - xi).l2_norm()
            return xi, diag
    raise ConvergenceError(
        f"Picard iteration did not reach tol={tol:g} in {max_iter} iterations "
        f"(last distance {diag.distances[-1]:.3e})",
        diag.distances, diag.ratios,
    )


@dataclass
class PointSolution:
    x: float
    u: np.ndarray
    du: np.ndarray
    xi: TerminalVariable
    diagnostics: FixedPointDiagnostics


def solve_point(coeffs: CoefficientSet, x: float, tree: PathTree, tol: float = 1e-10,
                max_iter: int = 50) -> PointSolution:
    xi, diag = picard_solve(coeffs, x, tree, tol, max_iter)
    sol = _bsde(xi, coeffs)
    return PointSolution(x, sol.Y[0][0].copy(), sol.Z[0][0].copy(), xi, diag)


def solve_u(
    coeffs: CoefficientSet,
    grid: Grid,
    T: float,
    N: int,
    tol: float = 1e-10,
    max_iter: int = 50,
    workers: int = 1,
    return_points: bool = False,
):
    """``u(., T)`` and ``u_x(., T)`` on ``grid`` from one fixed point per grid node."""
    tree = build_tree(N, T)
    xs = grid.points
    if T > contraction_horizon(coeffs.C_u0, coeffs.C_f):
        warnings.warn(f"solve_u beyond the contraction horizon (T={T:.4g}); use chain_solve "
                      "for a certified construction", RuntimeWarning, stacklevel=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                points = list(pool.map(lambda x: solve_point(coeffs, float(x), tree, tol, max_iter), xs))
        else:
            points = [solve_point(coeffs, float(x), tree, tol, max_iter) for x in xs]
    gf = GridFunction(grid, np.array([p.u for p in points]), np.array([p.du for p in points]))
    return (gf, points) if return_points else gf


def _interpolant(gf: GridFunction):
    return lambda x: gf(np.asarray(x, dtype=float))


def chain_solve(
    coeffs: CoefficientSet,
    grid: Grid,
    T_total: float,
    N_per_interval: int,
    C_u: float,
    tol: float = 1e-10,
    max_iter: int = 50,
    workers: int = 1,
    return_steps: bool = False,
):
    """March ``u`` forward over intervals short enough for the Picard map to contract.

    Each interval restarts from the previous grid function (piecewise linear,
    clamped at the ends) as initial data with Lipschitz constant ``C_u``.
    """
    if C_u <= 0:
        raise ValueError("C_u must be positive")
    span = min(contraction_horizon(coeffs.C_u0, coeffs.C_f), contraction_horizon(C_u, coeffs.C_f))
    n_int = 1 if math.isinf(span) else max(1, int(math.ceil(T_total / span - 1e-12)))
    length = T_total / n_int
    current = coeffs
    steps = []
    gf = None
    for j in range(n_int):
        gf = solve_u(current, grid, length, N_per_interval, tol, max_iter, workers)
        steps.append(gf)
        slope = gf.lipschitz()
        if slope > 2.0 * C_u:
            raise GradientBoundError(f"interval {j + 1}: gradient {slope:.4g} exceeds 2 C_u = {2 * C_u:.4g}")
        current = coeffs.with_initial(_interpolant(gf), C_u, sup=coeffs.u0_sup, name=f"chain[{j + 1}]")
    return (gf, steps) if return_steps else gf


@dataclass
class RepresentationError:
    value_error: float
    gradient_error: float
    value_scale: float
    gradient_scale: float

    @property
    def value_relative(self) -> float:
        return self.value_error / max(self.value_scale, 1e-300)

    @property
    def gradient_relative(self) -> float:
        return self.gradient_error / max(self.gradient_scale, 1e-300)


def check_representation(
    xi_star: TerminalVariable,
    coeffs: CoefficientSet,
    x: float,
    u_family: GridFamily,
    levels: range | None = None,
) -> RepresentationError:
    """Compare ``Y_k`` with ``u(x + B~_k, T - t_k)`` and ``Z_k`` with ``u_x`` there."""
    tree = xi_star.tree
    sol = _bsde(xi_star, coeffs)
    D = drift_integral(sol, coeffs)
    grid = u_family.grid
    levels = range(tree.N + 1) if levels is None else levels
    v_err = g_err = 0.0
    v_scale = g_scale = 0.0
    for k in levels:
        pos = x + tree.B[k] - D[k][:, 0]
        if not grid.contains(pos):
            raise RangeError(f"level {k}: positions [{pos.min():.3f}, {pos.max():.3f}] leave the grid "
                             f"[{grid.x_min}, {grid.x_max}]; extend it")
        frame = u_family.frame_at(tree.T - tree.time(k))
        u = frame(pos)
        v_err = max(v_err, float(np.max(np.abs(u - sol.Y[k]))))
        v_scale = max(v_scale, float(np.max(np.abs(u))))
        if k < tree.N:
            du = frame.grad_at(pos)
            g_err = max(g_err, float(np.max(np.abs(du - sol.Z[k]))))
            g_scale = max(g_scale, float(np.max(np.abs(du))))
    return RepresentationError(v_err, g_err, v_scale, g_scale)


def measure_consistency(xi_star: TerminalVariable, coeffs: CoefficientSet, x: float) -> float:
    """|E^Q[u0(x + B~_T)] - E^P[R_T xi*]| with Q built from the fixed point."""
    from .girsanov import exponential_martingale, tilt_measure

    tree = xi_star.tree
    sol = _bsde(xi_star, coeffs)
    fv = AdaptedProcess(tree, tuple(np.asarray(coeffs.f(sol.Y[k], sol.Z[k])).reshape(-1, 1)
                                    for k in range(tree.N)))
    dens = exponential_martingale(fv)
    Q = tilt_measure(dens)
    D = drift_integral(sol, coeffs)
    terminal = TerminalVariable(tree, coeffs.u0(x + tree.B[-1] - D[tree.N][:, 0]))
    lhs = expectation(terminal, Q)
    rhs = expectation(TerminalVariable(tree, dens.R[tree.N] * xi_star.values))
    return float(np.max(np.abs(lhs - rhs)))
