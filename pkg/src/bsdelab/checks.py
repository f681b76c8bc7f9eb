"""Randomised suites for the exact tree identities.

Each suite draws instances from a seeded generator and returns the largest
residual seen, so callers can compare against a tolerance.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .bsde import solve_driver_bsde, solve_martingale_bsde, transform_bsde
from .cameron_martin import picard_solve
from .coefficients import CONVECTION, make_coefficients
from .girsanov import (
    check_density_invariance,
    compensate,
    exponential_martingale,
    tilt_measure,
)
from .wiener_tree import (
    AdaptedProcess,
    PathTree,
    TerminalVariable,
    build_tree,
    cond_exp,
    cond_exp_all,
    martingale_residual,
)


def random_martingale(tree: PathTree, m: int, rng: np.random.Generator) -> AdaptedProcess:
    return cond_exp_all(TerminalVariable(tree, rng.normal(size=(tree.n_leaves, m))))


def random_drift(tree: PathTree, rng: np.random.Generator, cap: float = 3.0) -> AdaptedProcess:
    """Predictable scalar drift with |f| h <= 0.9."""
    bound = min(cap, 0.9 / tree.h)
    return AdaptedProcess(tree, tuple(rng.uniform(-bound, bound, (2**k, 1)) for k in range(tree.N)))


def random_driver(rng: np.random.Generator, m: int):
    """g(t, y, z) = a tanh(y) + b z + c sin(t) with Lipschitz constant |a| + |b| < 0.8."""
    a, b = rng.uniform(-0.4, 0.4, 2)
    c = rng.uniform(-1, 1, m)
    return (lambda t, y, z: a * np.tanh(y) + b * z + c * math.sin(t)), abs(a) + abs(b)


def random_convection(rng: np.random.Generator, tree: PathTree):
    """f(y, z) = a tanh(y_0) + b sin(z_0) with |a| + |b| <= 0.9 / h."""
    total = min(3.0, 0.9 / tree.h)
    w = rng.uniform(0, 1)
    a, b = rng.choice([-1, 1], 2) * total * np.array([w, 1 - w])
    return lambda y, z: a * np.tanh(y[..., 0]) + b * np.sin(z[..., 0])


def _random_tree(rng: np.random.Generator, N_max: int) -> PathTree:
    return build_tree(int(rng.integers(1, N_max + 1)), float(rng.uniform(0.05, 1.0)))


@dataclass
class SuiteResult:
    instances: int
    max_residual: float
    details: dict

    def passed(self, tol: float) -> bool:
        return self.max_residual <= tol

    def as_dict(self, tol: float) -> dict:
        return {"instances": self.instances, "max_residual": self.max_residual,
                "tolerance": tol, "pass": self.passed(tol), **self.details}


def girsanov_suite(instances: int = 100, N_max: int = 12, seed: int = 0) -> SuiteResult:
    """Density invariance, Q-martingale property of the compensated process, E[R] = 1, Bayes rule."""
    rng = np.random.default_rng(seed)
    worst = dict(density_invariance=0.0, compensated_q_martingale=0.0, normalization=0.0, bayes=0.0)
    for _ in range(instances):
        tree = _random_tree(rng, N_max)
        X = random_martingale(tree, int(rng.integers(1, 3)), rng)
        f = random_drift(tree, rng)
        worst["density_invariance"] = max(worst["density_invariance"], check_density_invariance(X, f))
        dens = exponential_martingale(f)
        Q = tilt_measure(dens)
        worst["compensated_q_martingale"] = max(worst["compensated_q_martingale"],
                                               martingale_residual(compensate(X, f), Q))
        worst["normalization"] = max(worst["normalization"],
                                     max(abs(float(np.mean(R)) - 1.0) for R in dens.R.values))
        xi = X.terminal()
        k = int(rng.integers(0, tree.N + 1))
        lhs = cond_exp(xi, k, Q)
        weighted = TerminalVariable(tree, dens.R[tree.N] * xi.values)
        rhs = cond_exp(weighted, k) / dens.R[k]
        worst["bayes"] = max(worst["bayes"], float(np.max(np.abs(lhs - rhs))))
    return SuiteResult(instances, max(worst.values()), worst)


def transform_suite(instances: int = 100, N_max: int = 12, seed: int = 0) -> SuiteResult:
    """Residual of the transformed BSDE for random drivers and convections."""
    rng = np.random.default_rng(seed)
    worst = dict(transform_residual=0.0, q_martingale=0.0)
    for i in range(instances):
        tree = _random_tree(rng, N_max)
        m = int(rng.integers(1, 3))
        xi = TerminalVariable(tree, rng.normal(size=(tree.n_leaves, m)))
        if i % 4 == 0:
            sol = solve_martingale_bsde(xi)
        else:
            g, lip = random_driver(rng, m)
            sol = solve_driver_bsde(xi, g, lip)
        res = transform_bsde(sol, random_convection(rng, tree))
        worst["transform_residual"] = max(worst["transform_residual"], res.residual)
        worst["q_martingale"] = max(worst["q_martingale"], res.q_martingale_residual)
    return SuiteResult(instances, max(worst.values()), worst)


def normalization_suite(N: int = 12, T: float = 0.25, xs=(-1.0, 0.0, 0.5)) -> SuiteResult:
    """E^P[R_k] = 1 for every catalog convection, driven by f(Y, Z) of the fixed point."""
    worst = 0.0
    per = {}
    tree = build_tree(N, T)
    for name in CONVECTION:
        coeffs = make_coefficients(name)
        for x in xs:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                xi, _ = picard_solve(coeffs, x, tree, tol=1e-10, max_iter=100)
            sol = solve_martingale_bsde(xi)
            fv = AdaptedProcess(tree, tuple(np.asarray(coeffs.f(sol.Y[k], sol.Z[k]), dtype=float)
                                            .reshape(-1, 1) for k in range(N)))
            R = exponential_martingale(fv).R
            err = max(abs(float(np.mean(r)) - 1.0) for r in R.values)
            per[name] = max(per.get(name, 0.0), err)
            worst = max(worst, err)
    return SuiteResult(len(CONVECTION) * len(xs), worst, {"per_convection": per})
