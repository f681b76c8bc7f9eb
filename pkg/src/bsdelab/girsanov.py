"""Exponential martingales and equivalent-measure tilts on the path tree.

The discrete stochastic exponential ``R_{k+1} = R_k (1 + f_k dB_{k+1})`` is a
positive P-martingale as long as ``|f| h < 1``; it tilts the up-probability at
each node to ``(1 + f h) / 2``. Under the tilted measure Q the drifted walk
``B~_k = B_k - sum_{j<k} f_j dt`` is a martingale, and a P-martingale ``X``
becomes a Q-martingale after subtracting ``sum z^X f dt``. Both children of a
node receive the same compensation, so sibling differences (and therefore
martingale densities) are unchanged: the density-invariance identity holds
exactly, not just in the limit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StepSizeError
from .wiener_tree import (
    AdaptedProcess,
    Measure,
    PathTree,
    _same_tree,
    accumulate,
    check_martingale,
    martingale_density,
    process_from_levels,
)


@dataclass(frozen=True, eq=False)
class DensityProcess:
    R: AdaptedProcess
    fvals: AdaptedProcess

    @property
    def tree(self) -> PathTree:
        return self.R.tree


def as_drift(tree: PathTree, fvals) -> AdaptedProcess:
    """Coerce per-level drift arrays (or a scalar AdaptedProcess) to levels 0..N-1."""
    if isinstance(fvals, AdaptedProcess):
        _same_tree(tree, fvals.tree)
        proc = fvals
    else:
        proc = process_from_levels(tree, fvals)
    if proc.m != 1:
        raise ValueError("drift must be scalar (d = 1)")
    if proc.n_levels != tree.N:
        raise ValueError(f"drift needs {tree.N} predictable levels, got {proc.n_levels}")
    return proc


def check_step_size(tree: PathTree, fvals: AdaptedProcess) -> None:
    worst = fvals.max_abs() * tree.h
    if worst >= 1.0:
        # |f| h < 1  <=>  N > T max|f|^2
        need = int(np.floor(tree.T * fvals.max_abs() ** 2)) + 1
        raise StepSizeError(
            f"max |f| h = {worst:.4f} >= 1: branch probabilities leave (0, 1); use N >= {need}"
        )


def exponential_martingale(fvals, tree: PathTree | None = None) -> DensityProcess:
    if tree is None:
        tree = fvals.tree
    f = as_drift(tree, fvals)
    check_step_size(tree, f)
    R = [np.ones((1, 1))]
    for k in range(tree.N):
        dB = tree.increments(k + 1)[:, None]
        R.append(np.repeat(R[-1], 2, axis=0) * (1.0 + np.repeat(f[k], 2, axis=0) * dB))
    return DensityProcess(AdaptedProcess(tree, tuple(R)), f)


def tilt_measure(density: DensityProcess) -> Measure:
    R = density.R
    up = tuple(R[k + 1][0::2, 0] / (2.0 * R[k][:, 0]) for k in range(R.tree.N))
    return Measure(R.tree, up, "tilted")


def tilt_from_drift(fvals, tree: PathTree | None = None) -> Measure:
    """Q directly from f: up-probability ``(1 + f h) / 2``."""
    return tilt_measure(exponential_martingale(fvals, tree))


def drifted_brownian(tree: PathTree, fvals) -> AdaptedProcess:
    """``B~_k = B_k - sum_{j<k} f_j dt``."""
    f = as_drift(tree, fvals)
    drift = accumulate(AdaptedProcess(tree, tuple(v * tree.dt for v in f.values)))
    return tree.brownian() - drift


def compensate(X: AdaptedProcess, fvals, check: bool = True) -> AdaptedProcess:
    """``X~_{k+1} = X~_k + dX_{k+1} - z^X_k f_k dt`` with ``X~_0 = X_0``."""
    tree = X.tree
    f = as_drift(tree, fvals)
    z = martingale_density(X, check=check)
    comp = accumulate(AdaptedProcess(tree, tuple(z[k] * f[k] * tree.dt for k in range(tree.N))))
    return X - comp


def check_density_invariance(X: AdaptedProcess, fvals) -> float:
    """max over nodes of |D_B(X) - D_{B~}(X~)|."""
    tree = X.tree
    f = as_drift(tree, fvals)
    check_step_size(tree, f)
    check_martingale(X)
    Xt = compensate(X, f, check=False)
    Bt = drifted_brownian(tree, f)
    d_p = martingale_density(X, check=False)
    d_q = martingale_density(Xt, integrator=Bt, check=False)
    return max(float(np.max(np.abs(a - b))) for a, b in zip(d_p.values, d_q.values))
