"""Exact discrete Wiener space on a non-recombining binary tree.

A tree of depth ``N`` over horizon ``T`` carries Brownian increments ``+h`` /
``-h`` with ``h = sqrt(T / N)``. Node ``i`` at level ``k`` has children
``2i`` (up) and ``2i + 1`` (down) at level ``k + 1``, so level-``k`` data of an
adapted process is an array of shape ``(2**k, m)``.

Because the full filtration is stored, conditional expectations, martingale
densities and predictable brackets are exact finite sums.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import CapacityError, MartingaleError, TreeMismatchError

MAX_DEPTH = 24
MARTINGALE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PathTree:
    N: int
    T: float
    B: tuple[np.ndarray, ...] = field(repr=False)

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def h(self) -> float:
        return float(np.sqrt(self.dt))

    @property
    def n_leaves(self) -> int:
        return 2**self.N

    def time(self, k: int) -> float:
        return k * self.dt

    def increments(self, k: int) -> np.ndarray:
        """Brownian increments landing on level ``k`` (k >= 1), shape (2**k,)."""
        return self.h * _signs(k)

    def brownian(self) -> "AdaptedProcess":
        return AdaptedProcess(self, tuple(b[:, None] for b in self.B))


def build_tree(N: int, T: float) -> PathTree:
    if not isinstance(N, (int, np.integer)) or N < 1 or N > MAX_DEPTH:
        raise CapacityError(f"tree depth N={N} outside [1, {MAX_DEPTH}]")
    if not T > 0:
        raise ValueError(f"horizon T must be positive, got {T}")
    h = np.sqrt(T / N)
    levels = [np.zeros(1)]
    for k in range(1, N + 1):
        levels.append(np.repeat(levels[-1], 2) + h * _signs(k))
    for b in levels:
        b.flags.writeable = False
    return PathTree(int(N), float(T), tuple(levels))


def _signs(k: int) -> np.ndarray:
    return np.tile(np.array([1.0, -1.0]), 2 ** (k - 1))


@dataclass(frozen=True, eq=False)
class AdaptedProcess:
    """Node-indexed vectors in R^m; ``values[k]`` has shape ``(2**k, m)``.

    A process defined on levels ``0..N`` is a state process (Y, S, R, ...);
    one defined on levels ``0..N-1`` is predictable (Z, driver values, f).
    """

    tree: PathTree
    values: tuple[np.ndarray, ...]

    def __post_init__(self):
        for k, v in enumerate(self.values):
            if v.ndim != 2 or v.shape[0] != 2**k:
                raise TreeMismatchError(f"level {k} has shape {v.shape}, expected (2**{k}, m)")
        if len(self.values) > self.tree.N + 1:
            raise TreeMismatchError("more levels than the tree has")

    @property
    def m(self) -> int:
        return self.values[0].shape[1]

    @property
    def n_levels(self) -> int:
        return len(self.values)

    def __getitem__(self, k: int) -> np.ndarray:
        return self.values[k]

    def __len__(self) -> int:
        return len(self.values)

    def component(self, i: int) -> "AdaptedProcess":
        return AdaptedProcess(self.tree, tuple(v[:, i : i + 1] for v in self.values))

    def terminal(self) -> "TerminalVariable":
        if self.n_levels != self.tree.N + 1:
            raise TreeMismatchError("process has no leaf level")
        return TerminalVariable(self.tree, self.values[-1])

    def __sub__(self, other: "AdaptedProcess") -> "AdaptedProcess":
        _same_tree(self.tree, other.tree)
        return AdaptedProcess(self.tree, tuple(a - b for a, b in zip(self.values, other.values)))

    def __add__(self, other: "AdaptedProcess") -> "AdaptedProcess":
        _same_tree(self.tree, other.tree)
        return AdaptedProcess(self.tree, tuple(a + b for a, b in zip(self.values, other.values)))

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(v))) for v in self.values)


@dataclass(frozen=True, eq=False)
class TerminalVariable:
    tree: PathTree
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.tree.n_leaves:
            raise TreeMismatchError(f"{v.shape[0]} leaf values for a tree with {self.tree.n_leaves} leaves")
        object.__setattr__(self, "values", v)

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def l2_norm(self, measure: "Measure | None" = None) -> float:
        """sqrt(E |X|^2), Euclidean over components."""
        sq = np.sum(self.values**2, axis=1, keepdims=True)
        return float(np.sqrt(cond_exp(TerminalVariable(self.tree, sq), 0, measure)[0, 0]))

    def __sub__(self, other: "TerminalVariable") -> "TerminalVariable":
        _same_tree(self.tree, other.tree)
        return TerminalVariable(self.tree, self.values - other.values)


@dataclass(frozen=True, eq=False)
class Measure:
    """Branch probabilities: ``up[k][i]`` is the probability of moving from
    node ``(k, i)`` to its up-child."""

    tree: PathTree
    up: tuple[np.ndarray, ...]
    provenance: str = "symmetric"

    def __post_init__(self):
        if len(self.up) != self.tree.N:
            raise TreeMismatchError("one probability array per non-leaf level required")
        for k, p in enumerate(self.up):
            if p.shape != (2**k,):
                raise TreeMismatchError(f"level {k} probabilities have shape {p.shape}")
            if np.any(p <= 0.0) or np.any(p >= 1.0):
                raise ValueError("branch probabilities must lie strictly inside (0, 1)")

    @classmethod
    def symmetric(cls, tree: PathTree) -> "Measure":
        return cls(tree, tuple(np.full(2**k, 0.5) for k in range(tree.N)), "symmetric")

    @property
    def is_symmetric(self) -> bool:
        return self.provenance == "symmetric"

    def leaf_probabilities(self) -> np.ndarray:
        prob = np.ones(1)
        for p in self.up:
            prob = np.column_stack([prob * p, prob * (1.0 - p)]).ravel()
        return prob


def _same_tree(a: PathTree, b: PathTree) -> None:
    if a is not b:
        raise TreeMismatchError("objects live on different trees")


def _as_levels(X) -> tuple[PathTree, np.ndarray]:
    if isinstance(X, TerminalVariable):
        return X.tree, X.values
    if isinstance(X, AdaptedProcess):
        return X.tree, X.terminal().values
    raise TypeError(f"expected TerminalVariable or AdaptedProcess, got {type(X).__name__}")


def _average_children(v: np.ndarray, p: np.ndarray | None) -> np.ndarray:
    pairs = v.reshape(v.shape[0] // 2, 2, *v.shape[1:])
    if p is None:
        return 0.5 * (pairs[:, 0] + pairs[:, 1])
    w = p.reshape(-1, *([1] * (v.ndim - 1)))
    return w * pairs[:, 0] + (1.0 - w) * pairs[:, 1]


def _probabilities(tree: PathTree, measure: Measure | None, k: int) -> np.ndarray | None:
    if measure is None or measure.is_symmetric:
        if measure is not None:
            _same_tree(tree, measure.tree)
        return None
    _same_tree(tree, measure.tree)
    return measure.up[k]


def cond_exp(X, k: int, measure: Measure | None = None) -> np.ndarray:
    """E[X | F_k] at the level-``k`` nodes, shape ``(2**k, m)``."""
    tree, v = _as_levels(X)
    if not 0 <= k <= tree.N:
        raise ValueError(f"level {k} outside [0, {tree.N}]")
    for j in range(tree.N - 1, k - 1, -1):
        v = _average_children(v, _probabilities(tree, measure, j))
    return v


def cond_exp_all(X, measure: Measure | None = None) -> AdaptedProcess:
    """The martingale ``k -> E[X | F_k]`` on every level."""
    tree, v = _as_levels(X)
    out = [v]
    for j in range(tree.N - 1, -1, -1):
        v = _average_children(v, _probabilities(tree, measure, j))
        out.append(v)
    return AdaptedProcess(tree, tuple(reversed(out)))


def expectation(X, measure: Measure | None = None) -> np.ndarray:
    return cond_exp(X, 0, measure)[0]


def martingale_residual(S: AdaptedProcess, measure: Measure | None = None) -> float:
    """max over non-leaf nodes of |E[S_{k+1} | F_k] - S_k|."""
    res = 0.0
    for k in range(S.n_levels - 1):
        mean = _average_children(S[k + 1], _probabilities(S.tree, measure, k))
        res = max(res, float(np.max(np.abs(mean - S[k]))))
    return res


def check_martingale(S: AdaptedProcess, measure: Measure | None = None, tol: float = MARTINGALE_TOL) -> None:
    scale = max(1.0, S.max_abs())
    res = martingale_residual(S, measure)
    if res > tol * scale:
        raise MartingaleError(f"martingale residual {res:.3e} exceeds {tol:.0e} (scale {scale:.3g})", res)


def sibling_difference(v: np.ndarray) -> np.ndarray:
    """Up-child minus down-child for each parent; input is a child level."""
    return v[0::2] - v[1::2]


def martingale_density(
    S: AdaptedProcess,
    measure: Measure | None = None,
    integrator: AdaptedProcess | None = None,
    check: bool = True,
) -> AdaptedProcess:
    """Density D_W(S) on levels ``0..N-1``.

    ``Z_k = (S_{k+1}^+ - S_{k+1}^-) / (W_{k+1}^+ - W_{k+1}^-)``; with the
    default integrator ``W = B`` the denominator is ``2h``.
    """
    if check:
        check_martingale(S, measure)
    tree = S.tree
    if integrator is not None:
        _same_tree(tree, integrator.tree)
    out = []
    for k in range(S.n_levels - 1):
        if integrator is None:
            denom = 2.0 * tree.h
        else:
            denom = sibling_difference(integrator[k + 1])
            if np.any(np.abs(denom) < 1e-300):
                raise ZeroDivisionError("degenerate sibling difference in the integrator")
        out.append(sibling_difference(S[k + 1]) / denom)
    return AdaptedProcess(tree, tuple(out))


def ito_sum(Z: AdaptedProcess, W: AdaptedProcess | None = None) -> AdaptedProcess:
    """Discrete stochastic integral ``sum_{j<k} Z_j (W_{j+1} - W_j)``, zero at the root.

    ``W`` defaults to the tree's Brownian motion. Scalar integrators broadcast
    across the components of ``Z``.
    """
    tree = Z.tree
    if W is None:
        W = tree.brownian()
    _same_tree(tree, W.tree)
    if W.n_levels < Z.n_levels + 1:
        raise TreeMismatchError("integrator has too few levels")
    acc = [np.zeros((1, Z.m))]
    for k in range(Z.n_levels):
        dW = W[k + 1] - np.repeat(W[k], 2, axis=0)
        acc.append(np.repeat(acc[-1], 2, axis=0) + np.repeat(Z[k], 2, axis=0) * dW)
    return AdaptedProcess(tree, tuple(acc))


def accumulate(increments: AdaptedProcess) -> AdaptedProcess:
    """Pathwise running sum ``A_k = sum_{j<k} a_j`` of a predictable process."""
    acc = [np.zeros((1, increments.m))]
    for k in range(increments.n_levels):
        acc.append(np.repeat(acc[-1] + increments[k], 2, axis=0))
    return AdaptedProcess(increments.tree, tuple(acc))


def bracket(
    S1: AdaptedProcess,
    S2: AdaptedProcess,
    measure: Measure | None = None,
) -> AdaptedProcess:
    """Predictable bracket ``<S1, S2>_k = sum_{j<k} z1_j z2_j dt``, componentwise."""
    _same_tree(S1.tree, S2.tree)
    z1 = martingale_density(S1, measure)
    z2 = martingale_density(S2, measure)
    dt = S1.tree.dt
    prod = AdaptedProcess(S1.tree, tuple(a * b * dt for a, b in zip(z1.values, z2.values)))
    return accumulate(prod)


def process_from_levels(tree: PathTree, levels: Sequence[np.ndarray]) -> AdaptedProcess:
    """Wrap per-level arrays, promoting ``(2**k,)`` arrays to ``(2**k, 1)``."""
    vals = tuple(np.asarray(v, dtype=float).reshape(2**k, -1) for k, v in enumerate(levels))
    return AdaptedProcess(tree, vals)
