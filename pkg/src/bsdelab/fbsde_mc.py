"""Monte Carlo check of the forward-backward form of the solution.

With the decoupling field ``u`` supplied by the finite-difference oracle, the
forward process

    dX = -f(u(X, T-t), u_x(X, T-t)) e dt + dB,    X_0 = x

is simulated by Euler-Maruyama, and ``Y`` is stepped forward from
``Y_0 = u(x, T)`` by ``dY = -g dt + Z . dB`` with ``Z = u_x(X, T-t) e``. The
terminal residual ``|Y_T - u0(X_T)|`` measures how well the pair reproduces
the terminal condition.

For ``d >= 2`` the field is the planar lift ``u(x) = v(e . x)`` of the 1-d
solution ``v`` along ``e = (1, ..., 1)/sqrt(d)`` with velocity ``f e``; this
solves the d-dimensional system exactly when ``v`` solves the 1-d one.

Random numbers come from Philox streams keyed by (seed, stream, step, block)
so results do not depend on how the blocks are scheduled.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .coefficients import CoefficientSet
from .errors import RangeError, RegionEscapeError
from .pde_oracle import Grid, GridFamily, solve_fd_family

BLOCK = 1 << 14
MAIN_STREAM = 0
FREE_STREAM = 1


@dataclass(frozen=True)
class McConfig:
    M: int
    dt_mc: float
    seed: int = 0
    d: int = 1
    x: float = 0.5
    T: float = 0.25

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be at least 1")
        if not self.dt_mc > 0 or not self.T > 0:
            raise ValueError("dt_mc and T must be positive")
        if self.d < 1:
            raise ValueError("d must be at least 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def n_steps(self) -> int:
        n = int(round(self.T / self.dt_mc))
        if n < 1 or abs(n * self.dt_mc - self.T) > 1e-9 * self.T:
            raise ValueError(f"dt_mc={self.dt_mc} does not divide T={self.T}")
        return n

    @property
    def direction(self) -> np.ndarray:
        return np.full(self.d, 1.0 / math.sqrt(self.d))

    @property
    def start(self) -> np.ndarray:
        """Starting point in R^d whose projection on the lift direction is x."""
        return self.x * self.direction


def normals(seed: int, stream: int, step: int, block: int, size: int, d: int) -> np.ndarray:
    """Standard normals for one (step, block) cell, shape (size, d)."""
    ss = np.random.SeedSequence(seed, spawn_key=(stream, step, block))
    return np.random.Generator(np.random.Philox(ss)).standard_normal((size, d))


def _blocks(M: int):
    for b in range(-(-M // BLOCK)):
        yield b, min(BLOCK, M - b * BLOCK)


def decoupling_family(coeffs: CoefficientSet, T: float, n_steps: int, x: float = 0.0,
                      dx: float = 0.01, margin: float | None = None) -> GridFamily:
    """FD snapshots at every multiple of T / n_steps on a grid around x.

    The default margin is ``6 sqrt(T)`` plus the largest possible drift
    displacement and a fixed buffer for boundary effects.
    """
    if margin is None:
        drift = coeffs.u0_sup * coeffs.C_f * T + abs(float(np.asarray(coeffs.f(np.zeros((1, coeffs.m)),
                                                                              np.zeros((1, coeffs.m))))[0])) * T
        margin = 6.0 * math.sqrt(T) + drift + 3.0
    grid = Grid.from_spacing(x - margin, x + margin, dx)
    return solve_fd_family(coeffs, grid, [T * k / n_steps for k in range(n_steps + 1)])


def _frame(u_family: GridFamily, s: float):
    j, w = u_family._bracket(s)
    if w != 0.0:
        raise RangeError(f"no oracle snapshot at time-to-go {s:.6g}; build the family on the MC time grid")
    return u_family.frames[j].with_gradient()


@dataclass
class FbsdeStats:
    M: int
    n_steps: int
    d: int
    residual_mean: float
    residual_ci: float
    max_abs_y_mean: float
    max_abs_y_ci: float
    max_abs_y_sup: float
    y_bound: float
    terminal_x_mean: float
    terminal_x_ci: float
    escape_rate: float

    def as_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.as_dict())


def _check_coverage(u_family: GridFamily, cfg: McConfig) -> None:
    grid = u_family.grid
    lo, hi = cfg.x - 6 * math.sqrt(cfg.T), cfg.x + 6 * math.sqrt(cfg.T)
    if lo < grid.x_min or hi > grid.x_max:
        raise RangeError(f"oracle grid [{grid.x_min}, {grid.x_max}] does not cover x +- 6 sqrt(T) = [{lo}, {hi}]")
    if u_family.times[0] > 1e-12 or u_family.times[-1] < cfg.T - 1e-12:
        raise RangeError("oracle snapshots do not span [0, T]")


def _ci(values: np.ndarray) -> tuple[float, float]:
    n = values.size
    mean = float(np.mean(values))
    sd = float(np.std(values, ddof=1)) if n > 1 else 0.0
    return mean, 1.96 * sd / math.sqrt(n)


def simulate_fbsde(coeffs: CoefficientSet, u_family: GridFamily, cfg: McConfig,
                   dump_csv: str | Path | None = None, dump_paths: int = 10) -> FbsdeStats:
    _check_coverage(u_family, cfg)
    n, dt, d, m = cfg.n_steps, cfg.dt_mc, cfg.d, coeffs.m
    e = cfg.direction
    grid = u_family.grid
    frames = [_frame(u_family, cfg.T - k * dt) for k in range(n + 1)]
    residual = np.empty(cfg.M)
    max_y = np.empty(cfg.M)
    term_x = np.empty(cfg.M)
    escaped = np.zeros(cfg.M, dtype=bool)
    rows = []
    for b, size in _blocks(cfg.M):
        sl = slice(b * BLOCK, b * BLOCK + size)
        X = np.tile(cfg.start, (size, 1))
        s = X @ e
        Y = np.tile(frames[0](cfg.x).reshape(m), (size, 1))
        peak = np.max(np.abs(Y), axis=1)
        out = np.zeros(size, dtype=bool)
        record = min(dump_paths, size) if dump_csv is not None and b == 0 else 0
        for k in range(n):
            fr = frames[k]
            u, du = fr(s), fr.grad_at(s)
            drift = np.asarray(coeffs.f(u, du), dtype=float).reshape(size)
            dB = math.sqrt(dt) * normals(cfg.seed, MAIN_STREAM, k, b, size, d)
            if record:
                rows += [(p, k * dt, *X[p], *Y[p]) for p in range(record)]
            gterm = 0.0 if coeffs.g is None else np.asarray(coeffs.g(u, du)).reshape(size, m) * dt
            Y = Y - gterm + du * (dB @ e)[:, None]
            X = X - dt * drift[:, None] * e[None, :] + dB
            s = X @ e
            out |= (s < grid.x_min) | (s > grid.x_max)
            peak = np.maximum(peak, np.max(np.abs(Y), axis=1))
        if record:
            rows += [(p, cfg.T, *X[p], *Y[p]) for p in range(record)]
        residual[sl] = np.linalg.norm(Y - coeffs.u0(s).reshape(size, m), axis=1)
        max_y[sl] = peak
        term_x[sl] = s
        escaped[sl] = out
    rate = float(np.mean(escaped))
    if rate > 0:
        raise RegionEscapeError(f"{rate:.3e} of paths left the oracle grid; widen it", rate)
    if dump_csv is not None:
        with open(dump_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "t"] + [f"x{j + 1}" for j in range(d)] + [f"y{i + 1}" for i in range(m)])
            w.writerows(rows)
    r_mean, r_ci = _ci(residual)
    y_mean, y_ci = _ci(max_y)
    x_mean, x_ci = _ci(term_x)
    return FbsdeStats(cfg.M, n, d, r_mean, r_ci, y_mean, y_ci, float(np.max(max_y)), coeffs.u0_sup,
                      x_mean, x_ci, rate)


@dataclass
class ReweightingCheck:
    drifted_mean: float
    drifted_ci: float
    reweighted_mean: float
    reweighted_ci: float

    @property
    def difference(self) -> float:
        return abs(self.drifted_mean - self.reweighted_mean)

    @property
    def tolerance(self) -> float:
        return 3.0 * math.hypot(self.drifted_ci, self.reweighted_ci)

    @property
    def passed(self) -> bool:
        return self.difference <= self.tolerance

    def as_dict(self) -> dict:
        out = asdict(self)
        out.update(difference=self.difference, tolerance=self.tolerance, passed=self.passed)
        return out


def girsanov_reweighting(coeffs: CoefficientSet, u_family: GridFamily, cfg: McConfig) -> ReweightingCheck:
    """Terminal mean of e . X from drifted paths and from reweighted drift-free paths.

    The weight is ``exp(sum b_k . dW_k - 1/2 sum |b_k|^2 dt)`` with the drift
    ``b = -f e`` frozen at the left end of each step, evaluated along the
    drift-free path. The two runs use independent random streams.
    """
    stats = simulate_fbsde(coeffs, u_family, cfg)
    _check_coverage(u_family, cfg)
    n, dt, d = cfg.n_steps, cfg.dt_mc, cfg.d
    e = cfg.direction
    frames = [_frame(u_family, cfg.T - k * dt) for k in range(n + 1)]
    weighted = np.empty(cfg.M)
    for b, size in _blocks(cfg.M):
        W = np.tile(cfg.start, (size, 1))
        log_w = np.zeros(size)
        for k in range(n):
            s = W @ e
            fr = frames[k]
            drift = -np.asarray(coeffs.f(fr(s), fr.grad_at(s)), dtype=float).reshape(size)
            dW = math.sqrt(dt) * normals(cfg.seed, FREE_STREAM, k, b, size, d)
            log_w += drift * (dW @ e) - 0.5 * drift**2 * dt
            W = W + dW
        weighted[b * BLOCK: b * BLOCK + size] = np.exp(log_w) * (W @ e)
    r_mean, r_ci = _ci(weighted)
    return ReweightingCheck(stats.terminal_x_mean, stats.terminal_x_ci, r_mean, r_ci)


def residual_convergence(coeffs: CoefficientSet, cfg: McConfig, halvings: int = 2,
                         u_family: GridFamily | None = None, dx: float = 0.01) -> dict:
    """Mean terminal residual at dt_mc, dt_mc/2, ... and the successive ratios."""
    n0 = cfg.n_steps
    finest = n0 * 2**halvings
    if u_family is None:
        u_family = decoupling_family(coeffs, cfg.T, finest, cfg.x, dx)
    runs = []
    for j in range(halvings + 1):
        c = McConfig(cfg.M, cfg.T / (n0 * 2**j), cfg.seed, cfg.d, cfg.x, cfg.T)
        runs.append(simulate_fbsde(coeffs, u_family, c))
    means = [r.residual_mean for r in runs]
    return {
        "dt": [cfg.T / (n0 * 2**j) for j in range(halvings + 1)],
        "residual_mean": means,
        "residual_ci": [r.residual_ci for r in runs],
        "ratios": [means[j + 1] / means[j] for j in range(halvings)],
        "max_abs_y_sup": max(r.max_abs_y_sup for r in runs),
        "y_bound": coeffs.u0_sup,
    }
