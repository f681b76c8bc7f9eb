"""Command-line driver: ``bsdelab run config.json --out DIR [--seed S] [--threads N]``.

Exit status: 0 when every asserted check passes, 1 when a check fails,
2 for an invalid configuration, 3 when a capacity or numerical guard trips.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import platform
import sys
import warnings
from importlib import metadata
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, ValidationError, model_validator

from . import checks
from .cameron_martin import chain_solve, contraction_horizon, solve_u
from .coefficients import CONVECTION, DRIVERS, INITIAL_DATA, CoefficientSet, make_coefficients
from .errors import BsdeLabError, GuardError
from .estimates import run_suite, write_reports_csv
from .fbsde_mc import McConfig, decoupling_family, girsanov_reweighting, residual_convergence
from .flow import FlowCoefficients, bismut_check, flow_horizon, picard_flow
from .pde_oracle import Grid, cole_hopf, solve_fd, solve_fd_family

logger = logging.getLogger("bsdelab")

COMMANDS = ("solve-pde", "solve-cm", "chain-cm", "check-girsanov", "check-bsde-transform",
            "check-estimates", "check-flow", "simulate-fbsde", "compare")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CoefficientConfig(_Strict):
    f: str = "burgers"
    f_params: dict[str, float] = Field(default_factory=dict)
    u0: Optional[str] = None
    u0_params: dict[str, float] = Field(default_factory=dict)
    g: Optional[str] = None
    g_params: dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _known(self):
        if self.f not in CONVECTION:
            raise ValueError(f"unknown convection {self.f!r}; choose from {sorted(CONVECTION)}")
        if self.u0 is not None and self.u0 not in INITIAL_DATA:
            raise ValueError(f"unknown initial data {self.u0!r}; choose from {sorted(INITIAL_DATA)}")
        if self.g is not None and self.g not in DRIVERS:
            raise ValueError(f"unknown driver {self.g!r}; choose from {sorted(DRIVERS)}")
        return self

    def build(self) -> CoefficientSet:
        return make_coefficients(self.f, self.u0, self.f_params, self.u0_params, self.g, self.g_params)


class TreeConfig(_Strict):
    N: int = Field(12, ge=1, le=24)
    T: PositiveFloat = 0.25


class GridConfig(_Strict):
    x_min: float = -1.0
    x_max: float = 1.0
    G: int = Field(21, ge=3)

    @model_validator(mode="after")
    def _ordered(self):
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")
        return self

    def build(self) -> Grid:
        return Grid(self.x_min, self.x_max, self.G)


class PdeConfig(_Strict):
    dx: PositiveFloat = 0.01
    dt: Optional[PositiveFloat] = None


class PicardConfig(_Strict):
    tol: PositiveFloat = 1e-10
    max_iter: PositiveInt = 50


class ChainConfig(_Strict):
    N_per_interval: int = Field(12, ge=1, le=24)
    C_u: Optional[PositiveFloat] = None


class EstimateConfig(_Strict):
    p: list[float] = Field(default_factory=lambda: [1.0, 1.5, 1.9])
    t: PositiveFloat = 0.1
    T: PositiveFloat = 0.2
    x: list[float] = Field(default_factory=lambda: [0.0, 0.5])
    N: int = Field(12, ge=1, le=20)

    @model_validator(mode="after")
    def _range(self):
        if any(not 1.0 <= p < 2.0 for p in self.p):
            raise ValueError("every p must lie in [1, 2)")
        if self.t > self.T:
            raise ValueError("t must not exceed T")
        return self


class FlowConfig(_Strict):
    N: int = Field(12, ge=1, le=16)
    T: PositiveFloat = 0.1
    G: int = Field(64, ge=3, le=512)
    x_min: float = -3.0
    x_max: float = 3.0
    tol: PositiveFloat = 1e-10
    max_iter: PositiveInt = 50


class McParams(_Strict):
    M: PositiveInt = 100_000
    n_steps: PositiveInt = 16
    halvings: int = Field(2, ge=1, le=6)
    d: PositiveInt = 1
    x: float = 0.5
    T: PositiveFloat = 0.25
    dump_paths: int = Field(0, ge=0)


class SuiteConfig(_Strict):
    instances: PositiveInt = 100
    N_max: int = Field(12, ge=1, le=16)


class SlackConfig(_Strict):
    relative: PositiveFloat = 0.05
    estimates: PositiveFloat = 0.10
    exact: PositiveFloat = 1e-12
    halving: PositiveFloat = 0.75
    bismut_second: PositiveFloat = 0.10


class RunConfig(_Strict):
    command: Literal[COMMANDS]  # type: ignore[valid-type]
    coefficients: CoefficientConfig = Field(default_factory=CoefficientConfig)
    tree: TreeConfig = Field(default_factory=TreeConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    pde: PdeConfig = Field(default_factory=PdeConfig)
    picard: PicardConfig = Field(default_factory=PicardConfig)
    chain: ChainConfig = Field(default_factory=ChainConfig)
    estimates: EstimateConfig = Field(default_factory=EstimateConfig)
    flow: FlowConfig = Field(default_factory=FlowConfig)
    mc: McParams = Field(default_factory=McParams)
    suite: SuiteConfig = Field(default_factory=SuiteConfig)
    slack: SlackConfig = Field(default_factory=SlackConfig)
    seed: int = Field(0, ge=0)
    output: Optional[str] = None


# ---------------------------------------------------------------------------
# commands; each returns (verdict dict, pass flag)
# ---------------------------------------------------------------------------

def _fd_reference(cfg: RunConfig, coeffs: CoefficientSet, T: float):
    g = cfg.grid
    grid = Grid.padded(g.x_min, g.x_max, T, cfg.pde.dx)
    return solve_fd(coeffs, grid, T, cfg.pde.dt)


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    scale = float(np.max(np.abs(b)))
    return float(np.max(np.abs(a - b))) / (scale if scale > 0 else 1.0)


def cmd_solve_pde(cfg, out, threads):
    coeffs = cfg.coefficients.build()
    u = _fd_reference(cfg, coeffs, cfg.tree.T)
    u.to_csv(out / "u_fd.csv")
    bound = np.asarray(coeffs.initial.component_sup)
    ok = bool(np.all(u.component_sup() <= bound * (1 + 1e-10))) if coeffs.g is None else True
    return {"T": cfg.tree.T, "G": u.grid.G, "dx": u.grid.dx, "sup": u.sup_norm(), "max_principle": ok, "pass": ok}, ok


def cmd_solve_cm(cfg, out, threads):
    coeffs = cfg.coefficients.build()
    grid = cfg.grid.build()
    T, N = cfg.tree.T, cfg.tree.N
    u, points = solve_u(coeffs, grid, T, N, cfg.picard.tol, cfg.picard.max_iter, threads, return_points=True)
    u.to_csv(out / "u_cm.csv")
    fd = _fd_reference(cfg, coeffs, T)
    err = _rel(u.values, fd(grid.points))
    ok = err <= cfg.slack.relative
    return {"T": T, "N": N, "horizon": contraction_horizon(coeffs.C_u0, coeffs.C_f),
            "iterations": [p.diagnostics.iterations for p in points], "rel_err_vs_fd": err, "pass": ok}, ok


def cmd_chain_cm(cfg, out, threads):
    coeffs = cfg.coefficients.build()
    T = cfg.tree.T
    grid = Grid.padded(cfg.grid.x_min, cfg.grid.x_max, T, (cfg.grid.x_max - cfg.grid.x_min) / (cfg.grid.G - 1))
    fd = _fd_reference(cfg, coeffs, T)
    C_u = cfg.chain.C_u or max(coeffs.C_u0, fd.lipschitz())
    u = chain_solve(coeffs, grid, T, cfg.chain.N_per_interval, C_u, cfg.picard.tol, cfg.picard.max_iter, threads)
    u.to_csv(out / "u_chain.csv")
    inner = cfg.grid.build().points
    err = _rel(u(inner), fd(inner))
    ok = err <= cfg.slack.relative
    return {"T_total": T, "C_u": C_u, "rel_err_vs_fd": err, "pass": ok}, ok


def cmd_check_girsanov(cfg, out, threads):
    tol = cfg.slack.exact
    res = checks.girsanov_suite(cfg.suite.instances, cfg.suite.N_max, cfg.seed).as_dict(tol)
    norm = checks.normalization_suite().as_dict(tol)
    ok = res["pass"] and norm["pass"]
    return {**res, "normalization_catalog": norm, "pass": ok}, ok


def cmd_check_bsde_transform(cfg, out, threads):
    res = checks.transform_suite(cfg.suite.instances, cfg.suite.N_max, cfg.seed).as_dict(cfg.slack.exact)
    return res, res["pass"]


def cmd_check_estimates(cfg, out, threads):
    coeffs = cfg.coefficients.build()
    e = cfg.estimates
    reports = []
    for x in e.x:
        reports += run_suite(coeffs, x, e.T, e.t, e.p, N=e.N, slack=cfg.slack.estimates)
    write_reports_csv(reports, out / "estimates.csv")
    ok = all(r.passed for r in reports)
    return {"reports": [r.as_dict() for r in reports], "pass": ok}, ok


def cmd_check_flow(cfg, out, threads):
    coeffs = cfg.coefficients.build()
    fl = cfg.flow
    fc = FlowCoefficients.from_coefficients(coeffs)
    grid = Grid(fl.x_min, fl.x_max, fl.G)
    state, diag = picard_flow(fc, grid, fl.T, fl.N, fl.tol, fl.max_iter)
    ograd = Grid.padded(fl.x_min, fl.x_max, fl.T, cfg.pde.dx)
    family = solve_fd_family(coeffs, ograd, [state.tree.time(k) for k in range(fl.N + 1)], cfg.pde.dt)
    errs = bismut_check(state, family)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        cm = solve_u(coeffs, grid, fl.T, fl.N, cfg.picard.tol, cfg.picard.max_iter, threads)
    consistency = _rel(state.mean(0, fl.N), cm.values)
    T_max, K = flow_horizon(fc.C0, fc.C1)
    in_ball = fl.T > T_max or max(diag.norms) <= K
    ok = (errs[0] <= cfg.slack.relative and errs[1] <= cfg.slack.relative
          and errs[2] <= cfg.slack.bismut_second and in_ball and consistency <= 0.07)
    (out / "flow_diagnostics.json").write_text(diag.to_json())
    return {"C0": fc.C0, "C1": fc.C1, "T_max": T_max, "K": K, "diagnostics": diag.as_dict(),
            "bismut_relative_errors": {str(j): v for j, v in errs.items()},
            "consistency_with_cm": consistency, "in_ball": in_ball, "pass": ok}, ok


def cmd_simulate_fbsde(cfg, out, threads):
    coeffs = cfg.coefficients.build()
    p = cfg.mc
    mc = McConfig(p.M, p.T / p.n_steps, cfg.seed, p.d, p.x, p.T)
    family = decoupling_family(coeffs, p.T, p.n_steps * 2**p.halvings, p.x, cfg.pde.dx)
    conv = residual_convergence(coeffs, mc, p.halvings, family)
    rw = girsanov_reweighting(coeffs, family, mc)
    if p.dump_paths:
        from .fbsde_mc import simulate_fbsde
        simulate_fbsde(coeffs, family, mc, dump_csv=out / "paths.csv", dump_paths=p.dump_paths)
    ok = all(r <= cfg.slack.halving for r in conv["ratios"]) and rw.passed
    return {"convergence": conv, "reweighting": rw.as_dict(), "pass": ok}, ok


def cmd_compare(cfg, out, threads):
    coeffs = cfg.coefficients.build()
    grid = cfg.grid.build()
    T, N = cfg.tree.T, cfg.tree.N
    u_cm = solve_u(coeffs, grid, T, N, cfg.picard.tol, cfg.picard.max_iter, threads)
    u_fd = _fd_reference(cfg, coeffs, T)(grid.points)
    scalar_burgers = coeffs.convection.name == "burgers" and coeffs.m == 1 and coeffs.g is None
    scale = coeffs.u0_sup
    rows, worst = [], 0.0
    for i, x in enumerate(grid.points):
        ch = cole_hopf(coeffs.u0, float(x), T, antiderivative=coeffs.initial.antiderivative) \
            if scalar_burgers else math.nan
        ref = ch if scalar_burgers else float(u_fd[i, 0])
        rel = abs(float(u_cm.values[i, 0]) - ref) / scale
        worst = max(worst, rel)
        rows.append((float(x), float(u_cm.values[i, 0]), float(u_fd[i, 0]), ch, rel))
    with open(out / "compare.csv", "w") as fh:
        fh.write("x,u_cm,u_fd,u_ch,rel_err_cm_ch\n")
        for r in rows:
            fh.write(",".join(repr(v) for v in r) + "\n")
    ok = worst <= cfg.slack.relative
    return {"T": T, "N": N, "reference": "cole_hopf" if scalar_burgers else "finite_difference",
            "max_rel_err": worst, "pass": ok}, ok


HANDLERS = {
    "solve-pde": cmd_solve_pde,
    "solve-cm": cmd_solve_cm,
    "chain-cm": cmd_chain_cm,
    "check-girsanov": cmd_check_girsanov,
    "check-bsde-transform": cmd_check_bsde_transform,
    "check-estimates": cmd_check_estimates,
    "check-flow": cmd_check_flow,
    "simulate-fbsde": cmd_simulate_fbsde,
    "compare": cmd_compare,
}


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("numpy", "scipy", "pydantic"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    try:
        out["artifact"] = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        out["artifact"] = None
    return out


def config_hash(cfg: RunConfig) -> str:
    canonical = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serialisable: {type(o)}")


def load_config(path: str | Path, seed: int | None = None) -> RunConfig:
    data = json.loads(Path(path).read_text())
    if seed is not None:
        data["seed"] = seed
    return RunConfig.model_validate(data)


def run(config_path: str | Path, out: str | Path | None = None, seed: int | None = None, threads: int = 1) -> int:
    try:
        cfg = load_config(config_path, seed)
    except ValidationError as exc:
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "<root>"
            print(f"config error at {loc}: {err['msg']}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 2
    out_dir = Path(out or cfg.output or "out")
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"command": cfg.command, "config_hash": config_hash(cfg), "seed": cfg.seed,
                "threads": threads, "versions": _versions(), "config": cfg.model_dump(mode="json")}
    try:
        verdict, ok = HANDLERS[cfg.command](cfg, out_dir, threads)
        status = 0 if ok else 1
    except GuardError as exc:
        verdict, status = {"error": type(exc).__name__, "message": str(exc)}, 3
    except BsdeLabError as exc:
        verdict, status = {"error": type(exc).__name__, "message": str(exc)}, 1
    verdict = {"command": cfg.command, "exit_status": status, **verdict}
    (out_dir / "verdict.json").write_text(json.dumps(verdict, indent=2, default=_json_default))
    manifest["exit_status"] = status
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_json_default))
    print(json.dumps({"command": cfg.command, "exit_status": status, "pass": verdict.get("pass")}))
    return status


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="bsdelab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="action", required=True)
    p = sub.add_parser("run", help="run one experiment described by a JSON config")
    p.add_argument("config")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    if args.seed is not None and args.seed < 0:
        parser.error("--seed must be non-negative")
    return run(args.config, args.out, args.seed, max(1, args.threads))


if __name__ == "__main__":
    sys.exit(main())
