#!/usr/bin/env python3
"""
Heisenberg Fractional Toolkit - Command Line
    constants  kappa, S and sigma with standard errors; writes the bubble spec
    eigen      first eigenpair on a point cloud over Omega (plus refinement table)
    lemmas     eps sweeps, power-law fits and verdicts
    solve      minimizer of the lambda-perturbed quotient, rescaled to a solution

Usage:
    python -m heisenberg.cli eigen --n 2000 --out data/run1
    python -m heisenberg.cli lemmas --config run.json --only L6
    python -m heisenberg.cli solve --solver solver.json --max-iter 800

Exit codes: 0 ok, 1 config error, 2 inconclusive or failing checks,
3 solver non-convergence, 4 lambda outside (0, lambda_1).
"""

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from heisenberg import __version__, asympt, bubble, config, records, varsolve
from heisenberg.bubble import BubbleSpec
from heisenberg.errors import (
    ConfigError, ConvergenceError, HeisenbergError, HypothesisError, InvalidArgumentError,
)
from heisenberg.hgroup import critical_exponent
from heisenberg.quad import QuadratureSpec
from heisenberg.varsolve import SolverConfig

logger = logging.getLogger(__name__)

COMMANDS = ("constants", "eigen", "lemmas", "solve")


# =============================================================================
# RUN CONFIGURATION
# =============================================================================

@dataclass
class RunConfig:
    command: str = "constants"
    N: int = config.DEFAULT_N
    s: float = config.DEFAULT_S
    lam: Optional[float] = None
    eps_grid: List[float] = field(default_factory=lambda: list(config.DEFAULT_EPS_GRID))
    radius: float = config.DOMAIN_RADIUS
    n: int = config.DEFAULT_POINTS
    samples: int = config.DEFAULT_SAMPLES
    seed: int = 0
    out: str = str(config.DATA_DIR)
    only: List[str] = field(default_factory=list)
    tol: Optional[float] = None
    max_iter: Optional[int] = None
    solver: Optional[str] = None
    sigma_mode: str = config.SIGMA_MODE
    bubble: Optional[str] = None
    refine: List[int] = field(default_factory=list)

    def validate(self):
        """Range checks; raises ConfigError before anything is computed or written"""
        try:
            problems = self._problems()
        except (TypeError, ValueError) as e:
            raise ConfigError(f"malformed config value: {e}")
        if problems:
            raise ConfigError("; ".join(problems))

    def _problems(self) -> List[str]:
        problems = []
        if self.command not in COMMANDS:
            problems.append(f"unknown command {self.command!r}")
        if not isinstance(self.N, int) or self.N < 1:
            problems.append(f"N must be a positive integer, got {self.N!r}")
        if not 0.0 < self.s < 1.0:
            problems.append(f"s must lie in (0, 1), got {self.s}")
        if self.lam is not None and self.lam < 0:
            problems.append(f"lambda must be >= 0, got {self.lam}")
        if self.n < config.MIN_POINTS:
            problems.append(f"n must be >= {config.MIN_POINTS}, got {self.n}")
        if any(k < config.MIN_POINTS for k in self.refine):
            problems.append(f"refinement sizes must be >= {config.MIN_POINTS}")
        if not self.radius > 0:
            problems.append(f"radius must be positive, got {self.radius}")
        if self.samples < config.MIN_SAMPLES:
            problems.append(f"samples must be >= {config.MIN_SAMPLES}, got {self.samples}")
        if self.tol is not None and not self.tol > 0:
            problems.append(f"tol must be positive, got {self.tol}")
        if self.max_iter is not None and self.max_iter < 1:
            problems.append(f"max_iter must be >= 1, got {self.max_iter}")
        if self.sigma_mode not in config.SIGMA_MODES:
            problems.append(f"sigma mode must be one of {list(config.SIGMA_MODES)}, got {self.sigma_mode!r}")
        bad = [label for label in self.only if label not in config.LEMMA_LABELS]
        if bad:
            problems.append(f"unknown lemma labels {bad}")
        if self.bubble is not None and not Path(self.bubble).is_file():
            problems.append(f"bubble spec {self.bubble} not found")
        if self.solver is not None and not Path(self.solver).is_file():
            problems.append(f"solver config {self.solver} not found")
        try:
            asympt.validate_grid(self.eps_grid)
        except InvalidArgumentError as e:
            problems.append(str(e))
        return problems

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        """First 16 hex digits of SHA-256 over the sorted-key JSON, output directory excluded"""
        doc = self.to_dict()
        doc.pop("out")
        blob = json.dumps(doc, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def stamp(self) -> dict:
        return {"config_hash": self.config_hash(), "seed": self.seed, "version": __version__}

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def quadrature(self) -> QuadratureSpec:
        return QuadratureSpec(samples=self.samples, seed=self.seed)

    def solver_config(self, defaults: SolverConfig) -> SolverConfig:
        """defaults, then the --solver file, then --tol and --max-iter"""
        base = SolverConfig.load(Path(self.solver), defaults) if self.solver else defaults
        return SolverConfig(tol=base.tol if self.tol is None else self.tol,
                            max_iter=base.max_iter if self.max_iter is None else self.max_iter,
                            seed=self.seed)

    @classmethod
    def from_file(cls, path: Path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}")
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f"malformed config {path}: {e}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heisenberg",
                                     description="Fractional sub-Laplacian toolkit on the Heisenberg group")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON run configuration; flags override it")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--samples", type=int, help="Monte Carlo samples per estimate")
    parser.add_argument("--n", type=int, help="point-cloud size")
    parser.add_argument("--s", type=float, help="fractional order in (0, 1)")
    parser.add_argument("--lambda", dest="lam", type=float, help="lambda (default 0.5 * lambda_1)")
    parser.add_argument("--only", action="append", help="lemma label to run (repeatable)")
    parser.add_argument("--N", type=int, help="Heisenberg dimension N")
    parser.add_argument("--radius", type=float, help="domain radius")
    parser.add_argument("--tol", type=float, help="solver tolerance")
    parser.add_argument("--max-iter", dest="max_iter", type=int, help="solver iteration cap")
    parser.add_argument("--solver", help="solver config JSON (tol, max_iter); flags override it")
    parser.add_argument("--sigma-mode", dest="sigma_mode", choices=config.SIGMA_MODES)
    parser.add_argument("--bubble", help="bubble spec JSON from a previous constants run")
    parser.add_argument("--refine", type=int, nargs="+", help="extra cloud sizes for eigen refinement")
    parser.add_argument("--eps-grid", dest="eps_grid", type=float, nargs="+")
    return parser


def resolve_config(argv=None) -> RunConfig:
    args = build_parser().parse_args(argv)
    cfg = RunConfig.from_file(Path(args.config)) if args.config else RunConfig()
    overrides = {name: value for name, value in vars(args).items()
                 if name != "config" and value is not None}
    cfg = replace(cfg, **overrides)
    cfg.validate()
    return cfg


# =============================================================================
# COMMANDS
# =============================================================================

def _write(cfg: RunConfig, name: str, doc: dict) -> Path:
    path = cfg.out_dir / name
    doc = dict(doc)
    doc.update(cfg.stamp())
    records.write_json(path, doc)
    logger.info(f"Wrote {path}")
    return path


def _bubble_spec(cfg: RunConfig) -> BubbleSpec:
    if cfg.bubble:
        spec = BubbleSpec.load(Path(cfg.bubble))
        if spec.params != critical_exponent(cfg.N, cfg.s):
            raise ConfigError(f"bubble spec {cfg.bubble} was computed for N={spec.params.N}, s={spec.params.s}")
        sobolev_sigma = float(spec.provenance.get("sigma", {}).get("value", spec.sigma))
        return replace(spec, sigma=bubble.mode_sigma(cfg.sigma_mode, sobolev_sigma))
    spec, _ = bubble.compute_constants(cfg.N, cfg.s, cfg.quadrature(), sigma_mode=cfg.sigma_mode)
    return spec


def _discretize(cfg: RunConfig, n: Optional[int] = None):
    gp = critical_exponent(cfg.N, cfg.s)
    dom = varsolve.build_domain(cfg.radius, cfg.n if n is None else n, gp, cfg.seed)
    return dom, varsolve.assemble_form(dom, gp)


def cmd_constants(cfg: RunConfig) -> int:
    spec, report = bubble.compute_constants(cfg.N, cfg.s, cfg.quadrature(), sigma_mode=cfg.sigma_mode)
    spec.save(cfg.out_dir / "bubble_spec.json", extra=cfg.stamp())
    doc = {"command": "constants", "params": spec.params.to_dict(), "samples": cfg.samples, **report}
    _write(cfg, "constants.json", doc)
    print(records.dumps(doc), end="")
    return config.EXIT_OK


def cmd_eigen(cfg: RunConfig) -> int:
    solver = cfg.solver_config(SolverConfig(tol=config.EIGEN_TOL, max_iter=config.EIGEN_MAX_ITER))
    solver.save(cfg.out_dir / "solver.json", extra=cfg.stamp())
    sizes = [cfg.n] + [k for k in cfg.refine if k != cfg.n]
    rows = []
    main_result = None
    for n in sizes:
        dom, form = _discretize(cfg, n)
        try:
            result = varsolve.smallest_eigenpair(form, dom, tol=solver.tol, max_iter=solver.max_iter)
        except ConvergenceError as e:
            if e.best is not None:
                e.best.eigenvector.save(cfg.out_dir / "eigenvector_best.bin", extra=cfg.stamp())
            raise
        rows.append({"n": dom.n, "requested": n, "h": dom.h, "lambda1": result.eigenvalue,
                     "residual": result.residual, "iterations": result.iterations})
        if main_result is None:
            main_result = (dom, result)

    dom, result = main_result
    result.eigenvector.save(cfg.out_dir / "eigenvector.bin", extra=cfg.stamp())
    dom.save(cfg.out_dir / "domain.bin", extra=cfg.stamp())
    doc = {
        "command": "eigen",
        "lambda1": result.eigenvalue,
        "residual": result.residual,
        "iterations": result.iterations,
        "sign_violations": result.sign_violations,
        "n": dom.n,
        "h": dom.h,
        "radius": dom.radius,
        "tol": solver.tol,
        "max_iter": solver.max_iter,
    }
    if len(rows) > 1:
        table = pd.DataFrame(rows).sort_values("requested").reset_index(drop=True)
        table["delta"] = table["lambda1"].diff().abs()
        for key, value in cfg.stamp().items():
            table[key] = value
        records.write_csv(table, cfg.out_dir / "refinement.csv")
        deltas = table["delta"].dropna().tolist()
        doc["refinement"] = {"deltas": deltas,
                             "shrinking": bool(all(b < a for a, b in zip(deltas, deltas[1:])))}
    _write(cfg, "eigen.json", doc)
    print(records.dumps(doc), end="")
    return config.EXIT_OK


def _lambda_one(cfg: RunConfig) -> float:
    dom, form = _discretize(cfg)
    return varsolve.smallest_eigenpair(form, dom, tol=config.EIGEN_TOL).eigenvalue


def cmd_lemmas(cfg: RunConfig) -> int:
    spec = _bubble_spec(cfg)
    only = cfg.only or list(config.LEMMA_LABELS)
    lam = cfg.lam
    if lam is None:
        lam = config.LAMBDA_FRACTION * _lambda_one(cfg) if "drop" in only else 0.0
    verdicts, tables = asympt.lemma_report(spec, cfg.quadrature(), cfg.eps_grid, lam, only)

    for quantity, table in tables.items():
        frame = table.to_frame(cfg.config_hash(), cfg.seed, __version__)
        records.write_csv(frame, cfg.out_dir / f"sweep_{quantity}.csv")
    doc = {
        "command": "lemmas",
        "lambda": lam,
        "params": spec.params.to_dict(),
        "sigma": spec.sigma,
        "verdicts": [v.to_dict() for v in verdicts],
    }
    _write(cfg, "verdicts.json", doc)
    print(records.dumps(doc), end="")

    if all(v.status in ("pass", "skipped") for v in verdicts):
        return config.EXIT_OK
    return config.EXIT_INCONCLUSIVE


def cmd_solve(cfg: RunConfig) -> int:
    dom, form = _discretize(cfg)
    gp = dom.gp
    eig = varsolve.smallest_eigenpair(form, dom, tol=config.EIGEN_TOL)
    lambda1 = eig.eigenvalue
    lam = config.LAMBDA_FRACTION * lambda1 if cfg.lam is None else cfg.lam
    if not 0.0 < lam < lambda1:
        raise HypothesisError(
            f"a nontrivial solution is only guaranteed for 0 < lambda < lambda_1; "
            f"got lambda = {lam:.6g}, lambda_1 = {lambda1:.6g}")

    solver = cfg.solver_config(SolverConfig())
    solver.save(cfg.out_dir / "solver.json", extra=cfg.stamp())
    try:
        result = varsolve.minimize_quotient(form, dom, lam, tol=solver.tol, max_iter=solver.max_iter,
                                            lambda1=lambda1)
        baseline = varsolve.minimize_quotient(form, dom, 0.0, tol=solver.tol, max_iter=solver.max_iter,
                                              lambda1=lambda1)
    except ConvergenceError as e:
        if e.best is not None:
            e.best.minimizer.save(cfg.out_dir / "minimizer_best.bin", extra=cfg.stamp())
        raise

    solution = varsolve.rescale_minimizer(result.minimizer, result.value, gp)
    gradient = varsolve.energy_gradient(solution, lam, form, dom)
    solution_energy = varsolve.energy(solution, lam, form, dom)
    level = varsolve.critical_level(result.value, gp)
    solution.save(cfg.out_dir / "solution.bin", extra=cfg.stamp())
    doc = {
        "command": "solve",
        "lambda": lam,
        "lambda1": lambda1,
        "n": dom.n,
        "h": dom.h,
        "s_lambda": result.value,
        "s_zero": baseline.value,
        "strict_drop": bool(result.value < baseline.value),
        "iterations": result.iterations,
        "quotient_residual": result.residual,
        "residual": varsolve.weak_residual(solution, lam, form, dom),
        "energy": solution_energy,
        "critical_level": level,
        "level_matches": bool(abs(solution_energy - level) <= 1e-6 * abs(level)),
        "level_below_sobolev": bool(level < varsolve.critical_level(baseline.value, gp)),
        "gradient_inf": float(np.max(np.abs(gradient))),
        "min": float(np.min(solution.values)),
        "max": float(np.max(solution.values)),
        "positive": bool(np.all(solution.values > 0)),
    }
    _write(cfg, "solve.json", doc)
    print(records.dumps(doc), end="")
    return config.EXIT_OK


HANDLERS = {
    "constants": cmd_constants,
    "eigen": cmd_eigen,
    "lemmas": cmd_lemmas,
    "solve": cmd_solve,
}


def main(argv=None) -> int:
    try:
        cfg = resolve_config(argv)
    except (ConfigError, InvalidArgumentError) as e:
        print(f"Config error: {e}", file=sys.stderr)
        return config.EXIT_CONFIG

    config.setup_logging(f"heisenberg_{cfg.command}")
    logger.info("=" * 60)
    logger.info(f"HEISENBERG {cfg.command.upper()} (config {cfg.config_hash()}, seed {cfg.seed})")
    logger.info("=" * 60)

    try:
        code = HANDLERS[cfg.command](cfg)
    except HypothesisError as e:
        logger.error(f"Refusing: {e}")
        return config.EXIT_HYPOTHESIS
    except ConvergenceError as e:
        logger.error(f"Solver did not converge: {e}")
        return config.EXIT_NONCONVERGENCE
    except (ConfigError, InvalidArgumentError) as e:
        logger.error(f"Config error: {e}")
        return config.EXIT_CONFIG
    except HeisenbergError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return config.EXIT_INCONCLUSIVE

    logger.info("=" * 60)
    logger.info(f"{cfg.command.upper()} COMPLETE (exit {code})")
    logger.info("=" * 60)
    return code


if __name__ == "__main__":
    sys.exit(main())
