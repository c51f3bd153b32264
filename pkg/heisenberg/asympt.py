"""
Epsilon Sweeps & Power-Law Verdicts
Evaluates the bubble-family quantities on a decreasing eps grid, fits
|value - baseline| ~ A eps^alpha and turns the fits into pass/fail reports.

Quantities:
    sup-bound        sup_{|p|>r/2} u_eps / eps^((Q-2s)/2)        bounded
    gradient-sup     same for |grad_H U_eps|                      bounded
    increment        pair-increment constant                      bounded
    seminorm         [u_eps]^2
    seminorm-excess  [u_eps]^2 - [U_eps]^2 (paired)               ~ eps^(Q-2s)
    l2-norm          ||u_eps||_2^2                                ~ eps^2s
    critical-norm    ||u_eps||_Q*^Q*
    critical-excess  ||u_eps||_Q*^Q* - ||U_eps||_Q*^Q*            ~ eps^Q
    s-lambda         ([u_eps]^2 - lam ||u_eps||_2^2) / ||u_eps||^2_Q*
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from heisenberg import bubble, config, quad
from heisenberg.bubble import BubbleSpec
from heisenberg.errors import HeisenbergError, InsufficientSignalError, InvalidArgumentError

logger = logging.getLogger(__name__)

QUANTITIES = (
    "sup-bound", "gradient-sup", "increment", "seminorm", "seminorm-excess",
    "l2-norm", "critical-norm", "critical-excess", "s-lambda",
)

CSV_COLUMNS = ["label", "eps", "value", "stderr", "kind", "note", "config_hash", "seed", "version"]


# =============================================================================
# TYPES
# =============================================================================

@dataclass(frozen=True)
class SweepRow:
    eps: float
    value: float
    stderr: float
    kind: str = "mc"       # "mc" estimates carry stderr; "sup" rows are empirical maxima
    note: str = ""

    @property
    def ok(self) -> bool:
        return not self.note and np.isfinite(self.value)


@dataclass
class SweepTable:
    quantity: str
    rows: List[SweepRow]
    spec: BubbleSpec
    provenance: Dict = field(default_factory=dict)

    @property
    def eps(self) -> np.ndarray:
        return np.array([row.eps for row in self.rows])

    @property
    def values(self) -> np.ndarray:
        return np.array([row.value for row in self.rows])

    @property
    def stderrs(self) -> np.ndarray:
        return np.array([row.stderr for row in self.rows])

    def usable(self) -> List[SweepRow]:
        return [row for row in self.rows if row.ok]

    def failures(self) -> List[SweepRow]:
        return [row for row in self.rows if not row.ok]

    def to_frame(self, config_hash: str = "", seed: int = 0, version: str = "") -> pd.DataFrame:
        data = [{
            "label": self.quantity,
            "eps": row.eps,
            "value": row.value,
            "stderr": row.stderr,
            "kind": row.kind,
            "note": row.note,
            "config_hash": config_hash,
            "seed": seed,
            "version": version,
        } for row in self.rows]
        return pd.DataFrame(data, columns=CSV_COLUMNS)


@dataclass(frozen=True)
class PowerFit:
    exponent: float
    intercept: float       # log A
    r_squared: float
    rows_used: int
    baseline: float = 0.0
    sign: int = 1

    def predict(self, eps) -> np.ndarray:
        return self.baseline + self.sign * np.exp(self.intercept) * np.asarray(eps, dtype=float) ** self.exponent


@dataclass
class Verdict:
    lemma: str
    status: str                          # pass | fail | inconclusive | skipped | error
    predicted_exponent: Optional[float] = None
    fitted: Optional[float] = None
    r2: Optional[float] = None
    details: Dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_dict(self) -> dict:
        return {
            "lemma": self.lemma,
            "status": self.status,
            "pass": self.passed,
            "predicted_exponent": self.predicted_exponent,
            "fitted": self.fitted,
            "r2": self.r2,
            "details": self.details,
        }


# =============================================================================
# GRID AND SWEEP
# =============================================================================

def validate_grid(eps_grid: Sequence[float]) -> List[float]:
    grid = [float(e) for e in eps_grid]
    if len(grid) < config.MIN_GRID_POINTS:
        raise InvalidArgumentError(f"eps grid needs >= {config.MIN_GRID_POINTS} points, got {len(grid)}")
    if any(not (e > 0) for e in grid):
        raise InvalidArgumentError("eps values must be positive")
    for a, b in zip(grid, grid[1:]):
        if not b < a:
            raise InvalidArgumentError("eps grid must be strictly decreasing")
        if b / a > config.MAX_GRID_RATIO:
            raise InvalidArgumentError(
                f"eps grid too dense: {b:g}/{a:g} = {b / a:.3f} exceeds {config.MAX_GRID_RATIO:.3f}")
    return grid


def _evaluate(quantity: str, spec: BubbleSpec, qs: quad.QuadratureSpec, lam: float) -> SweepRow:
    gp = spec.params
    eps = spec.eps
    if quantity == "sup-bound":
        return SweepRow(eps, bubble.sup_ratio(spec, seed=qs.seed), 0.0, "sup")
    if quantity == "gradient-sup":
        return SweepRow(eps, bubble.gradient_sup_ratio(spec, seed=qs.seed), 0.0, "sup")
    if quantity == "increment":
        return SweepRow(eps, bubble.increment_constant(spec, seed=qs.seed)["constant"], 0.0, "sup")

    u = bubble.u_eps_field(spec)
    if quantity == "seminorm":
        est = quad.gagliardo_sq(u, gp, qs)
    elif quantity == "seminorm-excess":
        est = quad.gagliardo_sq_difference(u, bubble.U_eps_field(spec), gp, qs)
    elif quantity == "l2-norm":
        est = quad.lp_power(u, 2.0, gp, qs, purpose=config.STREAM_L2)
    elif quantity == "critical-norm":
        est = quad.lp_power(u, gp.Qstar, gp, qs)
    elif quantity == "critical-excess":
        est = quad.integral(bubble.critical_excess_field(spec), gp, qs)
    elif quantity == "s-lambda":
        est = quad.s_lambda_quotient(u, lam, gp, qs)
    else:
        raise InvalidArgumentError(f"unknown sweep quantity {quantity!r}")
    return SweepRow(eps, est.value, est.stderr, "mc")


def sweep(quantity: str, eps_grid: Sequence[float], spec: BubbleSpec,
          qs: quad.QuadratureSpec, lam: float = 0.0) -> SweepTable:
    """Per-eps estimates in grid order; failed points are kept as annotated rows"""
    if quantity not in QUANTITIES:
        raise InvalidArgumentError(f"unknown sweep quantity {quantity!r}; choose from {QUANTITIES}")
    grid = validate_grid(eps_grid)

    def run(eps: float) -> SweepRow:
        try:
            row = _evaluate(quantity, spec.with_eps(eps), qs, lam)
            logger.info(f"  {quantity} eps={eps:g}: {row.value:.6g} +/- {row.stderr:.2e}")
            return row
        except HeisenbergError as e:
            logger.warning(f"  {quantity} eps={eps:g} failed: {e}")
            return SweepRow(eps, float("nan"), float("nan"), "mc", f"{type(e).__name__}: {e}")

    logger.info(f"Sweeping {quantity} over eps = {grid}")
    with ThreadPoolExecutor(max_workers=max(1, config.WORKERS)) as pool:
        rows = list(pool.map(run, grid))
    provenance = {"quadrature": qs.to_dict(), "spec_hash": qs.spec_hash(), "lambda": lam,
                  "bubble": spec.to_dict()}
    return SweepTable(quantity, rows, spec, provenance)


# =============================================================================
# FITS AND VERDICTS
# =============================================================================

def fit_power(table: SweepTable, baseline: Optional[float] = None) -> PowerFit:
    """
    Weighted least squares of log|value - baseline| on log eps.

    Weights are inverse variances of the log values (delta method); if any
    row has zero stderr the fit is unweighted.
    """
    rows = table.usable()
    if len(rows) < 2:
        raise InsufficientSignalError(f"{table.quantity}: only {len(rows)} usable rows")
    base = 0.0 if baseline is None else float(baseline)
    eps = np.array([row.eps for row in rows])
    excess = np.array([row.value for row in rows]) - base
    stderr = np.array([row.stderr for row in rows])

    weak = np.abs(excess) < config.SIGNAL_SIGMAS * stderr
    if np.any(weak) or np.any(excess == 0.0):
        at = eps[np.argmax(weak | (excess == 0.0))]
        raise InsufficientSignalError(
            f"{table.quantity}: excess over baseline {base:g} is within "
            f"{config.SIGNAL_SIGMAS:g} stderr at eps={at:g}")
    signs = np.sign(excess)
    if not np.all(signs == signs[0]):
        raise InvalidArgumentError(f"{table.quantity}: value - baseline changes sign across the grid")

    x = np.log(eps)
    y = np.log(np.abs(excess))
    if np.all(stderr > 0):
        sigma_y = stderr / np.abs(excess)
        w = 1.0 / sigma_y ** 2
    else:
        w = np.ones_like(y)
    slope, intercept = np.polyfit(x, y, 1, w=np.sqrt(w))
    fitted = slope * x + intercept
    ybar = np.sum(w * y) / np.sum(w)
    ss_tot = float(np.sum(w * (y - ybar) ** 2))
    ss_res = float(np.sum(w * (y - fitted) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - ss_res / ss_tot)
    return PowerFit(float(slope), float(intercept), float(r2), len(rows), base, int(signs[0]))


def verdict(fit: PowerFit, predicted: float, tol_rel: float = config.EXPONENT_TOL,
            lemma: str = "", lower_bound: bool = False) -> Verdict:
    """
    pass iff |exponent - predicted| <= tol_rel |predicted| and R^2 >= MIN_R_SQUARED.
    lower_bound=True only asks exponent >= predicted (1 - tol_rel).
    """
    if not 0.0 < tol_rel < 1.0:
        raise InvalidArgumentError(f"tol_rel must lie in (0, 1), got {tol_rel}")
    if lower_bound:
        exponent_ok = fit.exponent >= predicted * (1.0 - tol_rel)
    else:
        exponent_ok = abs(fit.exponent - predicted) <= tol_rel * abs(predicted)
    quality_ok = fit.r_squared >= config.MIN_R_SQUARED
    return Verdict(
        lemma=lemma,
        status="pass" if exponent_ok and quality_ok else "fail",
        predicted_exponent=predicted,
        fitted=fit.exponent,
        r2=fit.r_squared,
        details={"tol_rel": tol_rel, "min_r2": config.MIN_R_SQUARED, "lower_bound": lower_bound,
                 "intercept": fit.intercept, "baseline": fit.baseline, "rows_used": fit.rows_used},
    )


def bounded_verdict(table: SweepTable, lemma: str = "") -> Verdict:
    """Constants that should not depend on eps: pass iff max/min <= MAX_CONSTANT_GROWTH"""
    rows = table.usable()
    if len(rows) < 2:
        return Verdict(lemma, "inconclusive", 0.0, details={"reason": "fewer than 2 usable rows"})
    values = np.array([row.value for row in rows])
    lo = float(np.min(values))
    growth = float(np.max(values)) / lo if lo > 0 else float("inf")
    return Verdict(
        lemma=lemma,
        status="pass" if growth <= config.MAX_CONSTANT_GROWTH else "fail",
        predicted_exponent=0.0,
        details={"growth": growth, "max_growth": config.MAX_CONSTANT_GROWTH,
                 "constants": values.tolist()},
    )


def richardson_plateau(table: SweepTable, exponent: float) -> Tuple[float, float]:
    """
    Limit of value(eps) = P + A eps^exponent from the two smallest-eps rows.
    Returns (plateau, stderr).
    """
    rows = table.usable()
    if len(rows) < 2:
        raise InsufficientSignalError(f"{table.quantity}: need two usable rows for extrapolation")
    a, b = rows[-2], rows[-1]
    k = (b.eps / a.eps) ** exponent
    plateau = (b.value - k * a.value) / (1.0 - k)
    stderr = float(np.hypot(b.stderr, k * a.stderr) / (1.0 - k))
    return float(plateau), stderr


def strict_drop_check(lam: float, eps_grid: Sequence[float], spec: BubbleSpec,
                      qs: quad.QuadratureSpec) -> Verdict:
    """
    S_lambda(u_eps) against the full-space quotient S of ubar; passes iff
    the smallest-eps value lies below S by DROP_SIGMAS combined stderr.
    The per-eps drops are reported with whether they grow as eps shrinks.
    """
    if lam < 0:
        raise InvalidArgumentError(f"lambda must be >= 0, got {lam}")
    if lam == 0:
        return Verdict("drop", "skipped", details={
            "lambda": 0.0, "note": "no strict drop expected at lambda = 0; check needs lambda > 0"})

    sobolev = quad.sobolev_quotient(bubble.ubar_field(spec), spec.params, qs)
    table = sweep("s-lambda", eps_grid, spec, qs, lam)
    rows = table.usable()
    if not rows:
        return Verdict("drop", "error", details={"failures": [row.note for row in table.rows]})
    drops = [sobolev.value - row.value for row in rows]
    last = rows[-1]
    combined = float(np.hypot(sobolev.stderr, last.stderr))
    margin = sobolev.value - last.value
    grows = bool(all(b >= a for a, b in zip(drops, drops[1:])))
    return Verdict(
        lemma="drop",
        status="pass" if margin >= config.DROP_SIGMAS * combined else "fail",
        details={
            "lambda": lam,
            "sobolev": sobolev.value,
            "sigma": spec.sigma,
            "sobolev_stderr": sobolev.stderr,
            "eps": last.eps,
            "s_lambda": last.value,
            "s_lambda_stderr": last.stderr,
            "margin_sigmas": margin / combined if combined > 0 else float("inf"),
            "drops": drops,
            "drop_grows": grows,
            "table": table.quantity,
        },
    )


# =============================================================================
# LEMMA BATTERY
# =============================================================================

def _fitted(lemma: str, table: SweepTable, predicted: float, lower_bound: bool = False) -> Verdict:
    try:
        fit = fit_power(table)
    except InsufficientSignalError as e:
        logger.warning(f"{lemma}: {e}")
        return Verdict(lemma, "inconclusive", predicted, details={"reason": str(e)})
    result = verdict(fit, predicted, lemma=lemma, lower_bound=lower_bound)
    if table.failures():
        result.details["failures"] = [row.note for row in table.failures()]
    return result


def lemma_report(spec: BubbleSpec, qs: quad.QuadratureSpec, eps_grid: Sequence[float] = None,
                 lam: float = 0.0, only: Optional[Sequence[str]] = None) -> Tuple[List[Verdict], Dict[str, SweepTable]]:
    """Run the selected lemma checks; returns verdicts and the sweep tables they used"""
    grid = validate_grid(config.DEFAULT_EPS_GRID if eps_grid is None else eps_grid)
    labels = list(config.LEMMA_LABELS if not only else only)
    unknown = [label for label in labels if label not in config.LEMMA_LABELS]
    if unknown:
        raise InvalidArgumentError(f"unknown lemma labels {unknown}; choose from {config.LEMMA_LABELS}")
    gp = spec.params
    verdicts: List[Verdict] = []
    tables: Dict[str, SweepTable] = {}

    def table(quantity: str) -> SweepTable:
        if quantity not in tables:
            tables[quantity] = sweep(quantity, grid, spec, qs, lam)
        return tables[quantity]

    for label in labels:
        logger.info("=" * 60)
        logger.info(f"Checking {label}")
        try:
            if label == "L3":
                result = bounded_verdict(table("sup-bound"), "L3")
            elif label == "L4":
                result = bounded_verdict(table("gradient-sup"), "L4")
            elif label == "L5":
                result = bounded_verdict(table("increment"), "L5")
            elif label == "L6":
                result = _fitted("L6", table("seminorm-excess"), gp.bubble_exponent)
            elif label == "L7a":
                result = _fitted("L7a", table("l2-norm"), min(2.0 * gp.s, gp.Q - 4.0 * gp.s))
            elif label == "L7b":
                result = _fitted("L7b", table("critical-excess"), float(gp.Q), lower_bound=True)
            else:
                # margin scales like sigma^Q; always measured at DROP_SIGMA
                result = strict_drop_check(lam, grid, replace(spec, sigma=config.DROP_SIGMA), qs)
        except HeisenbergError as e:
            logger.error(f"{label} failed: {e}")
            result = Verdict(label, "error", details={"reason": f"{type(e).__name__}: {e}"})
        logger.info(f"{label}: {result.status}")
        verdicts.append(result)
    return verdicts, tables
