"""
Singular-Integral Quadrature
Monte Carlo estimates of the Gagliardo seminorm, L^p norms, Sobolev-type
quotients and Koranyi ball volumes, each with a standard error.

Seminorm estimator:
    [u]^2 = 2 * int_A dxi int dzeta 1[|xi o zeta| > |xi|] |u(xi) - u(xi o zeta)|^2 |zeta|^-(Q+2s)

A is a Koranyi ball holding the support (or the truncation ball of a
full-space field); counting each pair once with the point nearer the origin
as xi covers every pair with at least one point in A. xi comes from a
log-uniform radial proposal around the field's concentration scale, zeta
from polar form: a direction from the normalized polar measure and a radius
stratified over a far-field shell, dyadic annuli and an inner ball.
"""

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate

from heisenberg import config
from heisenberg.bubble import ScalarField
from heisenberg.errors import (
    DegenerateDenominatorError, DivergenceError, EstimationError, InvalidArgumentError,
)
from heisenberg.hgroup import (
    GroupParams, compose_arr, dilate_rows, hdist_arr, hnorm_arr, sample_directions,
    sphere_measure, unit_ball_volume,
)
from heisenberg.rng import chunks, stream

logger = logging.getLogger(__name__)

REGIONS = ("full-space", "ball", "domain")
METHODS = (config.METHOD_MC, config.METHOD_GRID)


# =============================================================================
# TYPES
# =============================================================================

@dataclass(frozen=True)
class QuadratureSpec:
    method: str = config.METHOD_MC
    samples: int = config.DEFAULT_SAMPLES
    annuli: int = config.DEFAULT_ANNULI
    seed: int = 0
    region: str = "full-space"
    radius: Optional[float] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidArgumentError(f"unknown quadrature method {self.method!r}")
        if self.samples < config.MIN_SAMPLES:
            raise InvalidArgumentError(f"samples must be >= {config.MIN_SAMPLES}, got {self.samples}")
        if self.annuli < config.MIN_ANNULI:
            raise InvalidArgumentError(f"annuli must be >= {config.MIN_ANNULI}, got {self.annuli}")
        if self.region not in REGIONS:
            raise InvalidArgumentError(f"unknown region {self.region!r}")
        if self.region != "full-space" and not (self.radius and self.radius > 0):
            raise InvalidArgumentError(f"region {self.region!r} needs a positive radius")

    def with_samples(self, samples: int) -> "QuadratureSpec":
        return QuadratureSpec(self.method, samples, self.annuli, self.seed, self.region, self.radius)

    def with_seed(self, seed: int) -> "QuadratureSpec":
        return QuadratureSpec(self.method, self.samples, self.annuli, seed, self.region, self.radius)

    def to_dict(self) -> dict:
        return asdict(self)

    def spec_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    samples_used: int
    strata: Tuple[float, ...] = ()
    tail: float = 0.0

    def to_record(self, label: str, seed: int, spec_hash: str) -> dict:
        return {
            "label": label,
            "value": self.value,
            "stderr": self.stderr,
            "samples": self.samples_used,
            "seed": seed,
            "spec_hash": spec_hash,
        }


# =============================================================================
# RUNNING MOMENTS
# =============================================================================

@dataclass
class _Moments:
    """Count, mean and centered second moment of per-sample totals, plus strata sums"""
    n: int = 0
    mean: float = 0.0
    m2: float = 0.0
    strata: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def of(cls, totals: np.ndarray, parts: Optional[np.ndarray] = None) -> "_Moments":
        n = totals.size
        mean = float(np.mean(totals)) if n else 0.0
        m2 = float(np.sum((totals - mean) ** 2)) if n else 0.0
        strata = np.sum(parts, axis=0) if parts is not None else np.zeros(0)
        return cls(n, mean, m2, strata)

    def merge(self, other: "_Moments") -> "_Moments":
        # Chan et al. pairwise update, applied in chunk order
        if self.n == 0:
            return other
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * other.n / n
        m2 = self.m2 + other.m2 + delta * delta * self.n * other.n / n
        strata = self.strata + other.strata if self.strata.size else other.strata
        return _Moments(n, mean, m2, strata)

    def stderr(self) -> float:
        if self.n < 2:
            return 0.0
        return float(np.sqrt(self.m2 / (self.n - 1) / self.n))


def _run_chunks(work: Callable[[int, int], _Moments], total: int) -> _Moments:
    units = chunks(total)
    with ThreadPoolExecutor(max_workers=max(1, config.WORKERS)) as pool:
        results = list(pool.map(lambda unit: work(*unit), units))
    acc = _Moments()
    for m in results:
        acc = acc.merge(m)
    return acc


# =============================================================================
# SAMPLERS
# =============================================================================

@dataclass(frozen=True)
class _Proposal:
    """Log-uniform radial density q(xi) = 1 / (c Z (l^Q + |xi|^Q)) on B_R"""
    gp: GroupParams
    scale: float
    radius: float

    @property
    def log_mass(self) -> float:
        return np.log1p((self.radius / self.scale) ** self.gp.Q) / self.gp.Q

    def draw(self, rng: np.random.Generator, count: int) -> Tuple[np.ndarray, np.ndarray]:
        """Points and importance weights 1/q"""
        Q = self.gp.Q
        v = rng.random(count)
        ratio = np.expm1(v * np.log1p((self.radius / self.scale) ** Q))
        rho = self.scale * ratio ** (1.0 / Q)
        rho = np.minimum(rho, self.radius)
        dirs = sample_directions(rng, count, self.gp)
        weights = sphere_measure(self.gp) * self.log_mass * (self.scale ** Q + rho ** Q)
        return dilate_rows(rho, dirs), weights


def _kernel_strata(outer: float, annuli: int) -> List[Tuple[float, float]]:
    """[(a, b)] with b = inf for the far shell and a = 0 for the inner ball"""
    strata = [(outer, np.inf)]
    for k in range(1, annuli + 1):
        strata.append((outer * 2.0 ** -k, outer * 2.0 ** (-k + 1)))
    strata.append((0.0, outer * 2.0 ** -annuli))
    return strata


def _draw_zeta(rng: np.random.Generator, count: int, gp: GroupParams,
               lo: float, hi: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Kernel-variable draws in lo < |zeta| < hi and weights such that
    E[w g(zeta)] = int g(zeta) |zeta|^-(Q+2s) dzeta over the shell.

    Finite shells sample rho with density ~ rho^(1-2s) and weight
    c (hi^e - lo^e) / (e rho^2), e = 2-2s; the far shell samples the
    Pareto law of the kernel itself with weight c lo^-2s / (2s).
    """
    s = gp.s
    c = sphere_measure(gp)
    v = 1.0 - rng.random(count)
    if np.isinf(hi):
        rho = lo * v ** (-1.0 / (2.0 * s))
        weights = np.full(count, c * lo ** (-2.0 * s) / (2.0 * s))
    else:
        e = 2.0 - 2.0 * s
        span = hi ** e - lo ** e
        rho = (lo ** e + v * span) ** (1.0 / e)
        weights = c * span / (e * rho * rho)
    dirs = sample_directions(rng, count, gp)
    return dilate_rows(rho, dirs), weights


# =============================================================================
# REGIONS AND TAILS
# =============================================================================

def _region(fields: Sequence[ScalarField], qs: QuadratureSpec) -> Tuple[float, float, bool]:
    """(radius of A, proposal scale, truncated?) for a set of fields sampled together"""
    scale = min(f.scale for f in fields)
    supports = [f.support for f in fields]
    if all(sup is not None for sup in supports):
        radius = max(supports)
        truncated = False
    else:
        for f in fields:
            if f.support is None and f.decay is None:
                raise InvalidArgumentError(
                    f"field {f.label!r} needs a support radius or a declared decay rate")
        known = [sup for sup in supports if sup is not None]
        radius = max([config.TRUNCATION_FACTOR * scale] + known)
        truncated = True
    if qs.region != "full-space":
        if truncated or qs.radius < radius:
            radius = qs.radius
        truncated = False
    return radius, min(scale, radius), truncated


def _seminorm_tail(f: ScalarField, gp: GroupParams, radius: float) -> float:
    """
    Model of the pairs dropped when both points lie outside B_R, from the
    declared decay |u| <= A |p|^-alpha and its implied gradient alpha A |p|^-alpha-1.
    """
    if f.support is not None:
        return 0.0
    amp, alpha = f.decay
    s = gp.s
    c = sphere_measure(gp)
    power = gp.Q - 2.0 * alpha - 2.0 * s
    local = 2.0 ** (2.0 * s) / (2.0 * s) + alpha * alpha * 2.0 ** (2.0 * s - 2.0) / (2.0 - 2.0 * s)
    return 2.0 * c * c * amp * amp * local * radius ** power / (-power)


def _power_tail(f: ScalarField, gp: GroupParams, radius: float, p: float) -> float:
    """int_{|p|>R} |u|^p under the declared decay"""
    if f.support is not None:
        return 0.0
    amp, alpha = f.decay
    power = gp.Q - p * alpha
    if power >= 0:
        raise InvalidArgumentError(f"declared decay of {f.label!r} is not L^{p}-integrable")
    return sphere_measure(gp) * amp ** p * radius ** power / (-power)


def _with_truncation(estimate_at: Callable[[float], Estimate], tail_at: Callable[[float], float],
                     radius: float, truncated: bool) -> Estimate:
    """Double the truncation radius until tail <= TAIL_FRACTION * stderr, then add the tail"""
    est = estimate_at(radius)
    if not truncated:
        return est
    tail = tail_at(radius)
    doublings = 0
    while tail > config.TAIL_FRACTION * est.stderr and doublings < config.MAX_TRUNCATION_DOUBLINGS:
        radius *= 2.0
        doublings += 1
        logger.debug(f"tail {tail:.3e} > {config.TAIL_FRACTION} stderr, truncating at {radius:g}")
        est = estimate_at(radius)
        tail = tail_at(radius)
    return Estimate(est.value, est.stderr + tail, est.samples_used, est.strata, tail)


def _check_finite(values: np.ndarray, xi: np.ndarray, eta: Optional[np.ndarray], label: str):
    bad = ~np.isfinite(values)
    if np.any(bad):
        i = int(np.argmax(bad))
        pair = (xi[i].tolist(), None if eta is None else eta[i].tolist())
        raise EstimationError(f"integrand of {label} is non-finite at sampled pair {pair}", pair=pair)


# =============================================================================
# SEMINORM
# =============================================================================

def _seminorm(fields: Sequence[ScalarField], coeffs: Sequence[float], gp: GroupParams,
              qs: QuadratureSpec, purpose: int) -> Estimate:
    if qs.method != config.METHOD_MC:
        raise InvalidArgumentError("the seminorm needs the monte-carlo-stratified method")
    radius, scale, truncated = _region(fields, qs)
    label = "-".join(f.label for f in fields)

    def estimate_at(R: float) -> Estimate:
        proposal = _Proposal(gp, scale, R)
        strata = _kernel_strata(2.0 * R, qs.annuli)

        def work(index: int, count: int) -> _Moments:
            xi, wx = proposal.draw(stream(qs.seed, purpose, 0, index), count)
            u_xi = [f(xi) for f in fields]
            norm_xi = hnorm_arr(xi)
            parts = np.zeros((count, len(strata)))
            for k, (lo, hi) in enumerate(strata):
                zeta, wz = _draw_zeta(stream(qs.seed, purpose, k + 1, index), count, gp, lo, hi)
                eta = compose_arr(xi, zeta)
                keep = hnorm_arr(eta) > norm_xi
                diff = np.zeros(count)
                for f, c, ux in zip(fields, coeffs, u_xi):
                    diff += c * (ux - f(eta)) ** 2
                contrib = np.where(keep, 2.0 * wx * wz * diff, 0.0)
                _check_finite(contrib, xi, eta, label)
                parts[:, k] = contrib
            return _Moments.of(np.sum(parts, axis=1), parts)

        acc = _run_chunks(work, qs.samples)
        strata_means = tuple(float(v) / acc.n for v in acc.strata)
        return Estimate(acc.mean, acc.stderr(), acc.n * len(strata), strata_means)

    def tail_at(R: float) -> float:
        return sum(abs(c) * _seminorm_tail(f, gp, R) for f, c in zip(fields, coeffs))

    return _with_truncation(estimate_at, tail_at, radius, truncated)


def gagliardo_sq(u: ScalarField, gp: GroupParams, qs: QuadratureSpec) -> Estimate:
    """[u]^2 over the pairs S of qs.region"""
    est = _seminorm([u], [1.0], gp, qs, config.STREAM_XI)
    logger.debug(f"[{u.label}]^2 = {est.value:.6g} +/- {est.stderr:.2e}")
    return est


def gagliardo_sq_difference(u: ScalarField, v: ScalarField, gp: GroupParams,
                            qs: QuadratureSpec) -> Estimate:
    """[u]^2 - [v]^2 from common samples"""
    return _seminorm([u, v], [1.0, -1.0], gp, qs, config.STREAM_XI)


# =============================================================================
# SINGLE INTEGRALS
# =============================================================================

def _single(fields: Sequence[ScalarField], transform: Callable[[List[np.ndarray]], np.ndarray],
            tail: Callable[[float], float], gp: GroupParams, qs: QuadratureSpec,
            purpose: int, label: str) -> Estimate:
    radius, scale, truncated = _region(fields, qs)

    if qs.method == config.METHOD_GRID:
        est = _grid_integral(lambda pts: transform([f(pts) for f in fields]), radius, gp, qs)
        return Estimate(est.value, est.stderr + (tail(radius) if truncated else 0.0),
                        est.samples_used, est.strata, tail(radius) if truncated else 0.0)

    def estimate_at(R: float) -> Estimate:
        proposal = _Proposal(gp, scale, R)

        def work(index: int, count: int) -> _Moments:
            pts, w = proposal.draw(stream(qs.seed, purpose, 0, index), count)
            values = w * transform([f(pts) for f in fields])
            _check_finite(values, pts, None, label)
            return _Moments.of(values)

        acc = _run_chunks(work, qs.samples)
        return Estimate(acc.mean, acc.stderr(), acc.n)

    return _with_truncation(estimate_at, tail, radius, truncated)


def _grid_integral(func: Callable[[np.ndarray], np.ndarray], radius: float,
                   gp: GroupParams, qs: QuadratureSpec) -> Estimate:
    """Midpoint rule over the bounding box of B_R; stderr from a half-resolution rerun"""
    dim = gp.dim
    m = max(4, int(round(qs.samples ** (1.0 / dim))))
    lows = np.array([-radius] * (2 * gp.N) + [-radius * radius])

    def rule(k: int) -> float:
        widths = -2.0 * lows / k
        axes = [lo + (np.arange(k) + 0.5) * w for lo, w in zip(lows, widths)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
        inside = hnorm_arr(grid) < radius
        values = np.zeros(grid.shape[0])
        values[inside] = func(grid[inside])
        return float(np.sum(values) * np.prod(widths))

    fine = rule(m)
    coarse = rule(max(2, m // 2))
    return Estimate(fine, abs(fine - coarse), m ** dim)


def lp_power(u: ScalarField, p: float, gp: GroupParams, qs: QuadratureSpec,
             purpose: int = config.STREAM_LP) -> Estimate:
    """int |u|^p over the region"""
    if p < 1:
        raise InvalidArgumentError(f"p must be >= 1, got {p}")
    return _single([u], lambda vals: np.abs(vals[0]) ** p,
                   lambda R: _power_tail(u, gp, R, p), gp, qs, purpose, u.label)


def lp_norm(u: ScalarField, p: float, gp: GroupParams, qs: QuadratureSpec,
            purpose: int = config.STREAM_LP) -> Estimate:
    """||u||_{L^p}; stderr by the delta method on the p-th power"""
    power = lp_power(u, p, gp, qs, purpose)
    if power.value <= 0.0:
        return Estimate(0.0, 0.0, power.samples_used)
    value = power.value ** (1.0 / p)
    stderr = value / p * power.stderr / power.value
    return Estimate(value, stderr, power.samples_used, tail=power.tail)


def integral(u: ScalarField, gp: GroupParams, qs: QuadratureSpec,
             purpose: int = config.STREAM_LP) -> Estimate:
    """Signed integral of u over the region"""
    return _single([u], lambda vals: vals[0],
                   lambda R: _power_tail(u, gp, R, 1.0), gp, qs, purpose, u.label)


# =============================================================================
# QUOTIENTS
# =============================================================================

def _ratio(num: Estimate, den: Estimate) -> Estimate:
    value = num.value / den.value
    rel = np.hypot(num.stderr / abs(num.value) if num.value else 0.0, den.stderr / den.value)
    stderr = abs(value) * rel if num.value else num.stderr / den.value
    return Estimate(value, float(stderr), num.samples_used + den.samples_used)


def _critical_denominator(u: ScalarField, gp: GroupParams, qs: QuadratureSpec) -> Estimate:
    norm = lp_norm(u, gp.Qstar, gp, qs)
    if norm.value <= 3.0 * norm.stderr:
        raise DegenerateDenominatorError(
            f"||{u.label}||_Q* = {norm.value:.3e} is within 3 stderr ({norm.stderr:.3e}) of zero")
    return Estimate(norm.value ** 2, 2.0 * norm.value * norm.stderr, norm.samples_used)


def sobolev_quotient(u: ScalarField, gp: GroupParams, qs: QuadratureSpec) -> Estimate:
    """[u]^2 / ||u||^2_Q*"""
    den = _critical_denominator(u, gp, qs)
    return _ratio(gagliardo_sq(u, gp, qs), den)


def s_lambda_quotient(u: ScalarField, lam: float, gp: GroupParams, qs: QuadratureSpec) -> Estimate:
    """([u]^2 - lam ||u||_2^2) / ||u||^2_Q*"""
    if lam < 0:
        raise InvalidArgumentError(f"lambda must be >= 0, got {lam}")
    den = _critical_denominator(u, gp, qs)
    seminorm = gagliardo_sq(u, gp, qs)
    if lam == 0:
        return _ratio(seminorm, den)
    l2 = lp_power(u, 2.0, gp, qs, purpose=config.STREAM_L2)
    num = Estimate(seminorm.value - lam * l2.value,
                   float(np.hypot(seminorm.stderr, lam * l2.stderr)),
                   seminorm.samples_used + l2.samples_used)
    return _ratio(num, den)


# =============================================================================
# VOLUMES AND RADIAL INTEGRALS
# =============================================================================

def ball_volume(R: float, gp: GroupParams, qs: QuadratureSpec, center=None) -> Estimate:
    """
    Haar volume of the Koranyi ball of radius R around `center` (origin by default).

    Uniform draws in the bounding box of center o B_R:
    z within R of the center's z, t within R^2 + 2R|z_c| of t_c.
    """
    if not R > 0:
        raise InvalidArgumentError(f"radius must be positive, got {R}")
    c = np.zeros(gp.dim) if center is None else np.asarray(
        center.as_array() if hasattr(center, "as_array") else center, dtype=float)
    if c.shape != (gp.dim,):
        raise InvalidArgumentError(f"center must have {gp.dim} coordinates")
    z_norm = float(np.linalg.norm(c[:-1]))
    half = np.array([R] * (2 * gp.N) + [R * R + 2.0 * R * z_norm])
    box = float(np.prod(2.0 * half))

    if qs.method == config.METHOD_GRID:
        if center is None:
            return _grid_integral(lambda pts: np.ones(pts.shape[0]), R, gp, qs)
        raise InvalidArgumentError("tensor-grid volumes are centered at the origin")

    def work(index: int, count: int) -> _Moments:
        rng = stream(qs.seed, config.STREAM_VOLUME, 0, index)
        pts = c + (2.0 * rng.random((count, gp.dim)) - 1.0) * half
        inside = (hdist_arr(pts, c) < R).astype(float)
        return _Moments.of(inside * box)

    acc = _run_chunks(work, qs.samples)
    return Estimate(acc.mean, acc.stderr(), acc.n)


def radial_integral(f: Callable[[float], float], gp: GroupParams, lo: float = 0.0,
                    hi: float = np.inf, qs: Optional[QuadratureSpec] = None) -> Estimate:
    """
    c * int_lo^hi f(rho) rho^(Q-1) drho, c the polar sphere constant, so
    f = 1 on [0, 1] gives the unit-ball volume.

    Without qs, c = Q * alpha_Q in closed form. With qs, c is calibrated
    from a sampled ball_volume(1) = c / Q and its stderr is carried into
    the result.

    Adaptive refinement that does not settle raises DivergenceError.
    """
    Q = gp.Q
    if qs is None:
        c, c_err, calibration_samples = sphere_measure(gp), 0.0, 0
    else:
        vol = ball_volume(1.0, gp, qs)
        c, c_err, calibration_samples = Q * vol.value, Q * vol.stderr, vol.samples_used
    result = integrate.quad(lambda rho: f(rho) * rho ** (Q - 1), lo, hi, limit=200, full_output=1)
    value, abserr, info = result[0], result[1], result[2]
    if len(result) > 3 or not np.isfinite(value):
        raise DivergenceError(
            f"radial integral on [{lo}, {hi}] did not converge: {result[3] if len(result) > 3 else value}")
    stderr = float(np.hypot(c * abserr, c_err * abs(value)))
    return Estimate(c * value, stderr, int(info.get("neval", 0)) + calibration_samples)


def volume_constant(gp: GroupParams) -> float:
    """alpha_Q, so that |B_R| = alpha_Q R^Q"""
    return unit_ball_volume(gp)


if __name__ == "__main__":
    from heisenberg.hgroup import critical_exponent

    gp = critical_exponent(1, 0.25)
    qs = QuadratureSpec(samples=200_000, seed=7)
    v1 = ball_volume(1.0, gp, qs)
    v2 = ball_volume(2.0, gp, qs)
    print(f"|B_1| = {v1.value:.5f} +/- {v1.stderr:.5f}  (closed form {volume_constant(gp):.5f})")
    print(f"|B_2|/|B_1| = {v2.value / v1.value:.4f}  (2^Q = {2 ** gp.Q})")
