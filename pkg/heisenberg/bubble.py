"""
Extremal Bubble Family
The extremal profile U, its normalizations (u-bar, u*), the concentrated
bubbles U_eps, the smooth cutoff phi and the truncated test family u_eps.

Chain of definitions (C = 1 by default):
    U(x,y,t)  = C / (t^2 + (1+|x|^2+|y|^2)^2)^((Q-2s)/4)
    ubar      = U / kappa                       kappa = ||U||_{L^Q*}
    u*(p)     = ubar(delta_{1/sigma} p)         sigma = S^(1/2s)
    U_eps(p)  = eps^(-(Q-2s)/2) u*(delta_{1/eps} p)
    u_eps     = U_eps * phi,   phi = psi((|p| - r) / r)
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy.special import gamma

from heisenberg import config, records
from heisenberg.errors import InvalidArgumentError
from heisenberg.hgroup import (
    GroupParams, GroupPoint, _split, compose_arr, critical_exponent, dilate_arr, dilate_rows,
    hdist_arr, hnorm_arr, sample_directions,
)
from heisenberg.rng import stream

logger = logging.getLogger(__name__)


# =============================================================================
# SCALAR FIELDS
# =============================================================================

@dataclass(frozen=True)
class ScalarField:
    """
    A real function on H^N evaluated on (n, 2N+1) point arrays.

    support: radius of a Koranyi ball containing the support, if compact
    scale: concentration length used by importance samplers
    decay: (A, alpha) with |u(p)| <= A |p|^-alpha for full-space fields
    """
    func: Callable[[np.ndarray], np.ndarray]
    label: str
    support: Optional[float] = None
    scale: float = 1.0
    decay: Optional[Tuple[float, float]] = None

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return np.asarray(self.func(pts), dtype=float)

    def at(self, p: GroupPoint) -> float:
        return float(self(p.as_array()[None, :])[0])

    def critical_rescale(self, lam: float, gp: GroupParams) -> "ScalarField":
        """u_lam(p) = lam^((Q-2s)/2) u(delta_lam p); preserves [u]^2 and ||u||_Q*"""
        if not lam > 0:
            raise InvalidArgumentError(f"rescale factor must be positive, got {lam}")
        f = self.func
        amp = lam ** (gp.bubble_exponent / 2.0)
        decay = None
        if self.decay is not None:
            a, alpha = self.decay
            decay = (amp * a * lam ** (-alpha), alpha)
        return ScalarField(
            func=lambda pts: amp * f(dilate_arr(lam, pts)),
            label=f"{self.label}@{lam:g}",
            support=None if self.support is None else self.support / lam,
            scale=self.scale / lam,
            decay=decay,
        )


def zero_field(label: str = "zero", support: float = 1.0) -> ScalarField:
    return ScalarField(func=lambda pts: np.zeros(pts.shape[:-1]), label=label, support=support)


# =============================================================================
# BUBBLE SPEC
# =============================================================================

@dataclass(frozen=True)
class BubbleSpec:
    """Parameters of the bubble family; kappa and sigma carry provenance"""
    params: GroupParams
    C: float = config.BUBBLE_C
    kappa: float = 1.0
    sigma: float = 1.0
    eps: float = config.DEFAULT_EPS
    r: float = config.CUTOFF_RADIUS
    provenance: Dict[str, dict] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("C", "kappa", "sigma", "eps", "r"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise InvalidArgumentError(f"BubbleSpec.{name} must be positive, got {value}")

    def with_eps(self, eps: float) -> "BubbleSpec":
        return replace(self, eps=float(eps))

    @property
    def concentration(self) -> float:
        """Width of U_eps: eps * sigma"""
        return self.eps * self.sigma

    @property
    def amplitude(self) -> float:
        """U_eps = amplitude * U(delta_{1/concentration} p)"""
        return self.eps ** (-self.params.bubble_exponent / 2.0) / self.kappa

    def to_dict(self) -> dict:
        return {
            "N": self.params.N,
            "s": self.params.s,
            "C": self.C,
            "kappa": self.kappa,
            "sigma": self.sigma,
            "eps": self.eps,
            "r": self.r,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BubbleSpec":
        try:
            gp = critical_exponent(int(data["N"]), float(data["s"]))
            return cls(params=gp, C=float(data["C"]), kappa=float(data["kappa"]),
                       sigma=float(data["sigma"]), eps=float(data["eps"]), r=float(data["r"]),
                       provenance=dict(data.get("provenance", {})))
        except KeyError as e:
            raise InvalidArgumentError(f"BubbleSpec document missing field {e}")

    def save(self, path: Path, extra: Optional[dict] = None):
        doc = self.to_dict()
        if extra:
            doc.update(extra)
        records.write_json(path, doc)

    @classmethod
    def load(cls, path: Path) -> "BubbleSpec":
        return cls.from_dict(records.read_json(path))


def make_spec(N: int = config.DEFAULT_N, s: float = config.DEFAULT_S, **kwargs) -> BubbleSpec:
    """BubbleSpec with given kappa/sigma (defaults 1, provenance 'fixed')"""
    gp = critical_exponent(N, s)
    provenance = kwargs.pop("provenance", None)
    if provenance is None:
        provenance = {
            "kappa": {"method": "fixed"},
            "sigma": {"method": "fixed"},
        }
    return BubbleSpec(params=gp, provenance=provenance, **kwargs)


# =============================================================================
# PROFILE EVALUATION (array forms)
# =============================================================================

def _profile_denominator(pts: np.ndarray) -> np.ndarray:
    x, y, t = _split(pts)
    a = 1.0 + np.sum(x * x, axis=-1) + np.sum(y * y, axis=-1)
    return t * t + a * a


def U_values(spec: BubbleSpec, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    beta = spec.params.bubble_exponent / 4.0
    return spec.C * _profile_denominator(pts) ** (-beta)


def U_eps_values(spec: BubbleSpec, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    return spec.amplitude * U_values(spec, dilate_arr(1.0 / spec.concentration, pts))


def smooth_step(x) -> np.ndarray:
    """
    psi(x) = 1 for x <= 0, 0 for x >= 1, and f(1-x) / (f(1-x) + f(x)) in
    between, with f(x) = exp(-1/x) for x > 0.

    Examples:
        psi(0.5) = 0.5
    """
    x = np.asarray(x, dtype=float)
    inner = np.clip(x, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        f_left = np.where(inner < 1.0, np.exp(-1.0 / np.where(inner < 1.0, 1.0 - inner, 1.0)), 0.0)
        f_right = np.where(inner > 0.0, np.exp(-1.0 / np.where(inner > 0.0, inner, 1.0)), 0.0)
    out = f_left / (f_left + f_right)
    out = np.where(x <= 0.0, 1.0, out)
    return np.where(x >= 1.0, 0.0, out)


def cutoff_values(r: float, pts) -> np.ndarray:
    if not r > 0:
        raise InvalidArgumentError(f"cutoff radius must be positive, got {r}")
    return smooth_step((hnorm_arr(pts) - r) / r)


def u_eps_values(spec: BubbleSpec, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    rho = hnorm_arr(pts)
    out = np.zeros(rho.shape)
    inside = rho < 2.0 * spec.r
    if np.any(inside):
        sub = pts[inside]
        out[inside] = U_eps_values(spec, sub) * smooth_step((rho[inside] - spec.r) / spec.r)
    return out


def grad_U_values(spec: BubbleSpec, pts) -> np.ndarray:
    """
    Horizontal gradient (X_1..X_N, Y_1..Y_N) of U.

    With D = t^2 + a^2, a = 1+|z|^2:
        X_j D = 4 x_j a + 4 y_j t,  Y_j D = 4 y_j a - 4 x_j t
        X_j U = -beta C D^(-beta-1) X_j D,  beta = (Q-2s)/4
    """
    pts = np.asarray(pts, dtype=float)
    x, y, t = _split(pts)
    a = 1.0 + np.sum(x * x, axis=-1) + np.sum(y * y, axis=-1)
    D = t * t + a * a
    beta = spec.params.bubble_exponent / 4.0
    factor = (-beta * spec.C * D ** (-beta - 1.0))[..., None]
    XD = 4.0 * (x * a[..., None] + y * t[..., None])
    YD = 4.0 * (y * a[..., None] - x * t[..., None])
    return np.concatenate([factor * XD, factor * YD], axis=-1)


def grad_U_eps_values(spec: BubbleSpec, pts) -> np.ndarray:
    """X_j, Y_j are 1-homogeneous: X(f o delta_a) = a (Xf) o delta_a"""
    inv = 1.0 / spec.concentration
    pts = np.asarray(pts, dtype=float)
    return spec.amplitude * inv * grad_U_values(spec, dilate_arr(inv, pts))


# =============================================================================
# POINT OPERATIONS
# =============================================================================

def eval_U(spec: BubbleSpec, p: GroupPoint) -> float:
    return float(U_values(spec, p.as_array()))


def eval_U_eps(spec: BubbleSpec, p: GroupPoint) -> float:
    return float(U_eps_values(spec, p.as_array()))


def eval_u_eps(spec: BubbleSpec, p: GroupPoint) -> float:
    return float(u_eps_values(spec, p.as_array()[None, :])[0])


def eval_cutoff(r: float, p: GroupPoint) -> float:
    return float(cutoff_values(r, p.as_array()))


def horizontal_gradient_U_eps(spec: BubbleSpec, p: GroupPoint) -> np.ndarray:
    return grad_U_eps_values(spec, p.as_array())


# =============================================================================
# FIELDS OF THE FAMILY
# =============================================================================

def U_field(spec: BubbleSpec) -> ScalarField:
    # t^2 + (1+|z|^2)^2 >= |p|^4, so U <= C |p|^-(Q-2s)
    return ScalarField(func=lambda pts: U_values(spec, pts), label="U",
                       scale=1.0, decay=(spec.C, spec.params.bubble_exponent))


def ubar_field(spec: BubbleSpec) -> ScalarField:
    return ScalarField(func=lambda pts: U_values(spec, pts) / spec.kappa, label="ubar",
                       scale=1.0, decay=(spec.C / spec.kappa, spec.params.bubble_exponent))


def ustar_field(spec: BubbleSpec) -> ScalarField:
    alpha = spec.params.bubble_exponent
    inv = 1.0 / spec.sigma
    return ScalarField(func=lambda pts: U_values(spec, dilate_arr(inv, pts)) / spec.kappa,
                       label="u*", scale=spec.sigma,
                       decay=(spec.C / spec.kappa * spec.sigma ** alpha, alpha))


def U_eps_field(spec: BubbleSpec) -> ScalarField:
    alpha = spec.params.bubble_exponent
    amp = spec.amplitude * spec.C * spec.concentration ** alpha
    return ScalarField(func=lambda pts: U_eps_values(spec, pts), label=f"U_eps[{spec.eps:g}]",
                       scale=spec.concentration, decay=(amp, alpha))


def u_eps_field(spec: BubbleSpec) -> ScalarField:
    return ScalarField(func=lambda pts: u_eps_values(spec, pts), label=f"u_eps[{spec.eps:g}]",
                       support=2.0 * spec.r, scale=min(spec.concentration, spec.r))


def critical_excess_field(spec: BubbleSpec) -> ScalarField:
    """|u_eps|^Q* - |U_eps|^Q*, nonpositive and supported outside B_r"""
    p = spec.params.Qstar
    alpha = spec.params.bubble_exponent
    amp = spec.amplitude * spec.C * spec.concentration ** alpha

    def func(pts):
        big = U_eps_values(spec, pts)
        phi = cutoff_values(spec.r, pts)
        return (phi ** p - 1.0) * big ** p

    return ScalarField(func=func, label=f"crit_excess[{spec.eps:g}]",
                       scale=spec.concentration, decay=(amp ** p, alpha * p))


# =============================================================================
# CLOSED FORMS
# =============================================================================

def exact_lp_power(spec: BubbleSpec, p: float) -> float:
    """
    Integral of U^p over H^N.

    With gamma = p(Q-2s)/4, integrating t gives a^(1-2 gamma) sqrt(pi)
    Gamma(gamma-1/2)/Gamma(gamma), a = 1+|z|^2, and the z integral over
    R^2N is pi^N Gamma(2 gamma-1-N)/Gamma(2 gamma-1).
    """
    gp = spec.params
    g = p * gp.bubble_exponent / 4.0
    if 2.0 * g - 1.0 - gp.N <= 0:
        raise InvalidArgumentError(f"U is not in L^{p} for N={gp.N}, s={gp.s}")
    t_part = np.sqrt(np.pi) * gamma(g - 0.5) / gamma(g)
    z_part = np.pi ** gp.N * gamma(2.0 * g - 1.0 - gp.N) / gamma(2.0 * g - 1.0)
    return float(spec.C ** p * t_part * z_part)


def exact_kappa(spec: BubbleSpec) -> float:
    p = spec.params.Qstar
    return exact_lp_power(spec, p) ** (1.0 / p)


# =============================================================================
# CONSTANTS WITH PROVENANCE
# =============================================================================

def mode_sigma(mode: str, sobolev_sigma: float) -> float:
    """Dilation scale for a sigma mode; sobolev_sigma is S^(1/2s)"""
    if mode == "sweep":
        return config.SWEEP_SIGMA
    if mode == "unit":
        return 1.0
    if mode == "sobolev":
        return sobolev_sigma
    raise InvalidArgumentError(f"unknown sigma mode {mode!r}")


def compute_constants(N: int, s: float, qs, sigma_mode: str = config.SIGMA_MODE,
                      eps: float = config.DEFAULT_EPS, r: float = config.CUTOFF_RADIUS) -> Tuple[BubbleSpec, Dict]:
    """
    Estimate kappa = ||U||_Q*, S = [ubar]^2 and sigma = S^(1/2s).

    Returns the populated spec and a report dict of the estimates.
    """
    from heisenberg import quad

    if sigma_mode not in config.SIGMA_MODES:
        raise InvalidArgumentError(f"unknown sigma mode {sigma_mode!r}")

    gp = critical_exponent(N, s)
    base = make_spec(N, s, eps=eps, r=r)

    logger.info(f"Estimating kappa = ||U||_Q* (N={N}, s={s}, samples={qs.samples})")
    kappa_est = quad.lp_norm(U_field(base), gp.Qstar, gp, qs)
    kappa = kappa_est.value
    closed = exact_kappa(base)
    logger.info(f"  kappa = {kappa:.6f} +/- {kappa_est.stderr:.2e} (closed form {closed:.6f})")

    normalized = replace(base, kappa=kappa)
    logger.info("Estimating S = [ubar]^2 / ||ubar||^2_Q*")
    s_est = quad.sobolev_quotient(ubar_field(normalized), gp, qs)
    sobolev = s_est.value
    sigma = sobolev ** (1.0 / (2.0 * s))
    sigma_err = sigma / (2.0 * s) * s_est.stderr / sobolev
    logger.info(f"  S = {sobolev:.6f} +/- {s_est.stderr:.2e}, sigma = {sigma:.6g}")

    provenance = {
        "kappa": {"method": qs.method, "spec_hash": qs.spec_hash(), "value": kappa,
                  "stderr": kappa_est.stderr, "closed_form": closed},
        "sigma": {"method": qs.method, "spec_hash": qs.spec_hash(), "value": sigma,
                  "stderr": sigma_err, "sobolev": sobolev, "sobolev_stderr": s_est.stderr},
    }
    used_sigma = mode_sigma(sigma_mode, sigma)
    provenance["sigma"]["mode"] = sigma_mode

    spec = replace(normalized, sigma=used_sigma, provenance=provenance)
    report = {
        "kappa": kappa,
        "kappa_stderr": kappa_est.stderr,
        "kappa_closed_form": closed,
        "sobolev": sobolev,
        "sobolev_stderr": s_est.stderr,
        "sigma": sigma,
        "sigma_stderr": sigma_err,
        "sigma_mode": sigma_mode,
    }
    return spec, report


# =============================================================================
# EMPIRICAL LEMMA CONSTANTS
# =============================================================================

def _annulus_points(gp: GroupParams, inner: float, outer: float, count: int, seed: int, key: int) -> np.ndarray:
    """Points with inner < |p| < outer, radius uniform in Haar measure"""
    rng = stream(seed, config.STREAM_SUP, key)
    dirs = sample_directions(rng, count, gp)
    u = rng.random(count)
    Q = gp.Q
    rho = (inner ** Q + u * (outer ** Q - inner ** Q)) ** (1.0 / Q)
    rho = np.maximum(rho, np.nextafter(inner, np.inf))
    return dilate_rows(rho, dirs)


def sup_ratio(spec: BubbleSpec, rho: Optional[float] = None,
              samples: int = config.SUP_SAMPLES, seed: int = 0) -> float:
    """sup over |p| > rho of u_eps(p) / eps^((Q-2s)/2)"""
    rho = 0.5 * spec.r if rho is None else rho
    pts = _annulus_points(spec.params, rho, 2.0 * spec.r, samples, seed, 0)
    return float(np.max(u_eps_values(spec, pts)) / spec.eps ** (spec.params.bubble_exponent / 2.0))


def gradient_sup_ratio(spec: BubbleSpec, rho: Optional[float] = None,
                       samples: int = config.SUP_SAMPLES, seed: int = 0) -> float:
    """sup over |p| > rho of |grad_H U_eps(p)| / eps^((Q-2s)/2)"""
    rho = 0.5 * spec.r if rho is None else rho
    pts = _annulus_points(spec.params, rho, 2.0 * spec.r, samples, seed, 1)
    grad = np.linalg.norm(grad_U_eps_values(spec, pts), axis=-1)
    return float(np.max(grad) / spec.eps ** (spec.params.bubble_exponent / 2.0))


def increment_constant(spec: BubbleSpec, samples: int = config.PAIR_SAMPLES, seed: int = 0) -> Dict:
    """
    Empirical sup |u_eps(xi) - u_eps(eta)| / (eps^((Q-2s)/2) min{1, d(xi, eta)})
    over pairs with eta outside B_r.

    eta is drawn in B_3r minus B_r; xi = eta o zeta with |zeta| log-uniform
    in [1e-3 r, 3r]. Pairs are kept when xi is also outside B_r, or when
    d(xi, eta) <= r/2 (the near-pair case).
    """
    gp = spec.params
    r = spec.r
    eta = _annulus_points(gp, r, 3.0 * r, samples, seed, 2)
    rng = stream(seed, config.STREAM_PAIRS, 0)
    dirs = sample_directions(rng, samples, gp)
    radii = r * 1e-3 * (3.0e3) ** rng.random(samples)
    zeta = dilate_rows(radii, dirs)
    xi = compose_arr(eta, zeta)
    d = hdist_arr(xi, eta)
    outside = hnorm_arr(xi) >= r
    near = d <= 0.5 * r
    keep = (outside | near) & (d > 0.0)

    num = np.abs(u_eps_values(spec, xi[keep]) - u_eps_values(spec, eta[keep]))
    scale = spec.eps ** (gp.bubble_exponent / 2.0)
    ratio = num / (scale * np.minimum(1.0, d[keep]))
    both_far = (hnorm_arr(xi[keep]) >= 2.0 * r) & (hnorm_arr(eta[keep]) >= 2.0 * r)
    return {
        "eps": spec.eps,
        "constant": float(np.max(ratio)) if ratio.size else 0.0,
        "constant_outside": float(np.max(ratio[outside[keep]])) if np.any(outside[keep]) else 0.0,
        "constant_near": float(np.max(ratio[near[keep]])) if np.any(near[keep]) else 0.0,
        "pairs": int(np.count_nonzero(keep)),
        "far_pairs_zero": bool(np.all(num[both_far] == 0.0)),
    }


def increment_bound_check(spec: BubbleSpec, samples: int = config.PAIR_SAMPLES, seed: int = 0,
                          eps_grid=(0.5, 0.25, 0.125)) -> Dict:
    """Increment constants per eps; fails if any constant exceeds MAX_CONSTANT_GROWTH times another"""
    rows = [increment_constant(spec.with_eps(e), samples, seed) for e in eps_grid]
    constants = [row["constant"] for row in rows]
    lo = min(constants)
    growth = max(constants) / lo if lo > 0 else float("inf")
    return {
        "rows": rows,
        "growth": growth,
        "pass": bool(growth <= config.MAX_CONSTANT_GROWTH),
    }


if __name__ == "__main__":
    spec = make_spec(1, 0.5)
    p = GroupPoint([0.0], [0.0], np.sqrt(3.0))
    print(f"U(0,0,sqrt3) = {eval_U(spec, p):.6f}  (4^-3/4 = {4 ** -0.75:.6f})")
    print(f"int U^Q* = {exact_lp_power(spec, spec.params.Qstar):.6f}")
    print(f"psi(0.5) = {float(smooth_step(0.5))}")
