"""
Discrete Variational Solver
Point-cloud discretization of a Koranyi ball Omega, the nonlocal quadratic
form of zero-extended fields, the first Dirichlet-type eigenpair, and the
minimization of the lambda-perturbed critical quotient.

Form on a cloud {p_i} with weights w_i and exterior diagonal kappa_i:
    Q(u, v) = sum_{i != j} w_i w_j (u_i - u_j)(v_i - v_j) K_ij + 2 sum_i w_i kappa_i u_i v_i
    K_ij    = d(p_i, p_j)^-(Q+2s), averaged over an annulus when d < h
    kappa_i = integral of d(p_i, eta)^-(Q+2s) over eta outside Omega
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from heisenberg import config, records
from heisenberg.bubble import ScalarField, make_spec, u_eps_field
from heisenberg.errors import (
    AssemblyError, ConvergenceError, InvalidArgumentError, StagnationError, UnderResolvedError,
)
from heisenberg.hgroup import (
    GroupParams, compose_arr, critical_exponent, dilate_rows, hdist_arr, hnorm_arr,
    sample_directions, unit_ball_volume,
)
from heisenberg.quad import radial_integral
from heisenberg.rng import stream

logger = logging.getLogger(__name__)

EXIT_GRID = 16          # coarse steps before bisecting a ray's exit radius
EXIT_BISECTIONS = 48
POLISH_FACTOR = 100.0   # |u| is taken once the residual is within this factor of tol


# =============================================================================
# TYPES
# =============================================================================

@dataclass(frozen=True)
class SolverConfig:
    tol: float = config.QUOTIENT_TOL
    max_iter: int = config.QUOTIENT_MAX_ITER
    seed: int = 0

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidArgumentError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise InvalidArgumentError(f"max_iter must be >= 1, got {self.max_iter}")

    def to_dict(self) -> dict:
        return {"tol": self.tol, "max_iter": self.max_iter, "seed": self.seed}

    def save(self, path: Path, extra: Optional[dict] = None):
        doc = self.to_dict()
        if extra:
            doc.update(extra)
        records.write_json(path, doc)

    @classmethod
    def load(cls, path: Path, defaults: Optional["SolverConfig"] = None) -> "SolverConfig":
        """Keys missing from the file fall back to defaults"""
        defaults = cls() if defaults is None else defaults
        try:
            data = records.read_json(path)
            return cls(tol=float(data.get("tol", defaults.tol)),
                       max_iter=int(data.get("max_iter", defaults.max_iter)),
                       seed=int(data.get("seed", defaults.seed)))
        except (OSError, ValueError, TypeError, AttributeError) as e:
            raise InvalidArgumentError(f"cannot read solver config {path}: {e}")


@dataclass(frozen=True)
class DiscreteField:
    values: np.ndarray
    label: str = "u"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise InvalidArgumentError(f"field values must be a vector, got shape {values.shape}")
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size

    def save(self, path: Path, extra: Optional[dict] = None):
        header = {"kind": "field", "label": self.label, "n": int(self.values.size)}
        if extra:
            header.update(extra)
        records.write_container(path, header, {"values": self.values})

    @classmethod
    def load(cls, path: Path) -> "DiscreteField":
        header, arrays = records.read_container(path)
        if header.get("kind") != "field":
            raise InvalidArgumentError(f"{path} does not hold a field")
        return cls(arrays["values"], header.get("label", "u"))


@dataclass(frozen=True, eq=False)
class DiscreteDomain:
    """
    Quadrature cloud over B_radius(0).

    points: (n, 2N+1); weights sum to |B_radius|; exterior_diag >= 0;
    h is the nominal cell size (cells are h x h x h^2 in z, t).
    """
    points: np.ndarray
    weights: np.ndarray
    exterior_diag: np.ndarray
    h: float
    radius: float
    gp: GroupParams
    seed: int = 0

    def __post_init__(self):
        n = self.points.shape[0]
        if self.points.shape != (n, self.gp.dim):
            raise InvalidArgumentError(f"points must have shape (n, {self.gp.dim}), got {self.points.shape}")
        if self.weights.shape != (n,) or self.exterior_diag.shape != (n,):
            raise InvalidArgumentError("weights and exterior_diag must match the point count")
        if np.any(self.weights <= 0):
            raise InvalidArgumentError("quadrature weights must be positive")
        if not np.all(np.isfinite(self.exterior_diag)) or np.any(self.exterior_diag < 0):
            raise InvalidArgumentError("exterior diagonal must be finite and nonnegative")
        if np.any(hnorm_arr(self.points) >= self.radius):
            raise InvalidArgumentError(f"all points must lie inside B_{self.radius:g}")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def volume(self) -> float:
        return float(np.sum(self.weights))

    def field(self, values, label: str = "u") -> DiscreteField:
        f = values if isinstance(values, DiscreteField) else DiscreteField(values, label)
        if len(f) != self.n:
            raise InvalidArgumentError(f"field has {len(f)} values, domain has {self.n} points")
        return f

    def interpolate(self, u: ScalarField) -> DiscreteField:
        """Point values of a continuum field"""
        return DiscreteField(u(self.points), u.label)

    def restrict(self, radius: float) -> "DiscreteDomain":
        """
        Sub-cloud inside B_radius. Interactions with the dropped points go
        into the exterior diagonal, so the restricted form is exactly the
        full form on fields vanishing at the dropped points.
        """
        if not 0 < radius <= self.radius:
            raise InvalidArgumentError(f"restriction radius must lie in (0, {self.radius:g}]")
        keep = hnorm_arr(self.points) < radius
        if np.count_nonzero(keep) < config.MIN_POINTS:
            raise UnderResolvedError(
                f"only {np.count_nonzero(keep)} points inside B_{radius:g}, need {config.MIN_POINTS}")
        kept, dropped = self.points[keep], self.points[~keep]
        extra = np.zeros(kept.shape[0])
        if dropped.shape[0]:
            k_reg = _regularized_kernel(self.h, self.gp)
            for start in range(0, kept.shape[0], config.ASSEMBLY_BLOCK):
                stop = min(start + config.ASSEMBLY_BLOCK, kept.shape[0])
                K = _kernel_block(kept[start:stop], dropped, self.h, self.gp, k_reg)
                extra[start:stop] = K @ self.weights[~keep]
        return DiscreteDomain(kept, self.weights[keep].copy(), self.exterior_diag[keep] + extra,
                              self.h, float(radius), self.gp, self.seed)

    def save(self, path: Path, extra: Optional[dict] = None):
        header = dict(extra or {})
        header.update({"kind": "domain", "N": self.gp.N, "s": self.gp.s, "h": self.h,
                       "radius": self.radius, "seed": self.seed, "n": self.n})
        records.write_container(path, header, {
            "points": self.points, "weights": self.weights, "exterior_diag": self.exterior_diag,
        })

    @classmethod
    def load(cls, path: Path) -> "DiscreteDomain":
        header, arrays = records.read_container(path)
        if header.get("kind") != "domain":
            raise InvalidArgumentError(f"{path} does not hold a domain")
        gp = critical_exponent(int(header["N"]), float(header["s"]))
        return cls(arrays["points"], arrays["weights"], arrays["exterior_diag"],
                   float(header["h"]), float(header["radius"]), gp, int(header["seed"]))


class SpectralResult(NamedTuple):
    eigenvalue: float
    eigenvector: DiscreteField
    residual: float
    iterations: int
    sign_violations: int


class MinimizerResult(NamedTuple):
    value: float
    minimizer: DiscreteField
    residual: float
    iterations: int


# =============================================================================
# DOMAIN
# =============================================================================

def _exit_radii(points: np.ndarray, dirs: np.ndarray, R: float) -> np.ndarray:
    """
    First rho with |p o delta_rho(omega)| >= R for every point/direction pair.
    The exit lies in [R - |p|, R + |p|] by the triangle inequality.
    """
    n, m = points.shape[0], dirs.shape[0]
    base = np.repeat(points, m, axis=0)
    omega = np.tile(dirs, (n, 1))
    norms = np.repeat(hnorm_arr(points), m)
    lo = np.maximum(R - norms, 0.0)
    hi = R + norms

    def outside(rho):
        return hnorm_arr(compose_arr(base, dilate_rows(rho, omega))) >= R

    a = lo.copy()
    b = hi.copy()
    found = np.zeros(base.shape[0], dtype=bool)
    prev = lo
    for k in range(1, EXIT_GRID + 1):
        rho = lo + (hi - lo) * k / EXIT_GRID
        hit = ~found & outside(rho)
        a[hit] = prev[hit]
        b[hit] = rho[hit]
        found |= hit
        prev = rho
    a[~found] = lo[~found] + (hi[~found] - lo[~found]) * (EXIT_GRID - 1) / EXIT_GRID
    for _ in range(EXIT_BISECTIONS):
        mid = 0.5 * (a + b)
        out = outside(mid)
        b = np.where(out, mid, b)
        a = np.where(out, a, mid)
    return b.reshape(n, m)


def exterior_diagonal(points: np.ndarray, R: float, gp: GroupParams, seed: int = 0,
                      directions: int = config.EXTERIOR_DIRECTIONS) -> np.ndarray:
    """
    kappa_i over the complement of B_R, in polar form around p_i: rays are
    taken to leave the ball once, so the radial part beyond the exit radius
    is rho*^-2s times the unit tail c * int_1^inf rho^-(1+2s) drho.
    """
    unit_tail = radial_integral(lambda rho: rho ** (-gp.Q - 2.0 * gp.s), gp, 1.0, np.inf).value
    dirs = sample_directions(stream(seed, config.STREAM_DOMAIN, 1), directions, gp)
    out = np.empty(points.shape[0])
    for start in range(0, points.shape[0], config.ASSEMBLY_BLOCK):
        stop = min(start + config.ASSEMBLY_BLOCK, points.shape[0])
        exits = _exit_radii(points[start:stop], dirs, R)
        out[start:stop] = unit_tail * np.mean(exits ** (-2.0 * gp.s), axis=1)
    return out


def build_domain(radius: float, n: int, gp: GroupParams, seed: int = 0) -> DiscreteDomain:
    """
    Jittered anisotropic grid over B_radius: cells of width d in each z
    coordinate and d^2 in t, d = (|B_radius| / n)^(1/Q), one uniform point per
    cell, points outside the ball dropped. Weights are equal and sum to
    |B_radius| = alpha_Q radius^Q.
    """
    if not radius > 0:
        raise InvalidArgumentError(f"domain radius must be positive, got {radius}")
    if n < config.MIN_POINTS:
        raise UnderResolvedError(f"n = {n} points is below the minimum of {config.MIN_POINTS}")
    volume = unit_ball_volume(gp) * radius ** gp.Q
    d = (volume / n) ** (1.0 / gp.Q)

    m_z = int(np.ceil(2.0 * radius / d))
    m_t = int(np.ceil(2.0 * radius * radius / (d * d)))
    widths = np.array([2.0 * radius / m_z] * (2 * gp.N) + [2.0 * radius * radius / m_t])
    lows = np.array([-radius] * (2 * gp.N) + [-radius * radius])
    axes = [np.arange(m_z)] * (2 * gp.N) + [np.arange(m_t)]
    cells = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, gp.dim)

    rng = stream(seed, config.STREAM_DOMAIN, 0)
    points = lows + (cells + rng.random(cells.shape)) * widths
    points = points[hnorm_arr(points) < radius]
    if points.shape[0] < config.MIN_POINTS:
        raise UnderResolvedError(
            f"only {points.shape[0]} cells fall inside B_{radius:g}; raise n")
    weights = np.full(points.shape[0], volume / points.shape[0])

    logger.info(f"Domain: B_{radius:g}, {points.shape[0]} points (requested {n}), h = {d:.4f}")
    kappa = exterior_diagonal(points, radius, gp, seed)
    return DiscreteDomain(points, weights, kappa, float(d), float(radius), gp, int(seed))


# =============================================================================
# FORM ASSEMBLY
# =============================================================================

def _regularized_kernel(h: float, gp: GroupParams) -> float:
    """Mean of |zeta|^-(Q+2s) over the annulus h/2 < |zeta| < 3h/2"""
    mass = radial_integral(lambda rho: rho ** (-gp.Q - 2.0 * gp.s), gp, 0.5 * h, 1.5 * h).value
    vol = unit_ball_volume(gp) * ((1.5 * h) ** gp.Q - (0.5 * h) ** gp.Q)
    return mass / vol


def _kernel_block(rows: np.ndarray, cols: np.ndarray, h: float, gp: GroupParams, k_reg: float) -> np.ndarray:
    d = hdist_arr(rows[:, None, :], cols[None, :, :])
    with np.errstate(divide="ignore"):
        far = d ** (-gp.Q - 2.0 * gp.s)
    return np.where(d < h, k_reg, far)


@dataclass(frozen=True, eq=False)
class NonlocalForm:
    """Dense symmetric matrix of Q and the mass weights"""
    matrix: np.ndarray
    weights: np.ndarray
    gp: GroupParams

    def __call__(self, u, v) -> float:
        u = _values(u)
        v = _values(v)
        return float(0.5 * (u @ (self.matrix @ v) + v @ (self.matrix @ u)))

    def apply(self, u) -> np.ndarray:
        return self.matrix @ _values(u)

    def mass(self, u, v) -> float:
        return float(np.sum(self.weights * _values(u) * _values(v)))

    def rayleigh(self, u) -> float:
        return self(u, u) / self.mass(u, u)


def _values(u) -> np.ndarray:
    return u.values if isinstance(u, DiscreteField) else np.asarray(u, dtype=float)


def assemble_form(dom: DiscreteDomain, gp: Optional[GroupParams] = None) -> NonlocalForm:
    gp = dom.gp if gp is None else gp
    if gp != dom.gp:
        raise InvalidArgumentError(f"group parameters {gp} do not match the domain's {dom.gp}")
    n = dom.n
    P, w, kappa = dom.points, dom.weights, dom.exterior_diag
    k_reg = _regularized_kernel(dom.h, gp)
    A = np.empty((n, n))

    def fill(start: int):
        stop = min(start + config.ASSEMBLY_BLOCK, n)
        idx = np.arange(stop - start)
        K = _kernel_block(P[start:stop], P, dom.h, gp, k_reg)
        K[idx, idx + start] = 0.0
        bad = ~np.isfinite(K)
        if np.any(bad):
            i, j = np.argwhere(bad)[0]
            raise AssemblyError(f"kernel entry ({start + i}, {j}) is non-finite", int(start + i), int(j))
        W = w[start:stop, None] * w[None, :] * K
        rows = -2.0 * W
        rows[idx, idx + start] += 2.0 * np.sum(W, axis=1) + 2.0 * w[start:stop] * kappa[start:stop]
        A[start:stop] = rows

    with ThreadPoolExecutor(max_workers=max(1, config.WORKERS)) as pool:
        list(pool.map(fill, range(0, n, config.ASSEMBLY_BLOCK)))
    A = 0.5 * (A + A.T)
    logger.debug(f"Assembled {n}x{n} form, k_reg = {k_reg:.4g}")
    return NonlocalForm(A, w.copy(), gp)


# =============================================================================
# EIGENPAIR
# =============================================================================

def smallest_eigenpair(form: NonlocalForm, dom: DiscreteDomain, tol: float = config.EIGEN_TOL,
                       max_iter: int = config.EIGEN_MAX_ITER) -> SpectralResult:
    """
    Inverse iteration for A u = lambda M u from the constant field.
    residual = ||A u - lambda M u||_inf / ||M u||_inf
    """
    if not tol > 0:
        raise InvalidArgumentError(f"tol must be positive, got {tol}")
    w = dom.weights
    try:
        factor = cho_factor(form.matrix)
    except LinAlgError as e:
        raise ConvergenceError(f"form is not positive definite: {e}")

    x = np.ones(dom.n)
    x /= np.sqrt(np.sum(w * x * x))
    best = None
    for it in range(1, max_iter + 1):
        y = cho_solve(factor, w * x)
        x = y / np.sqrt(np.sum(w * y * y))
        if np.mean(x) < 0:
            x = -x
        lam = float(x @ (form.matrix @ x))
        residual = float(np.max(np.abs(form.matrix @ x - lam * w * x)) / np.max(np.abs(w * x)))
        if best is None or residual < best.residual:
            best = SpectralResult(lam, DiscreteField(x.copy(), "eigenvector"), residual, it,
                                  int(np.count_nonzero(x < 0)))
        if residual <= tol:
            break
    else:
        raise ConvergenceError(
            f"inverse iteration stopped at residual {best.residual:.3e} after {max_iter} iterations",
            best=best, residual=best.residual)

    result = SpectralResult(lam, DiscreteField(x, "eigenvector"), residual, it,
                            int(np.count_nonzero(x < 0)))
    if result.sign_violations:
        logger.warning(f"first eigenvector changes sign at {result.sign_violations} points")
    logger.info(f"lambda_1 = {lam:.8g} (residual {residual:.2e}, {it} iterations)")
    return result


# =============================================================================
# QUOTIENT, RESIDUAL, ENERGY
# =============================================================================

def weighted_norm(u, dom: DiscreteDomain, p: float) -> float:
    return float(np.sum(dom.weights * np.abs(_values(u)) ** p) ** (1.0 / p))


def discrete_quotient(u, lam: float, form: NonlocalForm, dom: DiscreteDomain) -> float:
    """(Q(u,u) - lam M(u,u)) / ||u||^2_{Q*,w}"""
    u = _values(u)
    return (form(u, u) - lam * form.mass(u, u)) / weighted_norm(u, dom, form.gp.Qstar) ** 2


def weak_residual(u, lam: float, form: NonlocalForm, dom: DiscreteDomain,
                  multiplier: float = 1.0, critical: bool = True) -> float:
    """
    Largest point-mass test of A u - lam M u - mu W |u|^(Q*-2) u, relative
    to the sizes of the three terms. critical=False drops the power term.
    """
    u = _values(dom.field(u).values)
    w = dom.weights
    Au = form.apply(u)
    r = Au - lam * w * u
    scale = np.max(np.abs(Au)) + abs(lam) * np.max(np.abs(w * u))
    if critical:
        p = form.gp.Qstar
        power = w * np.abs(u) ** (p - 2.0) * u
        r = r - multiplier * power
        scale += abs(multiplier) * np.max(np.abs(power))
    if scale == 0.0:
        raise InvalidArgumentError("weak residual of the zero field is undefined")
    return float(np.max(np.abs(r)) / scale)


def energy(u, lam: float, form: NonlocalForm, dom: DiscreteDomain) -> float:
    """1/2 Q(u,u) - lam/2 M(u,u) - 1/Q* sum w |u|^Q*"""
    u = _values(dom.field(u).values)
    p = form.gp.Qstar
    return 0.5 * form(u, u) - 0.5 * lam * form.mass(u, u) - float(np.sum(dom.weights * np.abs(u) ** p)) / p


def energy_gradient(u, lam: float, form: NonlocalForm, dom: DiscreteDomain) -> np.ndarray:
    """dI(u)[v] = gradient @ v"""
    u = _values(dom.field(u).values)
    p = form.gp.Qstar
    w = dom.weights
    return form.apply(u) - lam * w * u - w * np.abs(u) ** (p - 2.0) * u


def rescale_minimizer(u, value: float, gp: GroupParams) -> DiscreteField:
    """S^(1/(Q*-2)) u solves the equation with unit multiplier"""
    f = u if isinstance(u, DiscreteField) else DiscreteField(u)
    return DiscreteField(value ** (1.0 / (gp.Qstar - 2.0)) * f.values, "solution")


def critical_level(value: float, gp: GroupParams) -> float:
    """s/Q * S^(Q/2s): energy of the rescaled minimizer at quotient value S"""
    return gp.s / gp.Q * value ** (gp.Q / (2.0 * gp.s))


# =============================================================================
# QUOTIENT MINIMIZATION
# =============================================================================

def _start_field(dom: DiscreteDomain) -> np.ndarray:
    spec = make_spec(dom.gp.N, dom.gp.s, eps=config.START_EPS, r=dom.radius / 4.0)
    u = np.abs(u_eps_field(spec)(dom.points))
    if not np.any(u > 0):
        u = np.ones(dom.n)
    return u


def minimize_quotient(form: NonlocalForm, dom: DiscreteDomain, lam: float,
                      tol: float = config.QUOTIENT_TOL, max_iter: int = config.QUOTIENT_MAX_ITER,
                      lambda1: Optional[float] = None, start=None) -> MinimizerResult:
    """
    Minimize (Q(u,u) - lam M(u,u)) on the sphere ||u||_{Q*,w} = 1.

    Sobolev-preconditioned projected gradient: with B = A - lam M and
    g = W |u|^(p-2) u, the step moves u toward R B^-1 g (R the current
    quotient, zero gradient at fixed points) with backtracking, then
    renormalizes. Stops when weak_residual(u, lam, multiplier=R) <= tol.
    """
    gp = form.gp
    p = gp.Qstar
    w = dom.weights
    if lam < 0:
        raise InvalidArgumentError(f"lambda must be >= 0, got {lam}")
    if lambda1 is None:
        lambda1 = smallest_eigenpair(form, dom).eigenvalue
    if lam >= lambda1:
        raise InvalidArgumentError(f"lambda = {lam:.6g} must lie below lambda_1 = {lambda1:.6g}")

    B = form.matrix - lam * np.diag(w)
    factor = cho_factor(B)

    def normalize(v):
        return v / weighted_norm(v, dom, p)

    def quotient(v):
        return float(v @ (B @ v))

    u = normalize(_start_field(dom) if start is None else np.abs(_values(start)))
    value = quotient(u)
    residual = weak_residual(u, lam, form, dom, multiplier=value)
    history = [(value, residual)]
    best = MinimizerResult(value, DiscreteField(u.copy(), "minimizer"), residual, 0)
    polished = False

    for it in range(1, max_iter + 1):
        if residual <= tol and polished:
            break
        if residual <= POLISH_FACTOR * tol and not polished:
            u = normalize(np.abs(u))
            polished = True

        direction = value * cho_solve(factor, w * np.abs(u) ** (p - 2.0) * u) - u
        tau = 1.0
        while True:
            candidate = normalize(u + tau * direction)
            cand_value = quotient(candidate)
            if cand_value <= value * (1.0 + 1e-14):
                break
            tau *= 0.5
            if tau < 1e-9:
                raise StagnationError(
                    f"line search failed at quotient {value:.10g}, residual {residual:.3e}",
                    best=best, residual=best.residual)
        u, value = candidate, cand_value
        residual = weak_residual(u, lam, form, dom, multiplier=value)
        history.append((value, residual))
        if residual < best.residual:
            best = MinimizerResult(value, DiscreteField(u.copy(), "minimizer"), residual, it)

        if len(history) > config.STALL_WINDOW and residual > tol:
            old_value, old_residual = history[-1 - config.STALL_WINDOW]
            decrease = (old_value - value) / abs(old_value)
            if decrease < config.STALL_DECREASE and min(r for _, r in history[-config.STALL_WINDOW:]) >= old_residual:
                raise StagnationError(
                    f"no progress over {config.STALL_WINDOW} iterations (quotient {value:.10g}, "
                    f"residual {residual:.3e})", best=best, residual=best.residual)
    else:
        if not (residual <= tol and polished):
            raise ConvergenceError(
                f"quotient descent stopped at residual {best.residual:.3e} after {max_iter} iterations",
                best=best, residual=best.residual)
        it = max_iter

    logger.info(f"S_lambda = {value:.8g} at lambda = {lam:.6g} (residual {residual:.2e}, {it} iterations)")
    return MinimizerResult(value, DiscreteField(u, "minimizer"), residual, it)


if __name__ == "__main__":
    gp = critical_exponent(config.DEFAULT_N, config.DEFAULT_S)
    dom = build_domain(config.DOMAIN_RADIUS, 500, gp, seed=0)
    form = assemble_form(dom, gp)
    eig = smallest_eigenpair(form, dom)
    res = minimize_quotient(form, dom, 0.5 * eig.eigenvalue, lambda1=eig.eigenvalue)
    print(f"n={dom.n} h={dom.h:.4f} lambda_1={eig.eigenvalue:.6f} S_lambda={res.value:.6f}")
