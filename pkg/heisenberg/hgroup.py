"""
Heisenberg Group Algebra
Group law, inverse, dilations, Koranyi norm and distance on H^N.

Points are GroupPoint values for single use, or float arrays of shape
(..., 2N+1) laid out as [x_1..x_N, y_1..y_N, t] for batched work. Every
operation has both forms; the GroupPoint forms delegate to the array ones.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.special import beta, gamma

from heisenberg.errors import InvalidArgumentError


# =============================================================================
# TYPES
# =============================================================================

@dataclass(frozen=True, eq=False)
class GroupPoint:
    """A point (x, y, t) of H^N"""
    x: np.ndarray
    y: np.ndarray
    t: float

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        if x.ndim != 1 or x.shape != y.shape or x.size < 1:
            raise InvalidArgumentError(
                f"x and y must be vectors of equal length N >= 1, got {x.shape} and {y.shape}")
        t = float(self.t)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.isfinite(t)):
            raise InvalidArgumentError("GroupPoint coordinates must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)

    @property
    def N(self) -> int:
        return self.x.size

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.x, self.y, [self.t]])

    @classmethod
    def from_array(cls, arr) -> "GroupPoint":
        arr = np.asarray(arr, dtype=float)
        if arr.ndim != 1 or arr.size < 3 or arr.size % 2 == 0:
            raise InvalidArgumentError(f"expected a flat array of length 2N+1, got shape {arr.shape}")
        n = (arr.size - 1) // 2
        return cls(arr[:n], arr[n:2 * n], arr[-1])

    def allclose(self, other: "GroupPoint", atol: float = 1e-12) -> bool:
        return self.N == other.N and np.allclose(self.as_array(), other.as_array(), rtol=0.0, atol=atol)

    def __repr__(self):
        return f"GroupPoint(x={self.x.tolist()}, y={self.y.tolist()}, t={self.t})"


@dataclass(frozen=True)
class GroupParams:
    """N, homogeneous dimension Q = 2N+2, order s and critical exponent Q*"""
    N: int
    Q: int
    s: float
    Qstar: float

    @property
    def dim(self) -> int:
        """Topological dimension 2N+1"""
        return 2 * self.N + 1

    @property
    def bubble_exponent(self) -> float:
        """Q - 2s, the decay rate of the extremal"""
        return self.Q - 2.0 * self.s

    def to_dict(self) -> dict:
        return {"N": self.N, "Q": self.Q, "s": self.s, "Qstar": self.Qstar}


def origin(N: int) -> GroupPoint:
    return GroupPoint(np.zeros(N), np.zeros(N), 0.0)


def critical_exponent(N: int, s: float) -> GroupParams:
    """
    Group bookkeeping for (N, s).

    Examples:
        N=1, s=0.5  -> Q=4, Qstar=8/3
        N=2, s=0.75 -> Q=6, Qstar=8/3
    """
    if int(N) != N or N < 1:
        raise InvalidArgumentError(f"N must be a positive integer, got {N}")
    if not (0.0 < s < 1.0):
        raise InvalidArgumentError(f"s must lie in (0, 1), got {s}")
    N = int(N)
    Q = 2 * N + 2
    return GroupParams(N=N, Q=Q, s=float(s), Qstar=2.0 * Q / (Q - 2.0 * s))


# =============================================================================
# BATCHED ARRAY FORMS
# =============================================================================

def _split(p: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = (p.shape[-1] - 1) // 2
    return p[..., :n], p[..., n:2 * n], p[..., -1]


def _check_pair(a: np.ndarray, b: np.ndarray):
    if a.shape[-1] != b.shape[-1]:
        raise InvalidArgumentError(
            f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]} coordinates")
    if a.shape[-1] < 3 or a.shape[-1] % 2 == 0:
        raise InvalidArgumentError(f"last axis must have length 2N+1, got {a.shape[-1]}")


def compose_arr(a, b) -> np.ndarray:
    """a o b = (x+x', y+y', t+t'+2(x'.y - y'.x)), broadcast over leading axes"""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_pair(a, b)
    ax, ay, at = _split(a)
    bx, by, bt = _split(b)
    t = at + bt + 2.0 * (np.sum(bx * ay, axis=-1) - np.sum(by * ax, axis=-1))
    return np.concatenate([ax + bx, ay + by, t[..., None]], axis=-1)


def inverse_arr(a) -> np.ndarray:
    return -np.asarray(a, dtype=float)


def dilate_arr(lam: float, a) -> np.ndarray:
    if not lam > 0:
        raise InvalidArgumentError(f"dilation factor must be positive, got {lam}")
    a = np.asarray(a, dtype=float)
    out = lam * a
    out[..., -1] = lam * lam * a[..., -1]
    return out


def hnorm_arr(a) -> np.ndarray:
    """Koranyi norm ((|x|^2+|y|^2)^2 + t^2)^(1/4)"""
    a = np.asarray(a, dtype=float)
    x, y, t = _split(a)
    z2 = np.sum(x * x, axis=-1) + np.sum(y * y, axis=-1)
    return np.sqrt(np.sqrt(z2 * z2 + t * t))


def hdist_arr(a, b) -> np.ndarray:
    """hnorm(b^-1 o a)"""
    return hnorm_arr(compose_arr(inverse_arr(b), a))


# =============================================================================
# POINT FORMS
# =============================================================================

def compose(a: GroupPoint, b: GroupPoint) -> GroupPoint:
    if a.N != b.N:
        raise InvalidArgumentError(f"dimension mismatch: N={a.N} vs N={b.N}")
    return GroupPoint.from_array(compose_arr(a.as_array(), b.as_array()))


def inverse(a: GroupPoint) -> GroupPoint:
    return GroupPoint(-a.x, -a.y, -a.t)


def dilate(lam: float, a: GroupPoint) -> GroupPoint:
    if not lam > 0:
        raise InvalidArgumentError(f"dilation factor must be positive, got {lam}")
    return GroupPoint(lam * a.x, lam * a.y, lam * lam * a.t)


def hnorm(a: GroupPoint) -> float:
    return float(hnorm_arr(a.as_array()))


def hdist(a: GroupPoint, b: GroupPoint) -> float:
    if a.N != b.N:
        raise InvalidArgumentError(f"dimension mismatch: N={a.N} vs N={b.N}")
    return float(hdist_arr(a.as_array(), b.as_array()))


# =============================================================================
# VOLUME AND POLAR COORDINATES
# =============================================================================

def unit_ball_volume(gp: GroupParams) -> float:
    """
    Haar volume alpha_Q of the Koranyi unit ball.

    Integrating t over [-sqrt(1-|z|^4), sqrt(1-|z|^4)] leaves a radial
    integral in |z| that reduces to pi^N B(N/2, 3/2) / Gamma(N).
    """
    N = gp.N
    return float(np.pi ** N * beta(N / 2.0, 1.5) / gamma(N))


def sphere_measure(gp: GroupParams) -> float:
    """Total mass of the polar measure on the unit sphere, Q * alpha_Q"""
    return gp.Q * unit_ball_volume(gp)


def sample_unit_ball(rng: np.random.Generator, count: int, gp: GroupParams) -> np.ndarray:
    """
    Uniform (Haar) samples in the Koranyi unit ball.

    |z|^4 is Beta(N/2, 3/2) distributed; z direction is uniform on S^{2N-1}
    and t is uniform on [-sqrt(1-|z|^4), sqrt(1-|z|^4)].
    """
    N = gp.N
    w = rng.beta(N / 2.0, 1.5, size=count)
    rho = w ** 0.25
    g = rng.standard_normal((count, 2 * N))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    t = (2.0 * rng.random(count) - 1.0) * np.sqrt(np.clip(1.0 - w, 0.0, None))
    return np.concatenate([g * rho[:, None], t[:, None]], axis=1)


def sample_directions(rng: np.random.Generator, count: int, gp: GroupParams) -> np.ndarray:
    """
    Unit-sphere directions distributed by the normalized polar measure:
    a uniform ball draw pushed to the sphere along its dilation orbit.
    """
    pts = sample_unit_ball(rng, count, gp)
    rho = hnorm_arr(pts)
    rho = np.where(rho > 0.0, rho, 1.0)
    return _dilate_rows(1.0 / rho, pts)


def _dilate_rows(lam: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Row-wise dilation by a vector of factors"""
    out = pts * lam[:, None]
    out[:, -1] = pts[:, -1] * lam * lam
    return out


def dilate_rows(lam, pts) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise InvalidArgumentError("dilation factors must be nonnegative")
    return _dilate_rows(lam, np.asarray(pts, dtype=float))


if __name__ == "__main__":
    gp = critical_exponent(1, 0.5)
    a = GroupPoint([1.0], [0.0], 0.0)
    b = GroupPoint([0.0], [1.0], 0.0)
    print(f"Q={gp.Q}  Q*={gp.Qstar:.4f}")
    print(f"(1,0,0) o (0,1,0) = {compose(a, b)}")
    print(f"|(3,4,0)| = {hnorm(GroupPoint([3.0], [4.0], 0.0))}")
    print(f"alpha_Q = {unit_ball_volume(gp):.6f}")
