"""Internal N-spin "coin" space of the moving particle.

The velocity operator is ``v_z = (1/N) sum_i sigma_z^(i)`` (units of c). Both
the preselected state ``2^{-N/2} (|up> + |down>)^{(x)N}`` and the
postselected product state ``(a|up> + b|down>)^{(x)N}`` are symmetric, so
every quantity reduces to a sum over the N+1 eigen-sectors

    v_n = (2n - N)/N,    w_n = 2^{-N/2} C(N, n) a^n b^{N-n}.

For superluminal weak values (``a*b < 0``) the weights alternate in sign and
their sum (the overlap) is smaller than the largest weight by a factor of
roughly ``((|a|+|b|)/|a+b|)^N``, about 10^845 for ``a=0.8, b=-0.6`` and
``N=1000``. Weights are therefore kept in log-space, and sums of the form
``sum_n w_n F(v_n)`` go through either a high-precision sector sum
(:func:`moment_element`) or a contour-integral resummation
(:class:`SectorQuadrature`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import mpmath
import numpy as np
from scipy.special import gammaln

from .errors import ZeroOverlap

LN2 = math.log(2.0)
NORM_TOL = 1e-12


@dataclass(frozen=True)
class CoinState:
    """Product state ``(amp_up|up> + amp_down|down>)^{(x) n_spins}``.

    Amplitudes must be real and normalized.
    """

    n_spins: int
    amp_up: float
    amp_down: float

    def __post_init__(self):
        if isinstance(self.n_spins, bool) or int(self.n_spins) != self.n_spins:
            raise TypeError(f"n_spins must be an integer, got {self.n_spins!r}")
        if self.n_spins < 1:
            raise ValueError(f"n_spins must be >= 1, got {self.n_spins}")
        for name in ("amp_up", "amp_down"):
            value = getattr(self, name)
            if np.iscomplexobj(value):
                raise TypeError(f"{name} must be real; complex amplitudes are not supported")
            object.__setattr__(self, name, float(value))
        object.__setattr__(self, "n_spins", int(self.n_spins))
        norm = self.amp_up**2 + self.amp_down**2
        if not abs(norm - 1.0) <= NORM_TOL:
            raise ValueError(f"amp_up^2 + amp_down^2 = {norm!r}, expected 1")

    @classmethod
    def preselected(cls, n_spins: int) -> "CoinState":
        """The fixed preselected state, all spins along +x."""
        return cls(n_spins, math.sqrt(0.5), math.sqrt(0.5))

    @classmethod
    def for_weak_velocity(cls, n_spins: int, weak_velocity: float) -> "CoinState":
        """Postselected state whose weak velocity (against the preselection) is `weak_velocity`."""
        up, down = 1.0 + weak_velocity, 1.0 - weak_velocity
        norm = math.hypot(up, down)
        return cls(n_spins, up / norm, down / norm)


@dataclass(frozen=True)
class VelocitySector:
    index: int
    eigenvalue: float
    weight: complex


@dataclass(frozen=True)
class WeakValueReport:
    weak_velocity: float
    overlap_amplitude: float
    postselect_probability_static: float
    log_abs_overlap: float
    log_postselect_probability_static: float


def eigenvalues(n_spins: int) -> np.ndarray:
    n = np.arange(n_spins + 1)
    return (2 * n - n_spins) / n_spins


def sector_log_weights(post: CoinState) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sector eigenvalues with ``log|w_n|`` and ``sign(w_n)``.

    Zero weights (an amplitude equal to zero) come back as ``-inf`` with sign 0.
    """
    N = post.n_spins
    n = np.arange(N + 1)
    a, b = post.amp_up, post.amp_down
    log_binom = gammaln(N + 1) - gammaln(n + 1) - gammaln(N - n + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        la, lb = np.log(abs(a)), np.log(abs(b))
        up_part = np.where(n == 0, 0.0, n * la)
        down_part = np.where(n == N, 0.0, (N - n) * lb)
    log_w = -0.5 * N * LN2 + log_binom + up_part + down_part
    sign = np.where((a < 0) & (n % 2 == 1), -1, 1) * np.where((b < 0) & ((N - n) % 2 == 1), -1, 1)
    sign = np.where(np.isneginf(log_w), 0, sign)
    return eigenvalues(N), log_w, sign


def log_overlap(post: CoinState) -> tuple[float, int]:
    """``(log|<fin|in>|, sign)``; ``(-inf, 0)`` when the states are orthogonal."""
    s = post.amp_up + post.amp_down
    if s == 0.0:
        return -math.inf, 0
    sign = -1 if (s < 0 and post.n_spins % 2 == 1) else 1
    return post.n_spins * (math.log(abs(s)) - 0.5 * LN2), sign


def overlap(post: CoinState) -> float:
    """``<fin|in> = ((a + b)/sqrt 2)^N``. Underflows to 0.0 for strongly superluminal states at large N."""
    log_abs, sign = log_overlap(post)
    return sign * math.exp(log_abs) if sign else 0.0


def _require_overlap(post: CoinState) -> None:
    if post.amp_up + post.amp_down == 0.0:
        raise ZeroOverlap("postselected state is orthogonal to the preselected state")


def weak_velocity(post: CoinState) -> float:
    _require_overlap(post)
    return (post.amp_up - post.amp_down) / (post.amp_up + post.amp_down)


def sector_decomposition(post: CoinState) -> list[VelocitySector]:
    """The N+1 displacement sectors; weights sum to :func:`overlap`."""
    v, log_w, sign = sector_log_weights(post)
    with np.errstate(under="ignore"):
        w = sign * np.exp(log_w)
    return [VelocitySector(int(i), float(v[i]), complex(w[i])) for i in range(v.size)]


def cancellation_digits(post: CoinState) -> float:
    """log10 of ``sum|w_n| / |sum w_n|``: decimal digits lost in a plain sector sum."""
    s = abs(post.amp_up + post.amp_down)
    if s == 0.0:
        return math.inf
    return post.n_spins * math.log10((abs(post.amp_up) + abs(post.amp_down)) / s)


def weak_value_report(post: CoinState) -> WeakValueReport:
    wv = weak_velocity(post)
    log_abs, sign = log_overlap(post)
    log_p = 2.0 * log_abs
    return WeakValueReport(
        weak_velocity=wv,
        overlap_amplitude=overlap(post),
        postselect_probability_static=math.exp(log_p),
        log_abs_overlap=log_abs,
        log_postselect_probability_static=log_p,
    )


# --- moments -----------------------------------------------------------------


@dataclass(frozen=True)
class MomentElement:
    """``<fin| v^n exp(-i p v T) |in>`` and its weak-value approximation.

    Both are stored divided by the overlap (``exact_ratio``, ``weak_ratio``)
    because the raw matrix elements underflow double precision at large N.
    """

    order: int
    momentum: float
    time: float
    exact_ratio: complex
    weak_ratio: complex
    log_abs_overlap: float
    overlap_sign: int

    @property
    def overlap(self) -> float:
        return self.overlap_sign * math.exp(self.log_abs_overlap)

    @property
    def exact(self) -> complex:
        return self.exact_ratio * self.overlap

    @property
    def weak(self) -> complex:
        return self.weak_ratio * self.overlap

    @property
    def relative_error(self) -> float:
        diff = abs(self.exact_ratio - self.weak_ratio)
        scale = abs(self.weak_ratio)
        return diff / scale if scale > 0 else diff


MAX_MOMENT_ORDER = 10


@lru_cache(maxsize=32)
def _mp_sector_ratios(n_spins: int, amp_up: float, amp_down: float, dps: int):
    # w_n / <fin|in> = C(N,n) a^n b^(N-n) / (a+b)^N, exact in the working precision
    with mpmath.workdps(dps):
        a, b = mpmath.mpf(amp_up), mpmath.mpf(amp_down)
        denom = (a + b) ** n_spins
        ratios = tuple(
            mpmath.binomial(n_spins, n) * a**n * b ** (n_spins - n) / denom for n in range(n_spins + 1)
        )
        velocities = tuple(mpmath.mpf(2 * n - n_spins) / n_spins for n in range(n_spins + 1))
    return ratios, velocities


def exact_moment_ratios(post: CoinState, orders, momentum: float, time: float) -> np.ndarray:
    """Sector sums ``sum_n (w_n/overlap) v_n^k exp(-i p v_n T)`` for each k in `orders`.

    Evaluated with mpmath at a working precision sized to the cancellation,
    so the result is exact to double precision for any N.
    """
    _require_overlap(post)
    orders = [int(k) for k in orders]
    dps = 30 + int(math.ceil(max(cancellation_digits(post), 0.0)))
    ratios, velocities = _mp_sector_ratios(post.n_spins, post.amp_up, post.amp_down, dps)
    with mpmath.workdps(dps):
        phase_arg = -mpmath.mpf(momentum) * mpmath.mpf(time)
        sums = [mpmath.mpc(0)] * len(orders)
        for c, v in zip(ratios, velocities):
            if c == 0:
                continue
            term = c * mpmath.expj(phase_arg * v) if phase_arg != 0 else mpmath.mpc(c)
            for i, k in enumerate(orders):
                sums[i] += term * v**k
        return np.array([complex(s) for s in sums])


def moment_element(post: CoinState, n: int, p: float, T: float) -> MomentElement:
    if not 0 <= n <= MAX_MOMENT_ORDER:
        raise ValueError(f"moment order must lie in [0, {MAX_MOMENT_ORDER}], got {n}")
    wv = weak_velocity(post)
    exact = exact_moment_ratios(post, [n], p, T)[0]
    weak = wv**n * complex(math.cos(p * wv * T), -math.sin(p * wv * T))
    log_abs, sign = log_overlap(post)
    return MomentElement(n, float(p), float(T), complex(exact), weak, log_abs, sign)


def generating_function(post: CoinState, p: float, T: float) -> complex:
    """``<fin|exp(-i p v_z T)|in> / <fin|in> = (cos(pT/N) - i w sin(pT/N))^N``."""
    wv = weak_velocity(post)
    theta = p * T / post.n_spins
    return complex(np.exp(post.n_spins * np.log(complex(math.cos(theta), -wv * math.sin(theta)))))


# --- sampling ----------------------------------------------------------------


def born_sample(n_spins: int, rng_seed, count: int) -> np.ndarray:
    """Velocity eigenvalues drawn with the Born rule of the preselected state alone."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    n = rng.binomial(n_spins, 0.5, size=count)
    return (2 * n - n_spins) / n_spins


# --- stable resummation ------------------------------------------------------

CONTOUR_MARGIN = 1.25


@dataclass(frozen=True)
class SectorQuadrature:
    """Nodes and weights with ``sum_j weights_j F(nodes_j) = sum_n (w_n/overlap) F(v_n)``.

    ``direct`` mode uses the eigenvalues themselves and is exact for any F.
    ``contour`` mode is used when the plain sum would cancel catastrophically:
    the sum is rewritten as ``(1/2 pi i) \\oint F(z) R(z) dz`` with the
    resolvent ``R(z) = sum_n (w_n/overlap)/(z - v_n)`` expanded in a Newton
    (finite-difference) series that converges without cancellation on the
    circle. F must be analytic on the closed disk of radius
    ``CONTOUR_MARGIN * radius`` about `center`; see :meth:`admits`.
    """

    nodes: np.ndarray
    weights: np.ndarray
    mode: str
    center: float
    radius: float

    def admits(self, singularities) -> np.ndarray:
        """True where a singularity of F at that location leaves the rule accurate."""
        s = np.asarray(singularities)
        if self.mode == "direct":
            return np.ones(s.shape, dtype=bool)
        return np.abs(s - self.center) > CONTOUR_MARGIN * self.radius

    def apply(self, values: np.ndarray, axis: int = 0) -> np.ndarray:
        return np.tensordot(self.weights, values, axes=([0], [axis]))


def sector_quadrature(post: CoinState, n_nodes: int = 256, max_direct_digits: float = 3.0) -> SectorQuadrature:
    _require_overlap(post)
    N = post.n_spins
    if cancellation_digits(post) <= max_direct_digits:
        v, log_w, sign = sector_log_weights(post)
        log_abs, ov_sign = log_overlap(post)
        with np.errstate(under="ignore"):
            c = ov_sign * sign * np.exp(log_w - log_abs)
        keep = sign != 0
        return SectorQuadrature(v[keep].astype(complex), c[keep].astype(complex), "direct", 0.0, 1.0)

    s = post.amp_up + post.amp_down
    r_left, r_right = post.amp_up / s, post.amp_down / s
    # expand about the end of the spectrum with the smaller difference disk
    if abs(r_right) < abs(r_left):
        start, step, r = 1.0, -2.0 / N, r_right
    else:
        start, step, r = -1.0, 2.0 / N, r_left
    radius = CONTOUR_MARGIN * max(2.0 * abs(r), 2.0)
    theta = 2.0 * np.pi * (np.arange(n_nodes) + 0.5) / n_nodes
    ring = np.exp(1j * theta)
    nodes = start + radius * ring
    k = np.arange(1, N + 1)
    u = start + k * step
    ratios = (N - k + 1) * (r * step) / (nodes[:, None] - u[None, :])
    first = 1.0 / (nodes - start)
    resolvent = first * (1.0 + np.cumprod(ratios, axis=1).sum(axis=1))
    weights = resolvent * radius * ring / n_nodes
    return SectorQuadrature(nodes, weights, "contour", start, radius)
