"""Gaussian packets and their postselected evolution under ``H = p_z v_z``.

Only the z coordinate evolves; transverse factors are carried along
unchanged. Superpositions hold their terms in log form (``log|c_i|`` plus a
phase) next to a reference scale ``log_scale``: every amplitude, transfer
function and norm returned by a superposition is the physical value divided
by ``exp(log_scale)``. For the exact postselected evolution the scale is the
coin overlap, so returned amplitudes are O(1) even when the physical ones
are far below the smallest double.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize_scalar

from . import coin
from .coin import CoinState
from .errors import GridTooCoarse, ZeroNorm

SQRT_2PI = math.sqrt(2.0 * math.pi)
_CHUNK = 2048


@dataclass(frozen=True)
class GaussianPacket:
    """``amplitude * (pi eps^2)^{-3/4} exp(-|x - center|^2 / 2 eps^2)``."""

    center: tuple = (0.0, 0.0, 0.0)
    width: float = 1.0
    amplitude: complex = 1.0

    def __post_init__(self):
        center = tuple(float(c) for c in self.center)
        if len(center) != 3:
            raise ValueError("center must be a 3-vector")
        if not self.width > 0 or not math.isfinite(self.width):
            raise ValueError(f"width must be positive and finite, got {self.width!r}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "width", float(self.width))
        object.__setattr__(self, "amplitude", complex(self.amplitude))

    @property
    def z0(self) -> float:
        return self.center[2]

    def profile_z(self, z):
        eps = self.width
        z = np.asarray(z, dtype=float)
        return self.amplitude * (math.pi * eps**2) ** -0.25 * np.exp(-((z - self.z0) ** 2) / (2 * eps**2))

    def transverse(self, x, y):
        eps = self.width
        r2 = (np.asarray(x) - self.center[0]) ** 2 + (np.asarray(y) - self.center[1]) ** 2
        return (math.pi * eps**2) ** -0.5 * np.exp(-r2 / (2 * eps**2))

    def __call__(self, x, y, z):
        return self.transverse(x, y) * self.profile_z(z)

    def momentum_profile(self, p):
        """Fourier transform of :meth:`profile_z` (unitary convention)."""
        eps = self.width
        p = np.asarray(p, dtype=float)
        return self.amplitude * (eps**2 / math.pi) ** 0.25 * np.exp(-0.5 * (p * eps) ** 2 - 1j * p * self.z0)

    def displaced(self, dz: float) -> "GaussianPacket":
        x, y, z = self.center
        return replace(self, center=(x, y, z + dz))


@dataclass(frozen=True, eq=False)
class PacketSuperposition:
    """``sum_i c_i * base(x, y, z - d_i)``."""

    base: GaussianPacket
    displacements: np.ndarray
    log_abs_coefficients: np.ndarray
    phases: np.ndarray
    log_scale: float = 0.0

    # True when transfer() is a closed form that stays accurate even though
    # the term sum cancels
    closed_form = False

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.displacements, dtype=float))
        la = np.atleast_1d(np.asarray(self.log_abs_coefficients, dtype=float))
        ph = np.atleast_1d(np.asarray(self.phases, dtype=complex))
        if not d.shape == la.shape == ph.shape:
            raise ValueError("displacements, coefficients and phases must have equal length")
        object.__setattr__(self, "displacements", d)
        object.__setattr__(self, "log_abs_coefficients", la)
        object.__setattr__(self, "phases", ph)

    @classmethod
    def from_terms(cls, base: GaussianPacket, terms, log_scale: float = 0.0) -> "PacketSuperposition":
        coefficients = np.array([complex(c) for c, _ in terms])
        displacements = np.array([float(d) for _, d in terms])
        mag = np.abs(coefficients)
        with np.errstate(divide="ignore"):
            log_abs = np.log(mag) + log_scale
        phases = np.where(mag > 0, coefficients / np.where(mag > 0, mag, 1.0), 0.0)
        return cls(base, displacements, log_abs, phases, log_scale)

    @classmethod
    def single(cls, packet: GaussianPacket) -> "PacketSuperposition":
        return cls.from_terms(replace(packet, amplitude=1.0), [(packet.amplitude, 0.0)])

    @property
    def width(self) -> float:
        return self.base.width

    @property
    def coefficients(self) -> np.ndarray:
        """Scaled coefficients; may overflow to inf when the terms cancel heavily."""
        with np.errstate(over="ignore", under="ignore"):
            return np.exp(self.log_abs_coefficients - self.log_scale) * self.phases

    @property
    def terms(self) -> list:
        return list(zip(self.coefficients.tolist(), self.displacements.tolist()))

    def content_range(self) -> tuple[float, float]:
        """z interval outside which the amplitude is negligible (12 widths margin)."""
        margin = 12.0 * self.width
        return self.base.z0 + self.displacements.min() - margin, self.base.z0 + self.displacements.max() + margin

    def transfer(self, p):
        """Momentum-space multiplier applied to the base packet."""
        p = np.asarray(p, dtype=float)
        return np.exp(-1j * np.multiply.outer(p, self.displacements)) @ self.coefficients

    def momentum_amplitude(self, p):
        return self.base.momentum_profile(p) * self.transfer(p)

    def term_sum_amplitude(self, z):
        """Direct sum over terms. Accurate only when the terms do not cancel."""
        z = np.asarray(z, dtype=float)
        flat = z.ravel()
        out = np.empty(flat.size, dtype=complex)
        c = self.coefficients
        for lo in range(0, flat.size, _CHUNK):
            block = flat[lo : lo + _CHUNK]
            out[lo : lo + _CHUNK] = self.base.profile_z(np.subtract.outer(block, self.displacements)) @ c
        return out.reshape(z.shape)

    def amplitude(self, z):
        return self.term_sum_amplitude(z)

    def __call__(self, x, y, z):
        return self.base.transverse(x, y) * self.amplitude(z)

    def norm_squared(self) -> float:
        if self.closed_form:
            return inner_product(self, self).real
        return _pairwise_inner(self, self).real

    def log_norm(self) -> float:
        """Natural log of the physical L2 norm."""
        return 0.5 * math.log(self.norm_squared()) + self.log_scale


@dataclass(frozen=True, eq=False)
class BinomialSuperposition(PacketSuperposition):
    """Exact postselected packet ``<fin|exp(-i p_z v_z t)|in> Phi``.

    Evaluated through the generating function
    ``(cos(pt/N) - i w sin(pt/N))^N`` in momentum space, which involves no
    cancellation; the sector terms are kept for inspection and cross-checks.
    """

    post: CoinState = None
    t: float = 0.0
    closed_form = True

    @property
    def weak_velocity(self) -> float:
        return coin.weak_velocity(self.post)

    def content_range(self) -> tuple[float, float]:
        wt = self.weak_velocity * self.t
        spread = 1.0 + math.sqrt(abs(wt) ** 2 / self.post.n_spins) / self.width
        margin = 12.0 * self.width * spread
        lo = min(-self.t, wt) + self.base.z0 - margin
        hi = max(self.t, wt) + self.base.z0 + margin
        return lo, hi

    def transfer(self, p):
        N = self.post.n_spins
        theta = np.asarray(p, dtype=float) * self.t / N
        w = self.weak_velocity
        sign = coin.log_overlap(self.post)[1]
        with np.errstate(divide="ignore", under="ignore"):
            return sign * np.exp(N * np.log(np.cos(theta) - 1j * w * np.sin(theta)))

    def amplitude(self, z):
        return _momentum_to_position(self, z)


@dataclass(frozen=True, eq=False)
class CorrectedPacket(PacketSuperposition):
    """Weak packet with the first-order finite-N shape correction.

    Momentum multiplier ``exp(-i p shift) (1 + curvature p^2)``; in position
    space ``p^2`` acts as ``-d^2/dz^2`` on the displaced Gaussian.
    """

    curvature: float = 0.0
    closed_form = True

    def transfer(self, p):
        p = np.asarray(p, dtype=float)
        return super().transfer(p) * (1.0 + self.curvature * p**2)

    def amplitude(self, z):
        z = np.asarray(z, dtype=float)
        eps = self.width
        out = np.zeros(z.shape, dtype=complex)
        for c, d in zip(self.coefficients, self.displacements):
            x = z - self.base.z0 - d
            out += c * self.base.profile_z(z - d) * (1.0 + self.curvature * (1.0 / eps**2 - x**2 / eps**4))
        return out


# --- momentum-space quadrature ------------------------------------------------


def _momentum_grid(objs, z_lo: float, z_hi: float) -> tuple[np.ndarray, float]:
    eps = min(o.width for o in objs)
    probe = np.linspace(-200.0 / eps, 200.0 / eps, 8001)
    with np.errstate(divide="ignore", under="ignore", over="ignore"):
        logmag = np.max([np.log(np.abs(o.momentum_amplitude(probe))) for o in objs], axis=0)
    logmag = np.where(np.isfinite(logmag), logmag, -np.inf)
    keep = logmag >= logmag.max() - 60.0
    p_max = np.abs(probe[keep]).max() + 2.0 / eps
    lo = min([z_lo] + [o.content_range()[0] for o in objs])
    hi = max([z_hi] + [o.content_range()[1] for o in objs])
    period = 2.0 * (hi - lo) + 20.0 * eps
    dp = 2.0 * math.pi / period
    n = 2 * int(math.ceil(p_max / dp)) + 1
    return np.linspace(-p_max, p_max, n), 2 * p_max / (n - 1)


def _momentum_to_position(sup: PacketSuperposition, z):
    z = np.asarray(z, dtype=float)
    flat = z.ravel()
    if flat.size == 0:
        return np.zeros(z.shape, dtype=complex)
    p, dp = _momentum_grid([sup], float(flat.min()), float(flat.max()))
    spectrum = sup.momentum_amplitude(p) * (dp / SQRT_2PI)
    out = np.empty(flat.size, dtype=complex)
    for lo in range(0, flat.size, _CHUNK):
        block = flat[lo : lo + _CHUNK]
        out[lo : lo + _CHUNK] = np.exp(1j * np.multiply.outer(block, p)) @ spectrum
    return out.reshape(z.shape)


def _pairwise_inner(a: PacketSuperposition, b: PacketSuperposition) -> complex:
    # <G(d1)|G(d2)> = exp(-(d1 - d2)^2 / 4 eps^2) for equal-width unit Gaussians
    eps = a.width
    gap = np.subtract.outer(a.displacements + a.base.z0, b.displacements + b.base.z0)
    gram = np.exp(-(gap**2) / (4 * eps**2))
    ca = a.coefficients * a.base.amplitude
    cb = b.coefficients * b.base.amplitude
    return complex(np.conj(ca) @ gram @ cb)


def inner_product(a: PacketSuperposition, b: PacketSuperposition) -> complex:
    """``<a|b>`` along z, in the product of the two reference scales."""
    p, dp = _momentum_grid([a, b], math.inf, -math.inf)
    return complex(np.sum(np.conj(a.momentum_amplitude(p)) * b.momentum_amplitude(p)) * dp)


def _as_superposition(x) -> PacketSuperposition:
    if isinstance(x, PacketSuperposition):
        return x
    if isinstance(x, GaussianPacket):
        return PacketSuperposition.single(x)
    raise TypeError(f"expected a packet or superposition, got {type(x).__name__}")


def fidelity(a, b) -> float:
    """``|<a|b>|^2 / (<a|a><b|b>)`` for two packets or superpositions of equal width."""
    a, b = _as_superposition(a), _as_superposition(b)
    if not math.isclose(a.width, b.width, rel_tol=1e-12):
        raise ValueError("fidelity needs equal packet widths")
    if a.closed_form or b.closed_form:
        ab, aa, bb = inner_product(a, b), inner_product(a, a).real, inner_product(b, b).real
        floor_a = floor_b = 0.0
    else:
        ab, aa, bb = _pairwise_inner(a, b), _pairwise_inner(a, a).real, _pairwise_inner(b, b).real
        floor_a = (1e-14 * np.abs(a.coefficients).sum()) ** 2
        floor_b = (1e-14 * np.abs(b.coefficients).sum()) ** 2
    for value, floor, name in ((aa, floor_a, "first"), (bb, floor_b, "second")):
        if not math.isfinite(value) or value <= floor:
            raise ZeroNorm(f"{name} argument has numerically zero norm")
    return float(min(1.0, abs(ab) ** 2 / (aa * bb)))


# --- evolution ---------------------------------------------------------------


def evolve_exact(packet: GaussianPacket, post: CoinState, t: float) -> PacketSuperposition:
    """Postselected packet after time t, unnormalized, scaled by |overlap|."""
    if not t >= 0:
        raise ValueError(f"t must be >= 0, got {t!r}")
    coin.weak_velocity(post)  # raises ZeroOverlap
    log_ov, sign = coin.log_overlap(post)
    base = replace(packet, amplitude=1.0)
    amp = packet.amplitude
    if t == 0:
        return PacketSuperposition(base, [0.0], [log_ov + math.log(abs(amp))], [sign * amp / abs(amp)], log_ov)
    v, log_w, w_sign = coin.sector_log_weights(post)
    keep = w_sign != 0
    return BinomialSuperposition(
        base,
        v[keep] * t,
        log_w[keep] + math.log(abs(amp)),
        w_sign[keep] * (amp / abs(amp)),
        log_ov,
        post=post,
        t=float(t),
    )


def evolve_weak(packet: GaussianPacket, w: float, t: float) -> GaussianPacket:
    if not t >= 0:
        raise ValueError(f"t must be >= 0, got {t!r}")
    return packet.displaced(w * t)


def correction_factor(packet: GaussianPacket, post: CoinState, t: float) -> CorrectedPacket:
    w = coin.weak_velocity(post)
    if not t >= 0:
        raise ValueError(f"t must be >= 0, got {t!r}")
    base = replace(packet, amplitude=1.0)
    curvature = (w * t) ** 2 / (2.0 * post.n_spins)
    amp = packet.amplitude
    return CorrectedPacket(base, [w * t], [math.log(abs(amp))], [amp / abs(amp)], 0.0, curvature=curvature)


def distortion_parameter(w: float, t: float, n_spins: int, width: float) -> float:
    return (w * t) ** 2 / (n_spins * width**2)


def peak_position(sup, lo: float | None = None, hi: float | None = None) -> float:
    """Location of the maximum of ``|amplitude|^2``: scan at eps/20, then golden-section refinement."""
    sup = _as_superposition(sup)
    c_lo, c_hi = sup.content_range()
    lo = c_lo if lo is None else lo
    hi = c_hi if hi is None else hi
    h = sup.width / 20.0
    grid = np.arange(lo, hi + h, h)
    dens = np.abs(sup.amplitude(grid)) ** 2
    k = int(np.argmax(dens))
    if k == 0 or k == grid.size - 1:
        return float(grid[k])
    res = minimize_scalar(
        lambda z: -abs(complex(sup.amplitude(np.array([z]))[0])) ** 2,
        bracket=(grid[k - 1], grid[k], grid[k + 1]),
        method="golden",
        tol=1e-10,
    )
    return float(res.x)


@dataclass(frozen=True)
class ConvergenceReport:
    n_spins: int
    fidelity: float
    peak_error: float
    distortion_parameter: float


def convergence_report(packet: GaussianPacket, post: CoinState, t: float) -> ConvergenceReport:
    w = coin.weak_velocity(post)
    exact = evolve_exact(packet, post, t)
    weak = evolve_weak(packet, w, t)
    peak = peak_position(exact)
    return ConvergenceReport(
        n_spins=post.n_spins,
        fidelity=fidelity(exact, weak),
        peak_error=abs(peak - (packet.z0 + w * t)),
        distortion_parameter=distortion_parameter(w, t, post.n_spins, packet.width),
    )


# --- light cone --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LightConeReport:
    grid: np.ndarray
    truncated_amplitude: np.ndarray
    support_bound: float
    max_outside: float
    analytic_at_weak: float
    analytic_peak: float
    cancellation_digits: float

    @property
    def holds(self) -> bool:
        return self.max_outside == 0.0

    @property
    def analytic_ratio(self) -> float:
        return self.analytic_at_weak / self.analytic_peak


def light_cone_check(
    packet: GaussianPacket,
    post: CoinState,
    t: float,
    cutoff: float = 5.0,
    spacing: float | None = None,
) -> LightConeReport:
    """Evolve a hard-truncated Gaussian sector by sector and locate its support.

    The truncated profile is ``base * 1[|z - z0| <= cutoff*eps]``. Each
    sector displaces it by ``v_n t`` with ``|v_n| <= 1``; the returned
    ``max_outside`` is the largest |amplitude| on grid points beyond
    ``cutoff*eps + t``. The analytic (untruncated) branch is evaluated in
    closed form at ``z0 + <v>_w t`` for comparison.
    """
    if not t >= 0:
        raise ValueError(f"t must be >= 0, got {t!r}")
    eps = packet.width
    spacing = eps / 16.0 if spacing is None else float(spacing)
    if spacing > eps / 8.0:
        raise GridTooCoarse(f"grid spacing {spacing} exceeds eps/8 = {eps / 8.0}")
    w = coin.weak_velocity(post)
    z0 = packet.z0
    half = cutoff * eps + 2.0 * t
    n_half = int(math.ceil(half / spacing))
    grid = z0 + spacing * np.arange(-n_half, n_half + 1)

    v, log_w, sign = coin.sector_log_weights(post)
    keep = sign != 0
    c = sign[keep] * np.exp(log_w[keep] - log_w[keep].max())
    amp = np.zeros(grid.size, dtype=complex)
    for cn, vn in zip(c, v[keep]):
        x = grid - vn * t
        inside = np.abs(x - z0) <= cutoff * eps
        amp += cn * np.where(inside, packet.profile_z(x), 0.0)

    bound = cutoff * eps + t
    outside = np.abs(grid - z0) > bound
    max_outside = float(np.abs(amp[outside]).max()) if outside.any() else 0.0

    analytic = evolve_exact(packet, post, t)
    at_weak = abs(complex(analytic.amplitude(np.array([z0 + w * t]))[0]))
    peak = peak_position(analytic)
    at_peak = abs(complex(analytic.amplitude(np.array([peak]))[0]))
    return LightConeReport(
        grid=grid,
        truncated_amplitude=amp,
        support_bound=bound,
        max_outside=max_outside,
        analytic_at_weak=at_weak,
        analytic_peak=at_peak,
        cancellation_digits=coin.cancellation_digits(post),
    )
