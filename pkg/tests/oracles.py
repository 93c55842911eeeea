"""Independent reference computations for the test suite.

Nothing here calls the package's numerical routes: sector sums are done
with mpmath at a precision sized to the cancellation, moments come from a
closed-form recursion, and overlaps/roots come from scipy quadrature and
bracketing.
"""
from __future__ import annotations

import math

import mpmath
import numpy as np
from scipy import integrate, optimize, stats


def _dps(n_spins: int, a: float, b: float, power: int = 1) -> int:
    lost = power * n_spins * math.log10((abs(a) + abs(b)) / abs(a + b)) if a + b else 0.0
    return 30 + int(math.ceil(max(lost, 0.0)))


def mp_sector_terms(n_spins: int, a: float, b: float, power: int = 1):
    """(velocities, w_n/overlap) as mpmath numbers, precise enough for sums of `power`-fold products."""
    dps = _dps(n_spins, a, b, power)
    with mpmath.workdps(dps):
        A, B = mpmath.mpf(a), mpmath.mpf(b)
        ov = (A + B) ** n_spins
        c = [mpmath.binomial(n_spins, n) * A**n * B ** (n_spins - n) / ov for n in range(n_spins + 1)]
        v = [mpmath.mpf(2 * n - n_spins) / n_spins for n in range(n_spins + 1)]
    return v, c, dps


def mp_velocity_moment(n_spins: int, a: float, b: float, order: int = 1) -> float:
    """``sum_n (w_n/overlap) v_n^order`` at full precision."""
    v, c, dps = mp_sector_terms(n_spins, a, b)
    with mpmath.workdps(dps):
        return float(mpmath.fsum(ci * vi**order for ci, vi in zip(c, v)))


def mp_packet_amplitude(n_spins: int, a: float, b: float, t: float, z, eps: float = 1.0) -> np.ndarray:
    """Postselected amplitude divided by the overlap, by brute-force sector sum."""
    v, c, dps = mp_sector_terms(n_spins, a, b)
    out = []
    with mpmath.workdps(dps):
        norm = (mpmath.pi * eps**2) ** mpmath.mpf(-0.25)
        T, E = mpmath.mpf(t), mpmath.mpf(eps)
        for zi in np.atleast_1d(z):
            Z = mpmath.mpf(float(zi))
            s = mpmath.fsum(ci * mpmath.exp(-((Z - vi * T) ** 2) / (2 * E**2)) for ci, vi in zip(c, v))
            out.append(float(s * norm))
    return np.array(out)


def mp_fidelity_vs_weak(n_spins: int, a: float, b: float, t: float, eps: float = 1.0) -> float:
    """Fidelity between the exact sector sum and the rigidly displaced packet.

    Uses the Gaussian Gram matrix ``exp(-(d_n - d_m)^2 / 4 eps^2)``; the
    double sum is reduced to a sum over index differences.
    """
    v, c, dps = mp_sector_terms(n_spins, a, b, power=2)
    with mpmath.workdps(dps):
        T, E = mpmath.mpf(t), mpmath.mpf(eps)
        w = (mpmath.mpf(a) - mpmath.mpf(b)) / (mpmath.mpf(a) + mpmath.mpf(b))
        N = n_spins
        step = 2 * T / N
        self_norm = mpmath.mpf(0)
        for k in range(-N, N + 1):
            g = mpmath.exp(-((k * step) ** 2) / (4 * E**2))
            if g < mpmath.mpf(10) ** (-dps):
                continue
            lo, hi = max(0, -k), min(N, N - k)
            self_norm += g * mpmath.fsum(c[n] * c[n + k] for n in range(lo, hi + 1))
        cross = mpmath.fsum(ci * mpmath.exp(-((vi * T - w * T) ** 2) / (4 * E**2)) for ci, vi in zip(c, v))
        return float(cross**2 / self_norm)


def mp_kick_amplitude(n_spins, a, b, T, z, zp, rho, test_charge, eps=1.0, zp0=0.0) -> complex:
    """One cell of the exact kicked state divided by the overlap."""
    v, c, dps = mp_sector_terms(n_spins, a, b)
    with mpmath.workdps(dps):
        Z, ZP, R, Q, E = (mpmath.mpf(x) for x in (z, zp, rho, test_charge, eps))
        s = ZP - Z
        norm = (mpmath.pi * E**2) ** mpmath.mpf(-0.25)
        total = mpmath.mpc(0)
        for ci, vi in zip(c, v):
            V = 1 / mpmath.sqrt(R**2 * (1 - vi**2) + s**2)
            total += ci * mpmath.exp(-((Z - vi * T) ** 2) / (2 * E**2)) * mpmath.expj(-Q * V)
        omega = norm * mpmath.exp(-((ZP - zp0) ** 2) / (2 * E**2))
        return complex(total * norm * omega)


def riccati_moment_ratios(n_spins: int, w: float, p: float, T: float, n_max: int) -> np.ndarray:
    """``<v^n exp(-i p v T)>`` divided by the overlap, from the closed form.

    The generating function is ``u(lam)^N`` with
    ``u = cosh(lam/N) + w sinh(lam/N)`` and ``lam = -i p T``; derivatives in
    lam give the moments. ``y = u'/u`` obeys ``y' = 1/N^2 - y^2`` so all
    its derivatives follow recursively, and the Bell-type recursion
    ``F^(n) = sum_k C(n-1, k) L^(k+1) F^(n-1-k)`` with ``L = N log u``
    builds the moments.
    """
    N = n_spins
    with mpmath.workdps(50):
        lam = mpmath.mpc(0, -p * T)
        x = lam / N
        u = mpmath.cosh(x) + w * mpmath.sinh(x)
        du = (mpmath.sinh(x) + w * mpmath.cosh(x)) / N
        y = [du / u]
        for k in range(n_max):
            if k == 0:
                y.append(mpmath.mpf(1) / N**2 - y[0] ** 2)
            else:
                y.append(-mpmath.fsum(mpmath.binomial(k, j) * y[j] * y[k - j] for j in range(k + 1)))
        L = [None] + [N * y[k - 1] for k in range(1, n_max + 1)]
        F = [u**N]
        for n in range(1, n_max + 1):
            F.append(mpmath.fsum(mpmath.binomial(n - 1, k) * L[k + 1] * F[n - 1 - k] for k in range(n)))
        # d/dlam brings down v; the lam-derivative of exp(lam v) is v exp(lam v)
        return np.array([complex(f) for f in F])


def gaussian_overlap_quad(d1: float, d2: float, eps: float = 1.0) -> float:
    norm = (math.pi * eps**2) ** -0.5
    f = lambda z: norm * math.exp(-((z - d1) ** 2 + (z - d2) ** 2) / (2 * eps**2))
    lo, hi = min(d1, d2) - 20 * eps, max(d1, d2) + 20 * eps
    return integrate.quad(f, lo, hi, epsabs=1e-14, epsrel=1e-13, limit=200)[0]


def bisection_roots(v: float, t: float, rho: float, z: float) -> list[float]:
    """Roots of ``g(tau) = (t - tau) - hypot(rho, z - v tau)`` with tau <= t by bracketing."""
    g = lambda tau: (t - tau) - math.hypot(rho, z - v * tau)
    # the subluminal retarded time recedes like 1/(1 - |v|) as |v| -> 1
    stretch = 1.0 / (1.0 - abs(v)) if abs(v) < 1 else 1.0
    span = 10.0 * (abs(t) + math.hypot(rho, z) + 1.0) * max(1.0, abs(v)) * stretch
    grid = np.linspace(t - span, t, 200001)
    vals = np.array([g(x) for x in grid])
    roots = [float(x) for x in grid[vals == 0.0]]
    for i in np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]:
        roots.append(optimize.brentq(g, grid[i], grid[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500))
    return roots


def binomial_mixture_cdf(z, n_spins: int, t: float, eps: float = 1.0) -> np.ndarray:
    """CDF of ``v t + normal(0, eps/sqrt2)`` with ``v`` from the fair binomial walk."""
    n = np.arange(n_spins + 1)
    weights = stats.binom.pmf(n, n_spins, 0.5)
    centers = (2 * n - n_spins) / n_spins * t
    z = np.atleast_1d(z)
    return stats.norm.cdf(z[:, None], loc=centers[None, :], scale=eps / math.sqrt(2)) @ weights
