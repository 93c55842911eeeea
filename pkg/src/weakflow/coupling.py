"""Charge / test-particle kick experiment on a 2D (z, z') grid.

The moving charge (coordinate z) and the test particle (z') sit at a fixed
transverse offset ``rho = hypot(dx, dy)``. At time T the test particle
receives the instantaneous kick ``exp(-i[(p' - q' A_z)^2 / 2m + q' V])`` with
the potential of the charge evaluated at the axial offset ``s = z' - z``.

The exact postselected state is a sum over velocity sectors. Its terms
cancel catastrophically for superluminal weak values, so the sum is done
with :func:`weakflow.coin.sector_quadrature`; in contour mode the kick must be
analytic in the velocity over the contour disk, which holds at a cell when
the branch points ``+-sqrt(1 + s^2/rho^2)`` of the potential lie outside it.
Cells that fail this test are reported as unresolved.
"""
from __future__ import annotations

import csv
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson

from . import coin, fields, wavepacket
from .coin import CoinState
from .errors import GridTooCoarse, SplitStepUnconverged, UnresolvedCells, ZeroNorm
from .wavepacket import GaussianPacket

HEADER = struct.Struct("<qqdddddd")
FIELD_MODES = ("closed_form", "retarded_sum")
_NODE_CHUNKS = 8


@dataclass(frozen=True)
class TestParticleSpec:
    __test__ = False  # not a pytest class

    charge: float = 0.0
    mass: float = math.inf
    packet: GaussianPacket = field(default_factory=GaussianPacket)

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError(f"mass must be positive or inf, got {self.mass!r}")

    @property
    def infinite_mass(self) -> bool:
        return math.isinf(self.mass)


@dataclass(frozen=True)
class KickGrid:
    z_min: float
    z_max: float
    n_z: int
    zp_min: float
    zp_max: float
    n_zp: int
    dx: float = 3.0
    dy: float = 0.0

    def __post_init__(self):
        if self.n_z < 2 or self.n_zp < 2 or not (self.z_max > self.z_min and self.zp_max > self.zp_min):
            raise ValueError("kick grid needs positive spacings and at least 2 points per axis")
        if self.rho == 0:
            raise ValueError("transverse offset must be nonzero to keep the potential bounded")

    @classmethod
    def covering(
        cls,
        charge: GaussianPacket,
        test: TestParticleSpec,
        T: float,
        w: float,
        n_z: int = 512,
        n_zp: int = 512,
        dx: float | None = None,
        dy: float = 0.0,
    ) -> "KickGrid":
        """Grid spanning 8 widths of both packets plus the largest charge displacement."""
        eps, eps_t = charge.width, test.packet.width
        lo = charge.z0 + min(-T, w * T) - 8 * eps
        hi = charge.z0 + max(T, w * T) + 8 * eps
        zp0 = test.packet.z0
        return cls(lo, hi, n_z, zp0 - 8 * eps_t, zp0 + 8 * eps_t, n_zp, 3.0 * eps if dx is None else dx, dy)

    @property
    def z(self) -> np.ndarray:
        return np.linspace(self.z_min, self.z_max, self.n_z)

    @property
    def zp(self) -> np.ndarray:
        return np.linspace(self.zp_min, self.zp_max, self.n_zp)

    @property
    def d_z(self) -> float:
        return (self.z_max - self.z_min) / (self.n_z - 1)

    @property
    def d_zp(self) -> float:
        return (self.zp_max - self.zp_min) / (self.n_zp - 1)

    @property
    def rho(self) -> float:
        return math.hypot(self.dx, self.dy)

    @property
    def offsets(self) -> np.ndarray:
        """``s = z' - z`` on the grid, shape (n_z, n_zp)."""
        return self.zp[None, :] - self.z[:, None]

    def check_resolution(self, charge: GaussianPacket, test: TestParticleSpec) -> None:
        if self.d_z > charge.width / 8 or self.d_zp > test.packet.width / 8:
            raise GridTooCoarse("kick grid spacing exceeds 1/8 of a packet width")


@dataclass(frozen=True, eq=False)
class JointState2D:
    """Amplitude table ``psi[iz, izp]``, scaled by ``exp(-log_scale)``."""

    grid: KickGrid
    amplitude: np.ndarray
    log_scale: float = 0.0
    unresolved: np.ndarray | None = None

    @property
    def cell_area(self) -> float:
        return self.grid.d_z * self.grid.d_zp

    def norm_squared(self) -> float:
        return float(np.sum(np.abs(self.amplitude) ** 2) * self.cell_area)

    def log_norm(self) -> float:
        return 0.5 * math.log(self.norm_squared()) + self.log_scale

    def normalized(self) -> np.ndarray:
        n2 = self.norm_squared()
        if not n2 > 0 or not math.isfinite(n2):
            raise ZeroNorm("joint state has zero norm on the grid")
        return self.amplitude * math.sqrt(self.cell_area / n2)

    def fidelity(self, other: "JointState2D") -> float:
        for s in (self, other):
            if s.unresolved is not None and s.unresolved.any():
                raise UnresolvedCells(f"{int(s.unresolved.sum())} cells are unresolved")
        a, b = self.normalized(), other.normalized()
        return float(min(1.0, abs(np.vdot(a, b)) ** 2))

    def schmidt_values(self) -> np.ndarray:
        """Squared singular values of the normalized amplitude matrix (sum to 1)."""
        s = np.linalg.svd(self.normalized(), compute_uv=False)
        return s**2

    def test_marginal(self) -> np.ndarray:
        """``integral |psi|^2 dz`` as a function of z', physical scale divided out."""
        return np.sum(np.abs(self.amplitude) ** 2, axis=0) * self.grid.d_z

    def write_binary(self, path) -> None:
        g = self.grid
        with open(path, "wb") as fh:
            fh.write(HEADER.pack(g.n_z, g.n_zp, g.z_min, g.d_z, g.zp_min, g.d_zp, g.dx, g.dy))
            fh.write(np.ascontiguousarray(self.amplitude, dtype="<c16").tobytes())

    @classmethod
    def read_binary(cls, path) -> "JointState2D":
        with open(path, "rb") as fh:
            n_z, n_zp, z_min, d_z, zp_min, d_zp, dx, dy = HEADER.unpack(fh.read(HEADER.size))
            amp = np.frombuffer(fh.read(), dtype="<c16").reshape(n_z, n_zp)
        grid = KickGrid(z_min, z_min + d_z * (n_z - 1), n_z, zp_min, zp_min + d_zp * (n_zp - 1), n_zp, dx, dy)
        return cls(grid, amp.copy())


def write_summary_csv(path, states: dict[str, JointState2D], reference: str | None = None, n_schmidt: int = 4) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["state", "log_norm", "fidelity_vs_" + (reference or "none")]
        header += [f"schmidt_{k}" for k in range(n_schmidt)]
        writer.writerow(header)
        for name, st in states.items():
            fid = st.fidelity(states[reference]) if reference else float("nan")
            sv = np.zeros(n_schmidt)
            vals = st.schmidt_values()[:n_schmidt]
            sv[: vals.size] = vals
            writer.writerow([name, repr(st.log_norm()), repr(fid)] + [repr(float(x)) for x in sv])


# --- kick kernels -----------------------------------------------------------------


def _kick_potential(test_charge: float, rho: float, s: np.ndarray, v, field_mode: str = "closed_form"):
    """Scalar potential of a unit-speed-v charge at offset s, times q'."""
    if isinstance(v, complex) or np.iscomplexobj(v):
        return test_charge * fields.potential_of_velocity(1.0, rho, s, v)
    src = fields.SourceSpec(1.0, float(v), 0.0)
    if field_mode == "closed_form":
        V, _ = fields.closed_form_grid(src, rho, s)
    elif field_mode == "retarded_sum":
        V, _ = fields.lienard_wiechert_grid(src, rho, s)
    else:
        raise ValueError(f"field_mode must be one of {FIELD_MODES}, got {field_mode!r}")
    return test_charge * V


def _charge_profile(charge: GaussianPacket, z: np.ndarray, v, T: float):
    eps = charge.width
    x = z - charge.z0 - v * T
    return charge.amplitude * (math.pi * eps**2) ** -0.25 * np.exp(-(x**2) / (2 * eps**2))


def _quadrature_for(post: CoinState, grid: KickGrid, s: np.ndarray, need_analytic: bool):
    quad = coin.sector_quadrature(post)
    unresolved = None
    if quad.mode == "contour" and need_analytic:
        vb = fields.branch_points(grid.rho, s)
        unresolved = ~(quad.admits(vb) & quad.admits(-vb))
    return quad, unresolved


def _sector_sum(quad, term, threads: int | None):
    """``sum_j weights_j term(node_j)`` with a fixed chunked summation order."""
    chunks = np.array_split(np.arange(quad.nodes.size), min(_NODE_CHUNKS, quad.nodes.size))

    def partial(idx):
        acc = None
        for j in idx:
            value = quad.weights[j] * term(quad.nodes[j] if quad.mode == "contour" else quad.nodes[j].real)
            acc = value if acc is None else acc + value
        return acc

    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = [p for p in pool.map(partial, chunks) if p is not None]
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    return total


def joint_kick_exact(
    charge: GaussianPacket,
    post: CoinState,
    test: TestParticleSpec,
    T: float,
    grid: KickGrid,
    threads: int | None = None,
    allow_unresolved: bool = False,
) -> JointState2D:
    """Exact postselected state after an infinite-mass kick at time T.

    Returned amplitudes are divided by |overlap|. Unresolved cells are set
    to zero and flagged; unless `allow_unresolved` they raise
    :class:`UnresolvedCells`.
    """
    if not test.infinite_mass:
        raise ValueError("joint_kick_exact handles infinite mass only; use joint_kick_finite_m")
    grid.check_resolution(charge, test)
    log_ov, sign = coin.log_overlap(post)
    z, s = grid.z, grid.offsets
    quad, unresolved = _quadrature_for(post, grid, s, need_analytic=test.charge != 0)
    if unresolved is not None and unresolved.any() and not allow_unresolved:
        raise UnresolvedCells(f"{int(unresolved.sum())} of {unresolved.size} cells lie too close to the wake boundary")

    if test.charge == 0:
        charge_part = _sector_sum(quad, lambda v: _charge_profile(charge, z, v, T), threads)
        amp = charge_part[:, None] * np.ones_like(s, dtype=complex)
    else:
        rho = grid.rho

        def term(v):
            kick = np.exp(-1j * _kick_potential(test.charge, rho, s, v))
            return _charge_profile(charge, z, v, T)[:, None] * kick

        amp = _sector_sum(quad, term, threads)
    amp = sign * amp * test.packet.profile_z(grid.zp)[None, :]
    if unresolved is not None:
        amp = np.where(unresolved, 0.0, amp)
    return JointState2D(grid, amp, log_ov, unresolved)


def joint_kick_weak(
    charge: GaussianPacket,
    w: float,
    test: TestParticleSpec,
    T: float,
    grid: KickGrid,
    field_mode: str = "closed_form",
) -> JointState2D:
    """Weak-substituted product form ``exp(-i q' V(s; w)) Phi(z - wT) Omega(z')``.

    For |w| > 1 the closed form is zero outside the Mach wake; this is also
    the limit the exact sector sum approaches inside it.
    """
    if field_mode not in FIELD_MODES:
        raise ValueError(f"field_mode must be one of {FIELD_MODES}, got {field_mode!r}")
    if not test.infinite_mass:
        raise ValueError("joint_kick_weak handles infinite mass only; use joint_kick_finite_m")
    grid.check_resolution(charge, test)
    s = grid.offsets
    kick = np.exp(-1j * _kick_potential(test.charge, grid.rho, s, w, field_mode))
    amp = _charge_profile(charge, grid.z, w, T)[:, None] * kick * test.packet.profile_z(grid.zp)[None, :]
    return JointState2D(grid, amp)


# --- finite mass ---------------------------------------------------------------------


def _gauge(A: np.ndarray, d_zp: float) -> np.ndarray:
    """``chi`` with ``d chi / dz' = A`` along each row."""
    re = cumulative_simpson(A.real, dx=d_zp, axis=-1, initial=0.0)
    if not np.iscomplexobj(A):
        return re
    return re + 1j * cumulative_simpson(A.imag, dx=d_zp, axis=-1, initial=0.0)


def _finite_mass_kick(omega: np.ndarray, Vq: np.ndarray, Aq: np.ndarray, mass: float, d_zp: float, n_sub: int):
    """Apply ``exp(-i[(p' - A)^2/2m + V])`` row by row, V and A already times q'.

    In one dimension A is a pure gauge: ``(p' - A)^2 = e^{i chi} p'^2 e^{-i chi}``
    with ``chi' = A``, so only ``p'^2/2m + V`` needs splitting (Strang, n_sub
    steps of length 1/n_sub).
    """
    chi = _gauge(Aq, d_zp)
    n = omega.shape[-1]
    p = 2 * np.pi * np.fft.fftfreq(n, d=d_zp)
    dt = 1.0 / n_sub
    half_kin = np.exp(-1j * p**2 / (2 * mass) * dt / 2)
    pot = np.exp(-1j * Vq * dt)
    psi = omega * np.exp(-1j * chi)
    for _ in range(n_sub):
        psi = np.fft.ifft(half_kin * np.fft.fft(psi, axis=-1), axis=-1)
        psi = pot * psi
        psi = np.fft.ifft(half_kin * np.fft.fft(psi, axis=-1), axis=-1)
    return np.exp(1j * chi) * psi


@dataclass(frozen=True, eq=False)
class FiniteMassResult:
    weak: JointState2D
    exact: JointState2D | None
    substeps: int
    coupling_strength: float  # q' * max|A_z| over the weak branch


def _converged(build, tol: float, max_doublings: int):
    n_sub = 1
    prev = build(n_sub)
    for _ in range(max_doublings):
        n_sub *= 2
        cur = build(n_sub)
        scale = max(np.linalg.norm(cur), np.finfo(float).tiny)
        change = np.linalg.norm(cur - prev) / scale
        if change <= tol:
            return cur, n_sub
        prev = cur
    raise SplitStepUnconverged(f"state still changes by {change:.3g} after {n_sub} substeps")


def joint_kick_finite_m(
    charge: GaussianPacket,
    post_or_w,
    test: TestParticleSpec,
    T: float,
    grid: KickGrid,
    field_mode: str = "closed_form",
    tol: float = 1e-6,
    max_doublings: int = 8,
    threads: int | None = None,
) -> FiniteMassResult:
    """Finite-mass kick; exact (per-sector A_z = v V) and weak (A_z = w V) branches.

    Pass a :class:`CoinState` to get both branches or a bare weak velocity
    for the weak branch only. Substeps double until the relative change of
    the state is at most `tol`.
    """
    grid.check_resolution(charge, test)
    mass = test.mass
    s, z, zp = grid.offsets, grid.z, grid.zp
    omega = test.packet.profile_z(zp)[None, :]
    rho, q_t = grid.rho, test.charge
    post = post_or_w if isinstance(post_or_w, CoinState) else None
    w = coin.weak_velocity(post) if post is not None else float(post_or_w)

    Vw = _kick_potential(q_t, rho, s, w, field_mode)
    Aw = w * Vw

    def weak_build(n_sub):
        kicked = _finite_mass_kick(np.broadcast_to(omega, s.shape), Vw, Aw, mass, grid.d_zp, n_sub)
        return _charge_profile(charge, z, w, T)[:, None] * kicked

    weak_amp, n_weak = _converged(weak_build, tol, max_doublings)
    weak = JointState2D(grid, weak_amp)

    exact = None
    n_exact = 0
    if post is not None:
        log_ov, sign = coin.log_overlap(post)
        quad, unresolved = _quadrature_for(post, grid, s, need_analytic=q_t != 0)
        if unresolved is not None and unresolved.any():
            raise UnresolvedCells(f"{int(unresolved.sum())} cells lie too close to the wake boundary")

        def exact_build(n_sub):
            def term(v):
                Vv = _kick_potential(q_t, rho, s, v)
                kicked = _finite_mass_kick(np.broadcast_to(omega, s.shape), Vv, v * Vv, mass, grid.d_zp, n_sub)
                return _charge_profile(charge, z, v, T)[:, None] * kicked

            return sign * _sector_sum(quad, term, threads)

        exact_amp, n_exact = _converged(exact_build, tol, max_doublings)
        exact = JointState2D(grid, exact_amp, log_ov)
    strength = float(np.max(np.abs(Aw))) if Aw.size else 0.0
    return FiniteMassResult(weak=weak, exact=exact, substeps=max(n_weak, n_exact), coupling_strength=strength)


# --- moments ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MomentTable:
    """``errors[k, n, j]``: relative exact-vs-weak error at ladder[k], order n, momentum p_grid[j]."""

    ladder: tuple
    orders: tuple
    p_grid: np.ndarray
    T: float
    errors: np.ndarray
    exact_floor: float = 1e-12

    @property
    def exact_cells(self) -> np.ndarray:
        """Cells where the replacement holds identically (error at roundoff for every N)."""
        return np.all(self.errors <= self.exact_floor, axis=0)

    @property
    def strictly_decreasing(self) -> np.ndarray:
        return np.all(np.diff(self.errors, axis=0) < 0, axis=0)

    @property
    def slopes(self) -> np.ndarray:
        """Least-squares slope of log(error) against log(N) per cell; NaN for exact cells."""
        logn = np.log(np.asarray(self.ladder, dtype=float))
        out = np.full(self.errors.shape[1:], np.nan)
        for idx in np.ndindex(*out.shape):
            e = self.errors[(slice(None),) + idx]
            if np.all(e > self.exact_floor):
                out[idx] = np.polyfit(logn, np.log(e), 1)[0]
        return out

    @property
    def largest_slope(self) -> float:
        s = self.slopes
        return float(np.nanmax(s)) if np.isfinite(s).any() else float("nan")

    @property
    def converges(self) -> bool:
        return bool(np.all(self.strictly_decreasing | self.exact_cells))


def moment_replacement_check(
    post: CoinState,
    n_max: int,
    p_grid,
    T: float,
    ladder=None,
) -> MomentTable:
    """Tabulate ``moment_element`` errors over an N ladder (default: N, 2N, 4N, 8N)."""
    coin.weak_velocity(post)
    if not 0 <= n_max <= coin.MAX_MOMENT_ORDER:
        raise ValueError(f"n_max must lie in [0, {coin.MAX_MOMENT_ORDER}]")
    ladder = tuple(int(n) for n in (ladder or [post.n_spins * 2**k for k in range(4)]))
    p_grid = np.atleast_1d(np.asarray(p_grid, dtype=float))
    orders = tuple(range(n_max + 1))
    w = coin.weak_velocity(post)
    errors = np.empty((len(ladder), len(orders), p_grid.size))
    for k, n_spins in enumerate(ladder):
        state = CoinState(n_spins, post.amp_up, post.amp_down)
        for j, p in enumerate(p_grid):
            exact = coin.exact_moment_ratios(state, orders, p, T)
            phase = complex(math.cos(p * w * T), -math.sin(p * w * T))
            for n in orders:
                weak = w**n * phase
                diff = abs(exact[n] - weak)
                errors[k, n, j] = diff / abs(weak) if weak != 0 else diff
    return MomentTable(ladder, orders, p_grid, float(T), errors)


# --- causality -------------------------------------------------------------------------


@dataclass(frozen=True)
class CausalityQuery:
    distance: float
    n_spins: int
    charge: float
    horizon: float
    field_uncertainty: float | None = None

    def __post_init__(self):
        if not (self.distance > 0 and self.horizon > 0):
            raise ValueError("distance and horizon must be positive")
        if self.n_spins < 1:
            raise ValueError("n_spins must be >= 1")

    @property
    def delta_E(self) -> float:
        return 1.0 / self.distance**2 if self.field_uncertainty is None else self.field_uncertainty


@dataclass(frozen=True)
class CausalityReport:
    delta_z: float
    spread_ratio: float
    spread_condition: bool
    coupling_margin: float
    coupling_condition: bool
    causal_contact: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)


SPREAD_THRESHOLD = 10.0


def causality_check(query: CausalityQuery, w: float, T: float | None = None, eps: float | None = None) -> CausalityReport:
    """Position-uncertainty and coupling inequalities for a remote field observer.

    ``delta_z = D^3 dE / 2q``; the spread condition is
    ``sqrt(N) delta_z >= 10 |w| T``. The coupling condition is
    ``1 > 4 q^2 / N`` with margin ``N / 4q^2``. `eps` is accepted for
    interface symmetry and does not enter.
    """
    T = query.horizon if T is None else T
    q, N, D = abs(query.charge), query.n_spins, query.distance
    if q == 0:
        delta_z, ratio, margin = math.inf, math.inf, math.inf
    else:
        delta_z = D**3 * query.delta_E / (2 * q)
        ratio = math.sqrt(N) * delta_z / (abs(w) * T) if w * T != 0 else math.inf
        margin = N / (4 * q * q)
    return CausalityReport(
        delta_z=delta_z,
        spread_ratio=ratio,
        spread_condition=ratio >= SPREAD_THRESHOLD,
        coupling_margin=margin,
        coupling_condition=margin > 1,
        causal_contact=D <= T,
    )
