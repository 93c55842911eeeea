"""Potentials of a point charge on the z axis moving at constant speed v.

Two evaluations are provided:

* ``closed_form``: ``V = q / sqrt(rho^2 (1 - v^2) + (z - v t)^2)``, analytic in
  v, undefined where the radicand is negative (outside the Mach wake when
  |v| > 1).
* ``retarded_sum``: the sum over retarded roots ``tau <= t`` of
  ``q / |R - v (z - v tau)|`` with ``R = t - tau``. For |v| < 1 there is one
  root and the two agree; for |v| > 1 there are two roots inside the rear
  cone, each contributing ``q / sqrt(radicand)``, and none elsewhere.

``A_z = v V`` in both modes. Charge sits at ``(0, 0, v t)`` at time t.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import OnWorldline, SubluminalInput, UndefinedRegion

WORLDLINE_TOL = 1e-6
_RADICAND_FLOOR = 1e-30


@dataclass(frozen=True)
class SourceSpec:
    q: float = 1.0
    v: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        for name in ("q", "v", "t"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


@dataclass(frozen=True)
class PotentialSample:
    position: tuple
    V: float
    A_z: float
    n_retarded_roots: int
    defined: bool = True


def _rho_z(point) -> tuple[float, float]:
    x, y, z = (float(c) for c in point)
    return math.hypot(x, y), z


def radicand(src: SourceSpec, rho, z):
    return np.asarray(rho) ** 2 * (1.0 - src.v**2) + (np.asarray(z) - src.v * src.t) ** 2


def scalar_potential_closed(src: SourceSpec, point) -> float:
    rho, z = _rho_z(point)
    rad = float(radicand(src, rho, z))
    if rad < _RADICAND_FLOOR:
        if abs(src.v) < 1 or math.hypot(rho, z - src.v * src.t) < _RADICAND_FLOOR:
            raise OnWorldline(f"field point {tuple(point)} lies on the charge")
        raise UndefinedRegion(f"radicand {rad:.3g} <= 0 at {tuple(point)}: outside the Mach wake")
    return src.q / math.sqrt(rad)


def closed_form_grid(src: SourceSpec, rho, z) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized closed form: (V with 0 where undefined, defined mask)."""
    rad = radicand(src, rho, z)
    defined = rad >= _RADICAND_FLOOR
    with np.errstate(divide="ignore", invalid="ignore"):
        V = np.where(defined, src.q / np.sqrt(np.where(defined, rad, 1.0)), 0.0)
    return V, defined


def potential_of_velocity(q: float, rho, s, v):
    """Closed-form V at axial offset ``s`` from the charge, for real or complex v."""
    return q / np.sqrt(rho**2 * (1.0 - v**2) + s**2 + 0j)


def branch_points(rho, s):
    """Velocities where the closed form is singular at offset (rho, s)."""
    rho = np.asarray(rho, dtype=float)
    with np.errstate(divide="ignore"):
        return np.sqrt(1.0 + np.asarray(s, dtype=float) ** 2 / rho**2)


# --- retarded roots ------------------------------------------------------------


def _roots_arrays(src: SourceSpec, rho, z):
    """Both candidate roots (NaN when absent) for arrays of field points."""
    v, t = src.v, src.t
    rho = np.asarray(rho, dtype=float)
    z = np.asarray(z, dtype=float)
    A = 1.0 - v * v
    B = t - v * z
    C = t * t - rho**2 - z**2
    disc = radicand(src, rho, z)
    nan = np.full(np.broadcast(rho, z).shape, np.nan)
    if A == 0.0:
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            tau = np.where(B != 0, C / (2.0 * B), np.nan)
        return tau, nan.copy()
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    qq = B + np.copysign(sq, B)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        r1 = np.where(ok, qq / A, np.nan)
        r2 = np.where(ok & (qq != 0), C / qq, np.nan)
    # double root on the cone surface counts once
    r2 = np.where(ok & (disc == 0), np.nan, r2)
    return r1, r2


def retarded_residual(src: SourceSpec, rho, z, tau):
    """``g(tau) = (t - tau) - |x - x_charge(tau)|``."""
    return (src.t - tau) - np.hypot(rho, np.asarray(z) - src.v * tau)


def retarded_roots(src: SourceSpec, point) -> list[float]:
    rho, z = _rho_z(point)
    r1, r2 = _roots_arrays(src, rho, z)
    roots = [float(r) for r in (r1, r2) if np.isfinite(r) and r <= src.t]
    return sorted(roots)


def _lw_arrays(src: SourceSpec, rho, z):
    r1, r2 = _roots_arrays(src, rho, z)
    z = np.asarray(z, dtype=float)
    V = np.zeros(np.broadcast(rho, z).shape)
    count = np.zeros(V.shape, dtype=int)
    singular = np.zeros(V.shape, dtype=bool)
    for tau in (r1, r2):
        valid = np.isfinite(tau) & (tau <= src.t)
        tau_v = np.where(valid, tau, src.t)
        dist = src.t - tau_v
        denom = np.abs(dist - src.v * (z - src.v * tau_v))
        singular |= valid & (denom < math.sqrt(_RADICAND_FLOOR))
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            V += np.where(valid & (denom > 0), src.q / denom, 0.0)
        count += valid
    return V, count, singular


def lienard_wiechert(src: SourceSpec, point) -> float:
    rho, z = _rho_z(point)
    V, _, singular = _lw_arrays(src, rho, z)
    if bool(singular):
        raise OnWorldline(f"field point {tuple(point)} lies on the charge")
    return float(V)


def lienard_wiechert_grid(src: SourceSpec, rho, z) -> tuple[np.ndarray, np.ndarray]:
    V, count, singular = _lw_arrays(src, rho, z)
    return np.where(singular, 0.0, V), count


def sample(src: SourceSpec, point, mode: str = "retarded_sum") -> PotentialSample:
    rho, z = _rho_z(point)
    n = len(retarded_roots(src, point))
    try:
        V = scalar_potential_closed(src, point) if mode == "closed_form" else lienard_wiechert(src, point)
        defined = mode == "closed_form" or n > 0
    except (OnWorldline, UndefinedRegion):
        V, defined = 0.0, False
    return PotentialSample(tuple(float(c) for c in point), V, src.v * V, n, defined)


# --- maps ----------------------------------------------------------------------

MODES = ("closed_form", "retarded_sum")


@dataclass(frozen=True)
class FieldGrid:
    rho_min: float
    rho_max: float
    n_rho: int
    z_min: float
    z_max: float
    n_z: int

    def __post_init__(self):
        if self.n_rho < 2 or self.n_z < 2:
            raise ValueError("grid needs at least 2 points per axis")
        if not (self.rho_max > self.rho_min >= 0 and self.z_max > self.z_min):
            raise ValueError("grid spacing must be positive and rho non-negative")

    @property
    def rho(self) -> np.ndarray:
        return np.linspace(self.rho_min, self.rho_max, self.n_rho)

    @property
    def z(self) -> np.ndarray:
        return np.linspace(self.z_min, self.z_max, self.n_z)

    @property
    def d_rho(self) -> float:
        return (self.rho_max - self.rho_min) / (self.n_rho - 1)

    @property
    def d_z(self) -> float:
        return (self.z_max - self.z_min) / (self.n_z - 1)


@dataclass(frozen=True, eq=False)
class FieldMap:
    """Arrays are indexed ``[iz, irho]``."""

    source: SourceSpec
    grid: FieldGrid
    mode: str
    V: np.ndarray
    A_z: np.ndarray
    n_roots: np.ndarray
    defined: np.ndarray
    on_worldline: np.ndarray

    def samples(self):
        rho, z = self.grid.rho, self.grid.z
        for i, zi in enumerate(z):
            for j, rj in enumerate(rho):
                yield PotentialSample(
                    (float(rj), 0.0, float(zi)),
                    float(self.V[i, j]),
                    float(self.A_z[i, j]),
                    int(self.n_roots[i, j]),
                    bool(self.defined[i, j]),
                )

    def write_csv(self, path) -> None:
        rho, z = self.grid.rho, self.grid.z
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["rho", "z", "V", "A_z", "n_roots", "defined_flag"])
            for i, zi in enumerate(z):
                for j, rj in enumerate(rho):
                    writer.writerow(
                        [
                            repr(float(rj)),
                            repr(float(zi)),
                            repr(float(self.V[i, j])),
                            repr(float(self.A_z[i, j])),
                            int(self.n_roots[i, j]),
                            int(self.defined[i, j]),
                        ]
                    )

    def write_gnuplot(self, path, csv_name: str, image_name: str = "field_map.png") -> None:
        script = "\n".join(
            [
                "set datafile separator ','",
                "set terminal pngcairo size 900,700",
                f"set output '{image_name}'",
                "set xlabel 'rho'",
                "set ylabel 'z'",
                f"set title 'V, v = {self.source.v:g}, t = {self.source.t:g}, mode {self.mode}'",
                "set view map",
                "set palette rgbformulae 33,13,10",
                f"plot '{csv_name}' using 1:2:3 every ::1 with image notitle",
                "",
            ]
        )
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(script)


def field_map(src: SourceSpec, grid: FieldGrid, mode: str = "retarded_sum", threads: int | None = None) -> FieldMap:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    rho = grid.rho

    def row(zi):
        z = np.full(rho.shape, zi)
        worldline = np.hypot(rho, z - src.v * src.t) < WORLDLINE_TOL
        lw, count = lienard_wiechert_grid(src, rho, z)
        if mode == "closed_form":
            V, defined = closed_form_grid(src, rho, z)
        else:
            V, defined = lw, count > 0
        defined = defined & ~worldline
        return np.where(defined, V, 0.0), count, defined, worldline

    with ThreadPoolExecutor(max_workers=threads) as pool:
        rows = list(pool.map(row, grid.z))
    V = np.array([r[0] for r in rows])
    return FieldMap(
        source=src,
        grid=grid,
        mode=mode,
        V=V,
        A_z=src.v * V,
        n_roots=np.array([r[1] for r in rows]),
        defined=np.array([r[2] for r in rows]),
        on_worldline=np.array([r[3] for r in rows]),
    )


def support_comparison(src: SourceSpec, grid: FieldGrid) -> dict:
    """Closed-form support restricted to the causal half against the retarded support.

    For v > 0 the causal half is ``z < v t`` (behind the charge); the
    retarded support is taken as ground truth and mismatching cells are
    returned as a mask.
    """
    closed = field_map(src, grid, "closed_form").defined
    retarded = field_map(src, grid, "retarded_sum").defined
    behind = np.sign(src.v) * (grid.z[:, None] - src.v * src.t) < 0 if src.v != 0 else np.ones_like(closed)
    mismatch = (closed & behind) != retarded
    return {"closed": closed, "retarded": retarded, "mismatch": mismatch, "n_mismatch": int(mismatch.sum())}


def mach_cone_half_angle(v: float) -> float:
    """Half-angle in degrees of the support cone about the trajectory."""
    if abs(v) <= 1:
        raise SubluminalInput(f"|v| = {abs(v)} does not exceed 1")
    return math.degrees(math.atan(1.0 / math.sqrt(v * v - 1.0)))


def measured_cone_half_angle(fmap: FieldMap) -> float:
    """Half-angle in degrees fitted to the support boundary behind the charge.

    For each rho column the boundary is placed midway between the last
    unsupported and the first supported cell, walking from the apex
    backwards; ``|dz| = rho cot(angle)`` is then fitted through the apex.
    """
    src, grid = fmap.source, fmap.grid
    apex = src.v * src.t
    direction = -np.sign(src.v)
    z = grid.z
    ds, rs = [], []
    for j, rj in enumerate(grid.rho):
        if rj <= 0:
            continue
        behind = direction * (z - apex) > 0
        offsets = direction * (z - apex)
        order = np.argsort(offsets)
        mask = fmap.defined[:, j][order] & behind[order]
        if not mask.any() or mask[0]:
            continue
        k = int(np.argmax(mask))
        if k == 0 or not behind[order][k - 1]:
            continue
        ds.append(0.5 * (offsets[order][k - 1] + offsets[order][k]))
        rs.append(rj)
    if len(rs) < 2:
        raise ValueError("grid does not resolve the cone boundary")
    ds, rs = np.array(ds), np.array(rs)
    slope = float(ds @ rs / (rs @ rs))
    return math.degrees(math.atan(1.0 / slope))
