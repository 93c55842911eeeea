"""Probability bookkeeping and Monte Carlo displacement statistics."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from . import coin, wavepacket
from .coin import CoinState
from .errors import GridTooCoarse

LINEAR_FLOOR_LOG = -700.0
SAMPLING_POINTS = 2**14
N_SHARDS = 16


@dataclass(frozen=True)
class ExperimentConfig:
    coin_post: CoinState
    epsilon: float = 1.0
    t: float = 0.0
    trials: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon!r}")
        if not self.t >= 0:
            raise ValueError(f"t must be >= 0, got {self.t!r}")
        if int(self.trials) != self.trials or self.trials < 1:
            raise ValueError(f"trials must be a positive integer, got {self.trials!r}")

    @property
    def packet(self) -> wavepacket.GaussianPacket:
        return wavepacket.GaussianPacket(width=self.epsilon)


def _linear(log_value: float) -> float:
    return 0.0 if log_value < LINEAR_FLOOR_LOG else math.exp(log_value)


@dataclass(frozen=True)
class ProbabilityLedger:
    log_p_error_analytic: float
    log_p_postselect_static: float
    log_p_postselect_evolved: float
    log_floor: float

    @property
    def p_error_analytic(self) -> float:
        return _linear(self.log_p_error_analytic)

    @property
    def p_postselect_static(self) -> float:
        return _linear(self.log_p_postselect_static)

    @property
    def p_postselect_evolved(self) -> float:
        return _linear(self.log_p_postselect_evolved)

    @property
    def floor_e_minus_N(self) -> float:
        return _linear(self.log_floor)

    @property
    def error_exceeds_floor(self) -> bool:
        return self.log_p_error_analytic > self.log_floor

    @property
    def error_exceeds_postselection(self) -> bool:
        return self.log_p_error_analytic > self.log_p_postselect_static

    def as_dict(self) -> dict:
        return {
            "log_p_error_analytic": self.log_p_error_analytic,
            "log_p_postselect_static": self.log_p_postselect_static,
            "log_p_postselect_evolved": self.log_p_postselect_evolved,
            "log_floor": self.log_floor,
            "p_error_analytic": self.p_error_analytic,
            "p_postselect_static": self.p_postselect_static,
            "p_postselect_evolved": self.p_postselect_evolved,
            "floor_e_minus_N": self.floor_e_minus_N,
        }


def probability_ledger(config: ExperimentConfig) -> ProbabilityLedger:
    """Error, postselection and floor probabilities in log space.

    The error probability is ``exp(-w^2 t^2 / eps^2)`` with unit prefactor.
    The evolved postselection probability is the squared norm of the exact
    postselected packet, which for t = 0 reduces to the static value.
    """
    post = config.coin_post
    w = coin.weak_velocity(post)
    log_ov, _ = coin.log_overlap(post)
    exact = wavepacket.evolve_exact(config.packet, post, config.t)
    log_evolved = 2.0 * exact.log_norm()
    return ProbabilityLedger(
        log_p_error_analytic=-((w * config.t / config.epsilon) ** 2),
        log_p_postselect_static=2.0 * log_ov,
        log_p_postselect_evolved=min(log_evolved, 0.0),
        log_floor=-float(post.n_spins),
    )


# --- sampling ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DisplacementSample:
    samples: np.ndarray
    edges: np.ndarray
    counts: np.ndarray
    postselected: bool

    @property
    def mean(self) -> float:
        return float(self.samples.mean())

    @property
    def std(self) -> float:
        return float(self.samples.std(ddof=1)) if self.samples.size > 1 else 0.0

    @property
    def density(self) -> np.ndarray:
        widths = np.diff(self.edges)
        return self.counts / (self.counts.sum() * widths)

    def summary(self) -> dict:
        return {"trials": int(self.samples.size), "mean": self.mean, "std": self.std, "postselected": self.postselected}


def sampling_range(config: ExperimentConfig, postselect: bool) -> tuple[float, float]:
    t, eps = config.t, config.epsilon
    if not postselect:
        return -t - 8 * eps, t + 8 * eps
    wt = coin.weak_velocity(config.coin_post) * t
    return min(-t, wt) - 8 * eps, max(t, wt) + 8 * eps


def postselected_density(config: ExperimentConfig, points: int = SAMPLING_POINTS) -> tuple[np.ndarray, np.ndarray]:
    """Grid and normalized ``|evolve_exact|^2`` density used for inverse-CDF sampling."""
    lo, hi = sampling_range(config, True)
    grid = np.linspace(lo, hi, points)
    if grid[1] - grid[0] > config.epsilon / 8:
        raise GridTooCoarse(f"sampling grid spacing {grid[1] - grid[0]:.3g} exceeds eps/8")
    exact = wavepacket.evolve_exact(config.packet, config.coin_post, config.t)
    dens = np.abs(exact.amplitude(grid)) ** 2
    dens /= trapezoid(dens, grid)
    return grid, dens


def _shard_sizes(trials: int) -> list[int]:
    base, extra = divmod(trials, N_SHARDS)
    return [base + (i < extra) for i in range(N_SHARDS)]


def sample_displacements(
    config: ExperimentConfig,
    postselect: bool,
    bins: int = 64,
    threads: int | None = None,
) -> DisplacementSample:
    """Draw z positions at time t, with or without postselection.

    Trials are split into a fixed number of shards, each driven by its own
    child of ``SeedSequence(seed)``, so results do not depend on the thread
    count.
    """
    if config.trials < 10 * bins:
        raise ValueError(f"{config.trials} trials cannot average 10 counts over {bins} bins")
    children = np.random.SeedSequence(config.seed).spawn(N_SHARDS)
    sizes = _shard_sizes(config.trials)
    eps, t = config.epsilon, config.t
    lo, hi = sampling_range(config, postselect)

    if postselect:
        grid, dens = postselected_density(config)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
        cdf /= cdf[-1]

        def draw(seq, size):
            return np.interp(np.random.default_rng(seq).random(size), cdf, grid)

    else:
        n_spins = config.coin_post.n_spins

        def draw(seq, size):
            rng = np.random.default_rng(seq)
            v = (2.0 * rng.binomial(n_spins, 0.5, size) - n_spins) / n_spins
            return v * t + rng.normal(0.0, eps / math.sqrt(2.0), size)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(draw, children, sizes))
    samples = np.concatenate(parts)
    counts, edges = np.histogram(samples, bins=bins, range=(lo, hi))
    return DisplacementSample(samples=samples, edges=edges, counts=counts, postselected=postselect)


def write_histogram_csv(path, sample: DisplacementSample) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_left", "bin_right", "count", "density"])
        for left, right, count, dens in zip(sample.edges[:-1], sample.edges[1:], sample.counts, sample.density):
            writer.writerow([repr(float(left)), repr(float(right)), int(count), repr(float(dens))])
