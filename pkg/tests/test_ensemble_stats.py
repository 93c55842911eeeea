import csv
import math

import numpy as np
import pytest
from scipy import stats

import oracles
from weakflow import ensemble_stats as es
from weakflow.coin import CoinState
from weakflow.errors import ZeroOverlap

SUPER_1000 = CoinState(1000, 0.8, -0.6)
T1 = 3.0 / 7.0


def chi_square_pvalue(counts, expected):
    """Pearson test on bins expecting more than 5 counts, renormalized to the kept total."""
    keep = expected > 5
    observed = counts[keep]
    return stats.chisquare(observed, expected[keep] * observed.sum() / expected[keep].sum()).pvalue


def config(post=SUPER_1000, t=T1, trials=100_000, seed=7, eps=1.0):
    return es.ExperimentConfig(post, eps, t, trials, seed)


def test_config_validation():
    with pytest.raises(ValueError):
        config(t=-1.0)
    with pytest.raises(ValueError):
        config(trials=0)
    with pytest.raises(ValueError):
        config(eps=0.0)


# --- ledger ------------------------------------------------------------------------


def test_zero_time_ledger():
    ledger = es.probability_ledger(config(post=CoinState(100, 0.8, -0.6), t=0.0))
    assert ledger.p_error_analytic == 1.0
    assert ledger.log_p_postselect_evolved == pytest.approx(ledger.log_p_postselect_static, abs=1e-12)


def test_static_probability_hundred_spins():
    ledger = es.probability_ledger(config(post=CoinState(100, 0.8, -0.6), t=0.0))
    assert ledger.log_p_postselect_static == pytest.approx(100 * math.log(0.02), rel=1e-12)
    assert ledger.p_postselect_static == pytest.approx(0.02**100, rel=1e-10)


def test_weak_regime_ordering():
    ledger = es.probability_ledger(config())
    assert ledger.log_p_error_analytic == pytest.approx(-9.0, abs=1e-12)
    assert ledger.log_floor == -1000.0
    assert ledger.log_p_postselect_static == pytest.approx(1000 * math.log(0.02), rel=1e-12)
    assert ledger.error_exceeds_floor and ledger.error_exceeds_postselection


def test_tiny_probabilities_reported_as_zero():
    ledger = es.probability_ledger(config())
    assert ledger.p_postselect_static == 0.0 and ledger.floor_e_minus_N == 0.0
    assert all(0.0 <= v <= 1.0 for k, v in ledger.as_dict().items() if not k.startswith("log"))


@pytest.mark.parametrize("t", [0.05, 0.4, 1.0, 2.0])
def test_evolved_probability_bounded(t):
    ledger = es.probability_ledger(config(post=CoinState(200, 0.8, -0.6), t=t))
    assert ledger.log_p_postselect_evolved <= 0.0


def test_evolved_probability_tends_to_static():
    post = CoinState(300, 0.8, -0.6)
    gaps = [
        abs(es.probability_ledger(config(post=post, t=t)).log_p_postselect_evolved - 300 * math.log(0.02))
        for t in (1e-1, 1e-2, 1e-3)
    ]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-4


def test_ledger_requires_overlap():
    with pytest.raises(ZeroOverlap):
        es.probability_ledger(config(post=CoinState(10, math.sqrt(0.5), -math.sqrt(0.5))))


# --- sampling ------------------------------------------------------------------------


def test_single_coin_bimodal():
    sample = es.sample_displacements(config(post=CoinState(1, 1.0, 0.0), t=10.0, trials=20_000), postselect=False)
    centers = 0.5 * (sample.edges[1:] + sample.edges[:-1])
    near_zero = np.abs(centers) < 5
    assert sample.counts[near_zero].sum() == 0
    assert abs(np.mean(sample.samples > 0) - 0.5) < 0.02


def test_unpostselected_spread():
    sample = es.sample_displacements(config(post=CoinState(100, 0.8, -0.6), t=10.0), postselect=False)
    expected = math.sqrt(10.0**2 / 100 + 0.5)
    assert abs(sample.std - expected) <= 0.05 * expected


def test_unpostselected_matches_binomial_mixture():
    cfg = config(post=CoinState(100, 0.8, -0.6), t=10.0)
    sample = es.sample_displacements(cfg, postselect=False, bins=40)
    cdf = oracles.binomial_mixture_cdf(sample.edges, 100, 10.0)
    assert chi_square_pvalue(sample.counts, np.diff(cdf) * sample.counts.sum()) > 0.01


def test_postselected_mean_near_weak_displacement():
    sample = es.sample_displacements(config(), postselect=True)
    assert abs(sample.mean - 3.0) < 0.1


def test_postselected_histogram_matches_density():
    cfg = config(trials=200_000, seed=3)
    sample = es.sample_displacements(cfg, postselect=True, bins=50)
    grid, dens = es.postselected_density(cfg)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
    probs = np.diff(np.interp(sample.edges, grid, cdf / cdf[-1]))
    assert chi_square_pvalue(sample.counts, probs * sample.counts.sum()) > 0.01


def test_density_integrates_to_one():
    grid, dens = es.postselected_density(config())
    assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-12)


def test_sampling_range_covers_negative_weak_velocity():
    lo, hi = es.sampling_range(config(post=CoinState(1000, -0.6, 0.8)), True)
    assert lo == pytest.approx(-11.0) and hi == pytest.approx(T1 + 8)


@pytest.mark.parametrize("postselect", [False, True])
def test_sampling_is_reproducible_and_thread_independent(postselect):
    cfg = config(trials=20_000, seed=123)
    a = es.sample_displacements(cfg, postselect, threads=1)
    b = es.sample_displacements(cfg, postselect, threads=4)
    assert np.array_equal(a.samples, b.samples)
    assert np.array_equal(a.counts, b.counts)


def test_different_seeds_differ():
    a = es.sample_displacements(config(trials=5000, seed=1), False)
    b = es.sample_displacements(config(trials=5000, seed=2), False)
    assert not np.array_equal(a.samples, b.samples)


def test_too_few_trials_for_bins():
    with pytest.raises(ValueError):
        es.sample_displacements(config(trials=100), False, bins=64)


def test_histogram_csv(tmp_path):
    sample = es.sample_displacements(config(trials=6400), False)
    path = tmp_path / "hist.csv"
    es.write_histogram_csv(path, sample)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["bin_left", "bin_right", "count", "density"]
    assert len(rows) == 65
    assert sum(int(r[2]) for r in rows[1:]) == sample.counts.sum()
    widths = np.array([float(r[1]) - float(r[0]) for r in rows[1:]])
    assert np.sum(widths * np.array([float(r[3]) for r in rows[1:]])) == pytest.approx(1.0)
