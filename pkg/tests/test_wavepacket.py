import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from weakflow import coin
from weakflow import wavepacket as wp
from weakflow.coin import CoinState
from weakflow.errors import GridTooCoarse, ZeroNorm, ZeroOverlap

R2 = math.sqrt(0.5)
G = wp.GaussianPacket()
POST = CoinState(1000, 0.8, -0.6)
T1 = 3.0 / 7.0

# 1 - F(exact, weak) from oracles.mp_fidelity_vs_weak (mpmath Gram-matrix sum), a=0.8, b=-0.6, t=3/7
FROZEN_FIDELITY = {
    250: 0.9998389340603538,
    500: 0.9999604429125838,
    1000: 0.9999901978896215,
    2000: 0.9999975602735001,
}


def physical_terms(sup):
    return [(c * math.exp(sup.log_scale), d) for c, d in sup.terms]


# --- packets -----------------------------------------------------------------------


def test_packet_rejects_nonpositive_width():
    with pytest.raises(ValueError):
        wp.GaussianPacket(width=0.0)


def test_packet_is_normalized_in_three_dimensions():
    z = np.linspace(-10, 10, 2001)
    dz = z[1] - z[0]
    assert np.sum(np.abs(G.profile_z(z)) ** 2) * dz == pytest.approx(1.0, abs=1e-12)
    x = np.linspace(-10, 10, 801)
    X, Y = np.meshgrid(x, x)
    dx = x[1] - x[0]
    assert np.sum(G.transverse(X, Y) ** 2) * dx * dx == pytest.approx(1.0, abs=1e-10)


def test_momentum_profile_is_fourier_transform():
    packet = wp.GaussianPacket(center=(0, 0, 1.3), width=0.7)
    z = np.linspace(-15, 15, 6001)
    for p in (-2.0, 0.0, 1.5):
        ft = np.sum(packet.profile_z(z) * np.exp(-1j * p * z)) * (z[1] - z[0]) / math.sqrt(2 * math.pi)
        assert abs(ft - packet.momentum_profile(p)) < 1e-12


# --- exact evolution ------------------------------------------------------------------


def test_zero_time_is_single_term_with_overlap():
    post = CoinState(10, 0.8, -0.6)
    sup = wp.evolve_exact(G, post, 0.0)
    terms = physical_terms(sup)
    assert len(terms) == 1 and terms[0][1] == 0.0
    assert terms[0][0].real == pytest.approx(coin.overlap(post), rel=1e-12)


def test_all_up_postselection_is_single_displaced_term():
    sup = wp.evolve_exact(G, CoinState(6, 1.0, 0.0), 1.5)
    assert list(sup.displacements) == [1.5]
    z = np.linspace(-4, 6, 41)
    assert np.allclose(sup.amplitude(z) * math.exp(sup.log_scale), 2**-3 * G.profile_z(z - 1.5), atol=1e-14)


def test_two_spin_hand_expansion():
    sup = wp.evolve_exact(G, CoinState(2, R2, R2), 1.0)
    terms = physical_terms(sup)
    assert [d for _, d in terms] == [-1.0, 0.0, 1.0]
    assert np.allclose([c.real for c, _ in terms], [0.25, 0.5, 0.25], atol=1e-15)


@given(n=st.integers(1, 200), theta=st.floats(-1.4, 1.4), t=st.floats(0, 5))
def test_displacements_bounded_by_light_speed(n, theta, t):
    post = CoinState(n, math.cos(theta), math.sin(theta))
    if abs(post.amp_up + post.amp_down) < 1e-9:
        return
    sup = wp.evolve_exact(G, post, t)
    assert np.all(np.abs(sup.displacements) <= t * (1 + 1e-15))


def test_negative_time_rejected():
    with pytest.raises(ValueError):
        wp.evolve_exact(G, POST, -1.0)


def test_orthogonal_postselection_propagates():
    with pytest.raises(ZeroOverlap):
        wp.evolve_exact(G, CoinState(3, R2, -R2), 1.0)


def test_transverse_factor_is_inert():
    sup = wp.evolve_exact(G, CoinState(20, 0.9, math.sqrt(0.19)), 1.0)
    x, y, z = 0.3, -0.4, np.array([0.1, 0.7])
    assert np.allclose(sup(x, y, z), G.transverse(x, y) * sup.amplitude(z), atol=1e-15)


@pytest.mark.parametrize(
    "post, t",
    [(CoinState(8, 0.8, -0.6), 0.5), (CoinState(200, 0.9, math.sqrt(0.19)), 2.0), (CoinState(30, R2, R2), 3.0)],
)
def test_momentum_route_matches_term_sum(post, t):
    sup = wp.evolve_exact(G, post, t)
    z = np.linspace(-6, 8, 57)
    assert np.max(np.abs(sup.amplitude(z) - sup.term_sum_amplitude(z))) < 1e-8


@pytest.mark.parametrize("n, t", [(1000, T1), (1000, 1.0), (400, 0.8)])
def test_amplitude_matches_high_precision_sum(n, t):
    z = np.array([-1.0, t, 3.0, 7.0 * t, 9.0])
    ref = oracles.mp_packet_amplitude(n, 0.8, -0.6, t, z)
    got = wp.evolve_exact(G, CoinState(n, 0.8, -0.6), t).amplitude(z)
    assert np.max(np.abs(got - ref)) < 1e-10


@given(theta=st.floats(-1.4, 1.4), n=st.integers(1, 400), t=st.floats(0, 4))
def test_postselected_norm_bounded_by_one(theta, n, t):
    post = CoinState(n, math.cos(theta), math.sin(theta))
    if abs(post.amp_up + post.amp_down) < 1e-6:
        return
    assert wp.evolve_exact(G, post, t).log_norm() <= 1e-12


def test_born_weights_sum_to_one():
    total = sum(s.weight.real for s in coin.sector_decomposition(CoinState.preselected(500)))
    assert total == pytest.approx(1.0, abs=1e-12)


# --- weak evolution -------------------------------------------------------------------


def test_weak_identity_for_zero_velocity():
    assert wp.evolve_weak(G, 0.0, 3.0) == G


def test_weak_displacement_value():
    assert wp.evolve_weak(G, 7.0, 1.0).center == (0.0, 0.0, 7.0)


@given(w=st.floats(-10, 10), t1=st.floats(0, 5), t2=st.floats(0, 5))
def test_weak_evolution_composes(w, t1, t2):
    a = wp.evolve_weak(wp.evolve_weak(G, w, t1), w, t2).z0
    assert a == pytest.approx(wp.evolve_weak(G, w, t1 + t2).z0, abs=1e-12)


# --- fidelity -------------------------------------------------------------------------


def test_self_fidelity_is_one():
    sup = wp.evolve_exact(G, POST, T1)
    assert wp.fidelity(sup, sup) == pytest.approx(1.0, abs=1e-12)
    assert wp.fidelity(G, G) == 1.0


def test_separated_gaussians_fidelity():
    b = wp.evolve_weak(G, 1.0, 2.0)
    assert wp.fidelity(G, b) == pytest.approx(math.exp(-2), rel=1e-12)
    assert wp.fidelity(G, b) == pytest.approx(oracles.gaussian_overlap_quad(0.0, 2.0) ** 2, rel=1e-10)


@given(d1=st.floats(-5, 5), d2=st.floats(-5, 5), eps=st.floats(0.3, 3))
def test_pairwise_overlap_matches_quadrature(d1, d2, eps):
    a = wp.GaussianPacket(center=(0, 0, d1), width=eps)
    b = wp.GaussianPacket(center=(0, 0, d2), width=eps)
    assert wp.fidelity(a, b) == pytest.approx(oracles.gaussian_overlap_quad(d1, d2, eps) ** 2, rel=1e-8, abs=1e-14)


def test_fidelity_zero_norm_raises():
    cancelled = wp.PacketSuperposition.from_terms(G, [(1.0, 0.5), (-1.0, 0.5)])
    with pytest.raises(ZeroNorm):
        wp.fidelity(cancelled, G)


def test_fidelity_needs_equal_widths():
    with pytest.raises(ValueError):
        wp.fidelity(G, wp.GaussianPacket(width=2.0))


@pytest.mark.parametrize("n", sorted(FROZEN_FIDELITY))
def test_fidelity_matches_frozen_oracle(n):
    exact = wp.evolve_exact(G, CoinState(n, 0.8, -0.6), T1)
    f = wp.fidelity(exact, wp.evolve_weak(G, 7.0, T1))
    assert f == pytest.approx(FROZEN_FIDELITY[n], abs=1e-11)


def test_fidelity_matches_live_oracle_small_n():
    exact = wp.evolve_exact(G, CoinState(60, 0.8, -0.6), 0.6)
    f = wp.fidelity(exact, wp.evolve_weak(G, 7.0, 0.6))
    assert f == pytest.approx(oracles.mp_fidelity_vs_weak(60, 0.8, -0.6, 0.6), abs=1e-12)


def test_fidelity_increases_along_doubling_ladder():
    values = [FROZEN_FIDELITY[n] for n in sorted(FROZEN_FIDELITY)]
    live = [wp.convergence_report(G, CoinState(n, 0.8, -0.6), T1).fidelity for n in sorted(FROZEN_FIDELITY)]
    assert all(b > a for a, b in zip(live, live[1:]))
    assert np.allclose(live, values, atol=1e-11)


@given(n=st.integers(100, 3000), frac=st.floats(0.05, 1.0), theta=st.sampled_from([-0.6435, 0.3, -1.2]))
def test_weak_regime_fidelity_and_peak(n, frac, theta):
    post = CoinState(n, math.cos(theta), math.sin(theta))
    w = coin.weak_velocity(post)
    t = frac * math.sqrt(0.01 * n) / abs(w)
    report = wp.convergence_report(G, post, t)
    assert report.distortion_parameter <= 0.01 + 1e-12
    assert report.fidelity > 0.99
    assert report.peak_error < 0.05


def test_distortion_parameter_definition():
    report = wp.convergence_report(G, POST, T1)
    assert report.distortion_parameter == pytest.approx(9.0 / 1000, rel=1e-12)
    assert report.n_spins == 1000


# --- first-order correction -------------------------------------------------------------


def test_correction_vanishes_for_large_n():
    corrected = wp.correction_factor(G, CoinState(10**8, 0.8, -0.6), T1)
    assert corrected.curvature == pytest.approx(9.0 / 2e8, rel=1e-12)
    assert wp.fidelity(corrected, wp.evolve_weak(G, 7.0, T1)) > 1 - 1e-12


@pytest.mark.parametrize("n", [250, 500, 1000, 2000])
def test_correction_improves_fidelity(n):
    post = CoinState(n, 0.8, -0.6)
    exact = wp.evolve_exact(G, post, T1)
    assert wp.fidelity(exact, wp.correction_factor(G, post, T1)) > wp.fidelity(exact, wp.evolve_weak(G, 7.0, T1))


def test_corrected_packet_closed_form_matches_momentum_route():
    corrected = wp.correction_factor(G, CoinState(50, 0.8, -0.6), 1.0)
    z = np.linspace(-2, 14, 33)
    via_fourier = wp._momentum_to_position(corrected, z)
    assert np.max(np.abs(via_fourier - corrected.amplitude(z))) < 1e-10


def test_weak_deficit_scales_as_inverse_square():
    # the rigid-shift error is a second-order effect of the O(1/N) shape change
    ns = np.array(sorted(FROZEN_FIDELITY))
    deficit = np.array([1 - FROZEN_FIDELITY[n] for n in ns])
    slope = np.polyfit(np.log(ns), np.log(deficit), 1)[0]
    assert slope == pytest.approx(-2.0, abs=0.05)


# --- peak finding -----------------------------------------------------------------------


def test_peak_of_displaced_gaussian():
    assert wp.peak_position(wp.evolve_weak(G, 7.0, 0.7)) == pytest.approx(4.9, abs=1e-6)


def test_peak_of_exact_packet_near_weak_displacement():
    assert wp.peak_position(wp.evolve_exact(G, POST, T1)) == pytest.approx(3.0, abs=0.05)


# --- light cone --------------------------------------------------------------------------


def test_truncated_packet_respects_light_cone():
    report = wp.light_cone_check(G, POST, 1.0)
    outside = np.abs(report.grid) > 6.0
    assert np.all(np.abs(report.truncated_amplitude[outside]) <= 1e-14)
    assert report.holds


def test_analytic_packet_reaches_weak_position():
    report = wp.light_cone_check(G, POST, 1.0)
    assert report.analytic_ratio > 1e-6


def test_zero_time_support_unchanged():
    report = wp.light_cone_check(G, CoinState(50, 0.8, -0.6), 0.0)
    inside = np.abs(report.grid) <= 5.0
    assert np.all(report.truncated_amplitude[~inside] == 0)
    assert np.all(np.abs(report.truncated_amplitude[inside]) > 0)


@given(n=st.integers(1, 60), theta=st.floats(-1.4, 1.4), t=st.floats(0, 3))
def test_light_cone_for_any_postselection(n, theta, t):
    post = CoinState(n, math.cos(theta), math.sin(theta))
    if abs(post.amp_up + post.amp_down) < 1e-6:
        return
    report = wp.light_cone_check(G, post, t)
    assert report.max_outside == 0.0


def test_coarse_light_cone_grid_rejected():
    with pytest.raises(GridTooCoarse):
        wp.light_cone_check(G, POST, 1.0, spacing=0.2)
