import math

import numpy as np
import pytest

from errors import ConfigurationError, InsufficientDataError, OutOfClassError
from kam_diag import (
    DivisorQuery,
    DivisorTable,
    ResonanceScan,
    action_grid,
    diophantine_scan,
    divisor_class_size,
    enumerate_divisors,
    fit_resonance_exponent,
    lattice_ball,
    lattice_ball_size,
    lipeomorphism_check,
    resonant_measure_mc,
    small_divisor_margin,
)
from nls_spectral import NlsModel, normal_form


def _toy_map(normal_modes):
    Omega = np.arange(1, normal_modes + 1, dtype=float) ** 2

    def freq_map(xi):
        return xi, Omega

    return freq_map


def test_lattice_ball_matches_its_closed_form():
    for dim in range(0, 5):
        for radius in range(0, 5):
            ball = lattice_ball(dim, radius)
            assert len(ball) == lattice_ball_size(dim, radius)
            assert len({tuple(v) for v in ball}) == len(ball)
            assert np.all(np.abs(ball).sum(axis=1) <= radius)
            assert not np.any(ball[0])


def test_divisor_enumeration_is_complete():
    ks, ls = enumerate_divisors(2, 3, 4)
    assert len(ks) == divisor_class_size(2, 3, 4)
    assert not np.any(np.all(ks == 0, axis=1) & np.all(ls == 0, axis=1))
    assert np.all(np.abs(ls).sum(axis=1) <= 2)
    with pytest.raises(OutOfClassError):
        enumerate_divisors(2, 3, 4, l_max=3)
    with pytest.raises(ConfigurationError):
        enumerate_divisors(0, 3, 0)


def test_margin_of_a_single_normal_frequency():
    q = DivisorQuery(k=(0, 0), l=(0, 1), tau=3, alpha=0.5)
    margin = small_divisor_margin(q, omega=[2.0, 5.0], Omega=[2.0, 5.0])
    assert margin.lhs == 5.0
    assert margin.threshold == 2.0
    assert margin.passed
    assert margin.as_dict() == {"lhs": 5.0, "threshold": 2.0, "pass": True}


def test_divisor_query_rejects_out_of_class_pairs():
    with pytest.raises(OutOfClassError):
        DivisorQuery(k=(0, 0), l=(0, 0), tau=3, alpha=0.5)
    with pytest.raises(OutOfClassError):
        DivisorQuery(k=(1, 0), l=(2, 1), tau=3, alpha=0.5)
    with pytest.raises(ValueError):
        DivisorQuery(k=(1, 0), l=(1,), tau=3, alpha=0.0)
    with pytest.raises(ValueError):
        DivisorQuery(k=(1, 0), l=(1,), tau=2, alpha=0.5)
    with pytest.raises(OutOfClassError):
        small_divisor_margin(DivisorQuery(k=(1, 0), l=(1,), tau=3, alpha=0.5), [1.0], [1.0])


def test_margin_matches_a_naive_sum():
    rng = np.random.default_rng(12)
    for _ in range(50):
        k = rng.integers(-4, 5, size=3)
        l = np.zeros(5, dtype=int)
        l[rng.choice(5, size=2, replace=False)] = rng.choice([-1, 1], size=2)
        omega, Omega = rng.uniform(-3, 3, 3), rng.uniform(0, 30, 5)
        q = DivisorQuery(k=tuple(k), l=tuple(l), tau=4.5, alpha=0.3)
        lhs = 0.0
        for i in range(3):
            lhs += k[i] * omega[i]
        weighted = 0.0
        for j in range(5):
            lhs += l[j] * Omega[j]
            weighted += l[j] * (j + 1) ** 2
        margin = small_divisor_margin(q, omega, Omega)
        assert margin.lhs == pytest.approx(abs(lhs), abs=1e-12)
        a_k = 1.0 + float(np.sum(np.abs(k))) ** 4.5
        assert margin.threshold == pytest.approx(0.3 * max(1.0, abs(weighted)) / a_k, rel=1e-12)


def test_scaling_frequencies_scales_only_the_left_side():
    q = DivisorQuery(k=(1, -1), l=(1, 0), tau=3, alpha=1.0)
    base = small_divisor_margin(q, [2.0, 5.0], [10.0, 17.0])
    scaled = small_divisor_margin(q, [4.0, 10.0], [20.0, 34.0])
    assert scaled.lhs == pytest.approx(2 * base.lhs)
    assert scaled.threshold == base.threshold
    # lhs 7 against threshold 1/9: scaling by 1/100 crosses it
    small = small_divisor_margin(q, [0.02, 0.05], [0.1, 0.17])
    assert base.passed and not small.passed


def test_table_margin_is_the_minimum_over_the_class():
    table = DivisorTable(2, 3, [3, 4], tau=3.0)
    rng = np.random.default_rng(3)
    omega = rng.uniform(1, 2, size=(4, 2))
    Omega = np.array([10.0, 17.0])
    margins = table.margins(omega, Omega)
    ks, ls = enumerate_divisors(2, 3, 2)
    for row, w in enumerate(omega):
        brute = np.inf
        for k, l in zip(ks, ls):
            lhs = abs(k @ w + l @ Omega)
            a_k = 1.0 + float(np.abs(k).sum()) ** 3.0
            l_d = max(1.0, abs(float(l @ np.array([9.0, 16.0]))))
            brute = min(brute, lhs * a_k / l_d)
        assert margins[row] == pytest.approx(brute, rel=1e-12)
    assert table.size == len(ks)


def test_zero_alpha_has_no_resonant_points():
    scan = ResonanceScan(((1.0, 2.0), (1.0, 2.0)), 3, 2, alphas=(0.0, 0.1), samples=2000)
    levels = resonant_measure_mc(scan, _toy_map(2), seed=1)
    assert levels[0].estimate.hits == 0
    assert levels[1].estimate.p_hat > 0.0
    assert levels[0].as_dict()["alpha"] == 0.0


def test_resonant_fraction_grows_with_alpha():
    alphas = (0.025, 0.05, 0.1, 0.2)
    scan = ResonanceScan(((1.0, 2.0), (1.0, 2.0)), 4, 3, alphas=alphas, samples=5000, tau=3)
    fractions = [level.estimate.p_hat for level in resonant_measure_mc(scan, _toy_map(3), seed=2)]
    assert fractions == sorted(fractions)


def test_resonance_scan_validation():
    with pytest.raises(ConfigurationError):
        ResonanceScan(((1.0, 1.0),), 3, 1, alphas=(0.1,))
    with pytest.raises(ConfigurationError):
        ResonanceScan(((1.0, 2.0),), 3, 1, alphas=(-0.1,))
    assert ResonanceScan(((1.0, 2.0), (0.0, 1.0)), 3, 1, alphas=(0.1,)).tau == 4.0


def test_fit_recovers_a_power_law():
    alphas = np.array([0.2, 0.1, 0.05, 0.025])
    fit = fit_resonance_exponent(alphas, 3.0 * alphas**1.2)
    assert fit.mu == pytest.approx(1.2)
    assert fit.log_constant == pytest.approx(math.log(3.0))
    with pytest.raises(InsufficientDataError):
        fit_resonance_exponent(alphas, [0.1, 0.0, 0.0, 0.0])


@pytest.mark.slow
def test_toy_resonant_measure_is_linear_in_alpha():
    alphas = (0.2, 0.1, 0.05, 0.025)
    scan = ResonanceScan(((1.0, 2.0), (1.0, 2.0)), 6, 4, alphas=alphas, samples=100_000, tau=3)
    levels = resonant_measure_mc(scan, _toy_map(4), seed=0)
    fractions = [level.estimate.p_hat for level in levels]
    assert fractions == sorted(fractions, reverse=True)
    assert fit_resonance_exponent(alphas, fractions).mu >= 0.8


def test_action_grid_layout():
    grid = action_grid([0.0, 1.0], [1.0, 2.0], 3)
    assert grid.shape == (9, 2)
    assert grid[0].tolist() == [0.0, 1.0] and grid[-1].tolist() == [1.0, 2.0]


def test_nls_scan_is_partial_and_nested():
    nf = normal_form(NlsModel(m=1.0), [1, 2], cutoff=12)
    scan = diophantine_scan(nf, action_grid([0.0, 0.0], [1.0, 1.0], 101), alpha=0.05, tau=3)
    assert 0.0 < scan.fraction < 1.0
    looser = scan.admissible_at(0.025)
    assert np.all(looser[scan.admissible])
    assert np.count_nonzero(looser) >= np.count_nonzero(scan.admissible)
    assert np.all(scan.admissible_at(0.0))
    assert len(list(scan.rows())) == 101**2


def test_resonance_line_is_excluded():
    nf = normal_form(NlsModel(m=1.0), [1, 2], cutoff=4)
    # omega_1 - omega_2 = -3 - (I_1 - I_2) / π vanishes on I_2 = I_1 + 3π
    on_line = np.array([[0.1, 0.1 + 3 * math.pi]])
    assert nf.omega(on_line[0]) @ np.array([1, -1]) == pytest.approx(0.0, abs=1e-12)
    scan = diophantine_scan(nf, on_line, alpha=1e-6, tau=3)
    assert not scan.admissible[0]
    assert scan.margins[0] <= 1e-10


def test_lipeomorphism_quotients_follow_the_twist_matrix():
    nf = normal_form(NlsModel(m=1.0), [1, 2], cutoff=4)
    report = lipeomorphism_check(nf.omega, ((0.0, 1.0), (0.0, 1.0)), pairs=500, seed=4)
    assert 1 / math.pi - 1e-12 <= report.min_quotient <= report.max_quotient <= 7 / math.pi + 1e-12
    assert not report.near_degenerate
    assert report.as_dict()["pairs"] == 500
