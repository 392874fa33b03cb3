import math
from functools import partial

import numpy as np
import pytest
from scipy.stats import skew

from errors import DegenerateMeasureError, DimensionError, IntegrationError
from hamiltonian_models import FreeModel, HarmonicLattice, PendulumLattice
from lattice_core import LatticeState, PathGrid, WeightSequence, torus_distance
from sde_engine import (
    NoiseModel,
    SimConfig,
    girsanov_log_weights,
    girsanov_weight,
    grid_steps,
    run_blocks,
    simulate,
    simulate_deterministic,
    simulate_ensemble,
)


def _final_momenta(Q, P, dt):
    return P[-1]


def _log_weights(Q, P, dt, ref, model, noise):
    return girsanov_log_weights(Q, P, ref.q, ref.p, dt, model, noise)


def test_zero_noise_free_path_is_constant():
    model = FreeModel(3)
    x0 = LatticeState([0.5, 1.0, 6.0], [0.0, 0.0, 0.0])
    path = simulate(model, NoiseModel.constant(3, epsilon=0.0), x0, 1.0, SimConfig(0.1))
    assert path.K == 10
    assert np.array_equal(path.q, np.tile(x0.q, (11, 1)))
    assert np.array_equal(path.p, np.zeros((11, 3)))


def test_harmonic_orbit_closes_after_one_period():
    model = HarmonicLattice([1.0])
    x0 = LatticeState([0.3], [0.0])
    path = simulate_deterministic(model, x0, 2 * math.pi, SimConfig(1e-3, scheme="splitting"))
    assert torus_distance(path.q[-1, 0], 0.3) <= 1e-4
    assert abs(path.p[-1, 0]) <= 1e-4


def test_splitting_conserves_pendulum_energy():
    model = PendulumLattice.on(WeightSequence.box((4,)), kappa=0.5)
    x0 = LatticeState([0.3, -0.2, 0.5, 0.1], [0.2, 0.0, -0.1, 0.4])
    path = simulate_deterministic(model, x0, 10.0, SimConfig(1e-3, scheme="splitting"))
    energies = model.value(path.q, path.p)
    assert np.max(np.abs(energies - energies[0])) <= 1e-5


def test_momentum_variance_grows_like_eps_squared_t():
    model = FreeModel(4, angular=False)
    noise = NoiseModel.constant(4, epsilon=0.5)
    blocks = run_blocks(model, noise, LatticeState.zeros(4, angular=False), 1.0,
                        SimConfig(0.01, seed=3), 4000, _final_momenta, block_size=1000)
    final = np.concatenate(blocks)
    assert final.shape == (4000, 4)
    assert np.var(final) == pytest.approx(0.25, rel=0.05)


def test_simulation_is_reproducible():
    model = PendulumLattice.on(WeightSequence.box((3,)))
    noise = NoiseModel.constant(3, epsilon=0.3)
    x0 = LatticeState([0.1, 0.2, 0.3], [0.0, 0.0, 0.0])
    first = simulate(model, noise, x0, 1.0, SimConfig(0.01, seed=42))
    second = simulate(model, noise, x0, 1.0, SimConfig(0.01, seed=42))
    other = simulate(model, noise, x0, 1.0, SimConfig(0.01, seed=43))
    assert np.array_equal(first.q, second.q) and np.array_equal(first.p, second.p)
    assert not np.array_equal(first.p, other.p)


def test_worker_count_does_not_change_the_ensemble():
    model = PendulumLattice.on(WeightSequence.box((2,)))
    noise = NoiseModel.constant(2, epsilon=0.2)
    x0 = LatticeState.zeros(2)
    cfg = SimConfig(0.05, seed=9)
    serial = simulate_ensemble(model, noise, x0, 1.0, cfg, 120, block_size=50)
    parallel = simulate_ensemble(model, noise, x0, 1.0, cfg, 120, workers=2, block_size=50)
    assert serial.n_paths == 120
    assert np.array_equal(serial.q, parallel.q)
    assert np.array_equal(serial.p, parallel.p)


def test_girsanov_weight_is_one_without_drift_or_tilt():
    model = FreeModel(2)
    noise = NoiseModel.constant(2, epsilon=0.5)
    x0 = LatticeState([0.2, 0.4], [0.0, 0.0])
    path = simulate(model, noise, x0, 1.0, SimConfig(0.01, seed=1))
    reference = PathGrid.constant(x0, 0.0, 1.0, path.K)
    assert girsanov_weight(path, model, noise, reference) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.slow
def test_girsanov_weight_has_unit_mean():
    model = FreeModel(4, angular=False)
    noise = NoiseModel.constant(4, epsilon=1.0)
    x0 = LatticeState.zeros(4, angular=False)
    T, K = 0.5, 50
    t = np.linspace(0.0, T, K + 1)[:, None]
    ramp = PathGrid(0.0, T, np.zeros((K + 1, 4)), np.tile(0.5 * t, (1, 4)), angular=False)
    reducer = partial(_log_weights, ref=ramp, model=model, noise=noise)
    n = 100_000
    blocks = run_blocks(model, noise, x0, T, SimConfig(T / K, seed=5), n, reducer,
                        block_size=10_000)
    weights = np.exp(np.concatenate(blocks))
    assert abs(np.mean(weights) - 1.0) <= 3.0 * np.std(weights) / np.sqrt(n)


def test_girsanov_needs_positive_noise_and_shared_grid():
    model = FreeModel(1)
    x0 = LatticeState.zeros(1)
    path = PathGrid.constant(x0, 0.0, 1.0, 10)
    with pytest.raises(DegenerateMeasureError):
        girsanov_weight(path, model, NoiseModel.constant(1, epsilon=0.0), path)
    with pytest.raises(DimensionError):
        girsanov_weight(path, model, NoiseModel.constant(1), PathGrid.constant(x0, 0.0, 1.0, 20))


def test_blow_up_names_the_step():
    class Push(FreeModel):
        def grad_q(self, q, p):
            return np.full(np.shape(q), 1e8)

    with pytest.raises(IntegrationError) as info:
        simulate_deterministic(Push(1, angular=False), LatticeState.zeros(1, angular=False), 1.0,
                               SimConfig(0.1))
    assert info.value.step == 1


def test_noise_model_validation():
    with pytest.raises(ValueError):
        NoiseModel([1.0], [0.0])
    with pytest.raises(ValueError):
        NoiseModel([1.0], [1.0], modulation=1.0)
    with pytest.raises(ValueError):
        NoiseModel([1.0], [1.0], modulation=0.5, lower=0.9)
    with pytest.raises(DimensionError):
        NoiseModel([1.0, 1.0], [1.0])
    with pytest.raises(DimensionError):
        simulate(FreeModel(2), NoiseModel.constant(3), LatticeState.zeros(2), 1.0, SimConfig(0.1))


def test_modulated_noise_stays_inside_its_bounds():
    noise = NoiseModel([1.0, 2.0], [1.5, 1.0], modulation=0.5, frequency=2.0)
    assert noise.lower == pytest.approx(0.5) and noise.upper == pytest.approx(3.0)
    noise.check(np.linspace(0.0, 1.0, 1001))
    assert noise.sigma_q_at(np.array([0.0, 0.125])).shape == (2, 2)


def test_grid_steps_and_sim_config():
    assert grid_steps(1.0, 0.1) == 10
    assert grid_steps(1.0, 0.3) == 4
    with pytest.raises(ValueError):
        SimConfig(0.0)
    with pytest.raises(ValueError):
        SimConfig(0.1, scheme="rk4")


def _orbit_error(dt, scheme):
    model = HarmonicLattice([1.0])
    path = simulate_deterministic(model, LatticeState([0.1], [0.0]), 2 * math.pi,
                                  SimConfig(dt, scheme=scheme))
    t = path.times
    dq = torus_distance(path.q[:, 0], 0.1 * np.cos(t))
    dp = np.abs(path.p[:, 0] + 0.1 * np.sin(t))
    return float(np.max(np.hypot(dq, dp)))


def test_euler_maruyama_orbit_error_is_first_order():
    coarse = _orbit_error(2 * math.pi / 600, "euler_maruyama")
    fine = _orbit_error(2 * math.pi / 1200, "euler_maruyama")
    # the explicit step inflates the radius by (1 + h^2)^(K/2)
    assert coarse == pytest.approx(0.1 * (math.exp(math.pi * 2 * math.pi / 600) - 1), rel=0.05)
    assert 1.9 <= coarse / fine <= 2.1


def test_splitting_orbit_error_is_second_order():
    coarse = _orbit_error(2 * math.pi / 600, "splitting")
    fine = _orbit_error(2 * math.pi / 1200, "splitting")
    assert coarse <= 1e-5
    assert 3.5 <= coarse / fine <= 4.5


def test_constant_tilt_matches_the_cameron_martin_ratio():
    model = FreeModel(2, angular=False)
    sigma_q, sigma_p = np.array([1.0, 2.0]), np.array([0.5, 1.5])
    noise = NoiseModel(sigma_q, sigma_p, epsilon=0.3)
    x0 = LatticeState([0.2, -0.1], [0.0, 0.4], angular=False)
    T, dt = 1.0, 1e-3
    path = simulate(model, noise, x0, T, SimConfig(dt, seed=17))
    vq, vp = np.array([0.5, -1.0]), np.array([2.0, 0.25])
    t = path.times[:, None]
    reference = PathGrid(0.0, T, x0.q + vq * t, x0.p + vp * t, angular=False)

    log_w = math.log(girsanov_weight(path, model, noise, reference))
    var_q, var_p = (0.3 * sigma_q) ** 2, (0.3 * sigma_p) ** 2
    exact = (np.sum(vq * (path.q[-1] - x0.q) / var_q) + np.sum(vp * (path.p[-1] - x0.p) / var_p)
             - 0.5 * T * (np.sum(vq**2 / var_q) + np.sum(vp**2 / var_p)))
    assert log_w == pytest.approx(exact, abs=1e-3)


def test_distinct_seeds_give_uncorrelated_paths():
    model = FreeModel(2, angular=False)
    noise = NoiseModel.constant(2, epsilon=1.0)
    x0 = LatticeState.zeros(2, angular=False)
    cfg = SimConfig(0.1, seed=0)
    n = 10_000
    first = np.concatenate(run_blocks(model, noise, x0, 1.0, cfg, n, _final_momenta, seed=21))
    second = np.concatenate(run_blocks(model, noise, x0, 1.0, cfg, n, _final_momenta, seed=22))
    for site in range(2):
        r = np.corrcoef(first[:, site], second[:, site])[0, 1]
        assert abs(r) <= 3 / math.sqrt(n)


def _final_state(Q, P, dt):
    return np.concatenate([Q[-1], P[-1]], axis=1)


@pytest.mark.slow
def test_free_terminal_marginals_are_symmetric():
    model = FreeModel(3, angular=False)
    noise = NoiseModel.constant(3, epsilon=0.5)
    x0 = LatticeState.zeros(3, angular=False)
    finals = np.concatenate(run_blocks(model, noise, x0, 1.0, SimConfig(0.05, seed=6), 100_000,
                                       _final_state))
    assert finals.shape == (100_000, 6)
    assert np.all(np.abs(skew(finals, axis=0)) <= 0.1)


@pytest.mark.slow
def test_pendulum_girsanov_weight_has_unit_mean():
    model = PendulumLattice.on(WeightSequence.box((4,)), kappa=0.5)
    noise = NoiseModel.constant(4, epsilon=2.0)
    x0 = LatticeState([0.3, -0.2, 0.5, 0.1], [0.2, 0.0, -0.1, 0.4])
    T, K = 0.5, 50
    reference = PathGrid.constant(x0, 0.0, T, K)
    reducer = partial(_log_weights, ref=reference, model=model, noise=noise)
    n = 100_000
    blocks = run_blocks(model, noise, x0, T, SimConfig(T / K, seed=13), n, reducer,
                        block_size=10_000)
    weights = np.exp(np.concatenate(blocks))
    assert abs(np.mean(weights) - 1.0) <= 3.0 * np.std(weights) / np.sqrt(n)
