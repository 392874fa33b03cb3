import itertools
import math

import numpy as np
import pytest

from errors import ConfigurationError, DimensionError
from hamiltonian_models import build_model
from lattice_core import PathGrid, path_distance
from nls_spectral import (
    ModeState,
    NlsModeHamiltonian,
    NlsModel,
    NlsNormalFormHamiltonian,
    TorusSpec,
    birkhoff_gbar,
    check_nondegeneracy,
    eigen_pair,
    g_coefficient,
    gbar_from_quadrature,
    gbar_matrix,
    has_zero_sign_sum,
    mode_grid,
    mpp_nls,
    nls_rate_function,
    normal_form,
    simulate_snls,
    torus_deviation,
    torus_exceedance_ladder,
)
from om_path import MinimizeConfig, minimize_action, om_action
from sde_engine import NoiseModel, SimConfig


def test_eigen_pair_is_a_dirichlet_eigenfunction():
    x = mode_grid()
    phi, lam = eigen_pair(3, 1.0, x)
    assert lam == 10.0
    h = x[1] - x[0]
    applied = -(phi[2:] - 2 * phi[1:-1] + phi[:-2]) / h**2 + 1.0 * phi[1:-1]
    assert np.max(np.abs(applied - lam * phi[1:-1])) <= 1e-4
    with pytest.raises(ValueError):
        eigen_pair(0, 1.0)


def test_eigenfunctions_are_orthonormal():
    x = mode_grid(2048)
    h = x[1] - x[0]
    basis = np.array([eigen_pair(j, 0.0, x)[0] for j in range(1, 6)])
    gram = h * (basis[:, 1:-1] @ basis[:, 1:-1].T)
    assert np.allclose(gram, np.eye(5), atol=1e-10)


def test_g_coefficient_closed_forms():
    assert g_coefficient(1, 2, 3, 4) == pytest.approx(1 / (2 * math.pi), abs=1e-10)
    assert g_coefficient(1, 1, 1, 1) == pytest.approx(3 / (2 * math.pi), abs=1e-10)
    assert g_coefficient(1, 1, 1, 2) == 0.0
    assert abs(g_coefficient(1, 1, 1, 2, shortcut=False)) <= 1e-12


def test_selection_rule_is_complete_up_to_eight():
    for i, j, k, l in itertools.product(range(1, 9), repeat=4):
        value = abs(g_coefficient(i, j, k, l, shortcut=False))
        if has_zero_sign_sum(i, j, k, l):
            assert value >= 1e-3
        else:
            assert value <= 1e-12


def test_g_coefficient_is_permutation_symmetric():
    for quad in [(1, 2, 3, 4), (2, 2, 3, 3), (1, 3, 5, 7), (4, 1, 1, 4)]:
        reference = g_coefficient(*quad)
        for perm in itertools.permutations(quad):
            assert g_coefficient(*perm) == pytest.approx(reference, abs=1e-12)


def test_birkhoff_average_matches_quadrature():
    assert birkhoff_gbar(1, 1) == pytest.approx(3 / (4 * math.pi))
    assert birkhoff_gbar(1, 2) == pytest.approx(1 / math.pi)
    for i, j in itertools.product(range(1, 6), repeat=2):
        assert gbar_from_quadrature(i, j) == pytest.approx(birkhoff_gbar(i, j), abs=1e-10)
    matrix = gbar_matrix(4)
    assert matrix[0, 1] == pytest.approx(birkhoff_gbar(1, 2))
    assert np.allclose(matrix, matrix.T)


def test_normal_form_for_the_first_two_modes():
    nf = normal_form(NlsModel(m=1.0), [2, 1], cutoff=4)
    assert nf.tangential == (1, 2) and nf.normal_modes == (3, 4)
    assert np.array_equal(nf.alpha, [2.0, 5.0])
    assert np.array_equal(nf.beta, [10.0, 17.0])
    assert np.allclose(nf.A, [[3 / math.pi, 4 / math.pi], [4 / math.pi, 3 / math.pi]])
    assert np.linalg.det(nf.A) == pytest.approx(-7 / math.pi**2)
    assert nf.B.shape == (2, 2)
    with pytest.raises(ConfigurationError):
        normal_form(NlsModel(), [5], cutoff=4)


def test_frequency_map_matches_differences_of_the_energy():
    nls = NlsModel(m=1.0, modes=2)
    model = NlsNormalFormHamiltonian(nls)
    nf = normal_form(nls, [1, 2], cutoff=2)

    def energy(I):
        return float(model.value(np.sqrt(2 * I), np.zeros(2)))

    rng = np.random.default_rng(6)
    h = 1e-5
    for I in rng.uniform(0.1, 1.0, size=(5, 2)):
        numeric = [(energy(I + h * e) - energy(I - h * e)) / (2 * h) for e in np.eye(2)]
        assert np.allclose(numeric, nf.omega(I), atol=1e-8)
        assert energy(I) == pytest.approx(nf.energy(I), rel=1e-12)


def test_nondegeneracy_passes_for_unit_mass():
    nf = normal_form(NlsModel(m=1.0), [1, 2], cutoff=10)
    report = check_nondegeneracy(nf)
    assert report.passed
    assert report.det_A != 0.0
    assert report.as_dict()["passed"] is True


def test_nondegeneracy_flags_a_zero_normal_frequency():
    nf = normal_form(NlsModel(m=-4.0), [1], cutoff=4)
    assert nf.beta[0] == 0.0
    report = check_nondegeneracy(nf)
    assert not report.passed
    assert report.min_l_beta == 0.0
    assert any("beta" in v for v in report.violations)


def test_nondegeneracy_without_normal_modes():
    nf = normal_form(NlsModel(modes=2), [1, 2], cutoff=2)
    assert nf.normal_modes == ()
    report = check_nondegeneracy(nf)
    assert report.min_l_beta == math.inf
    assert report.worst_l == ()
    assert report.worst_divisor[1] == ()
    assert report.min_divisor > 0.0
    assert report.passed


def test_linear_mode_rotates_at_its_eigenvalue():
    nls = NlsModel(m=1.0, modes=1, coupling=0.0)
    u0 = ModeState([0.7], [0.2])
    period = 2 * math.pi / 2.0
    path = mpp_nls(nls, u0, period, SimConfig(period / 400, scheme="splitting"))
    assert np.allclose(path.q[-1], u0.x, atol=1e-10)
    assert np.allclose(path.p[-1], u0.y, atol=1e-10)
    quarter = path.node(100)
    assert quarter.q[0] == pytest.approx(0.2, abs=1e-10)
    assert quarter.p[0] == pytest.approx(-0.7, abs=1e-10)


def test_zero_data_gives_the_zero_path():
    nls = NlsModel(modes=3)
    path = mpp_nls(nls, ModeState.zeros(3), 1.0, SimConfig(0.01, scheme="splitting"))
    assert np.all(path.q == 0.0) and np.all(path.p == 0.0)


def test_normal_form_actions_are_conserved():
    nls = NlsModel(modes=4)
    u0 = TorusSpec((1, 2), (0.5, 0.3)).initial_state(4, phases=[0.1, 0.4])
    u0 = ModeState(u0.x + [0, 0, 0.1, 0.05], u0.y)
    path = mpp_nls(nls, u0, 10.0, SimConfig(1e-2, scheme="splitting"), normal_form_only=True)
    actions = NlsNormalFormHamiltonian.actions(path.q, path.p)
    assert np.max(np.abs(actions - u0.actions())) <= 1e-8


def test_cubic_flow_conserves_the_l2_norm():
    nls = NlsModel(modes=4)
    u0 = ModeState([0.5, 0.3, 0.0, 0.1], [0.0, 0.2, 0.1, 0.0])
    path = mpp_nls(nls, u0, 1.0, SimConfig(1e-3, scheme="splitting"))
    mass = np.sum(path.q**2 + path.p**2, axis=1)
    assert np.max(np.abs(mass - mass[0])) <= 1e-9 * mass[0]
    energy = nls.hamiltonian().value(path.q, path.p)
    assert np.max(np.abs(energy - energy[0])) <= 1e-5


def test_nls_model_registers_and_validates():
    nls = NlsModel(modes=3)
    model = build_model("nls_modes", nls.mode_weights(), modes=3)
    assert isinstance(model, NlsModeHamiltonian)
    assert nls.mode_weights().rho[0] == pytest.approx(math.exp(0.1))
    with pytest.raises(ValueError):
        NlsModel(modes=4, quad_points=8)
    with pytest.raises(ValueError):
        NlsModel(p_w=0.25)


def test_mode_state_views_and_checks():
    state = ModeState.from_complex([1 + 1j, 2j])
    assert np.allclose(state.actions(), [1.0, 2.0])
    assert np.allclose(state.as_complex(), [1 + 1j, 2j])
    assert state.lattice_state().angular is False
    with pytest.raises(DimensionError):
        ModeState([1.0], [1.0, 2.0])
    with pytest.raises(DimensionError):
        simulate_snls(NlsModel(modes=3), NoiseModel.constant(3), ModeState.zeros(2), 1.0,
                      SimConfig(0.1))


def test_rate_is_half_the_action_on_shared_paths():
    nls = NlsModel(modes=3)
    noise = NoiseModel([1.0, 0.5, 2.0], [0.7, 1.0, 1.0])
    rng = np.random.default_rng(2)
    psi = PathGrid(0.0, 1.0, rng.normal(size=(33, 3)), rng.normal(size=(33, 3)), angular=False)
    expected = 0.5 * om_action(psi, nls.hamiltonian(), noise, nls.mode_weights()).total
    assert nls_rate_function(psi, nls, noise) == pytest.approx(expected, rel=1e-10)
    assert nls_rate_function(psi, nls, noise, u0=ModeState([9.0, 0, 0], [0, 0, 0])) == math.inf


def test_rate_of_an_off_frequency_rotation():
    nls = NlsModel(m=1.0, modes=1, coupling=0.0)
    lam, mu, r, T, K = 2.0, 1.5, 1.0, 1.0, 2000
    t = np.linspace(0.0, T, K + 1)[:, None]
    psi = PathGrid(0.0, T, r * np.cos(mu * t), -r * np.sin(mu * t), angular=False)
    rho_sq = nls.mode_weights().rho_sq[0]
    hand = 0.5 * T * rho_sq * r**2 * (lam - mu) ** 2
    rate = nls_rate_function(psi, nls, NoiseModel.constant(1))
    assert rate == pytest.approx(hand, abs=1e-4)
    assert nls_rate_function(psi, nls, NoiseModel.constant(1, value=2.0)) == pytest.approx(rate / 4)


def test_torus_deviation_reports_the_offset():
    nls = NlsModel(modes=4)
    torus = TorusSpec((1, 2), (0.5, 0.5))
    start = torus.initial_state(4, offset=0.1)
    path = PathGrid.constant(start.lattice_state(), 0.0, 1.0, 4)
    dev = torus_deviation(path, torus, nls)
    assert np.allclose(dev.action_dev, 0.1)
    assert np.all(dev.normal_energy == 0.0)
    with pytest.raises(ValueError):
        TorusSpec((1, 2), (0.5, 0.0))


def test_unperturbed_torus_stays_put():
    nls = NlsModel(modes=4)
    torus = TorusSpec((1, 2), (1.0, 1.0))
    path = mpp_nls(nls, torus.initial_state(4), 5.0, SimConfig(1e-2, scheme="splitting"),
                   normal_form_only=True)
    dev = torus_deviation(path, torus, nls)
    assert np.max(dev.action_dev) <= 1e-8
    assert np.max(dev.normal_energy) == 0.0


@pytest.mark.slow
def test_minimizer_agrees_with_the_mode_flow():
    nls = NlsModel(modes=8)
    w = nls.mode_weights()
    u0 = TorusSpec((1, 2), (0.05, 0.05)).initial_state(8)
    T, K = 1.0, 500
    cfg = SimConfig(T / K, scheme="splitting")
    flow = mpp_nls(nls, u0, T, cfg)
    bump = 0.01 * np.sin(np.pi * flow.times / T)[:, None] * np.ones(8)
    guess = flow.with_arrays(flow.q + bump, flow.p - bump)
    path, _, _ = minimize_action(guess, nls.hamiltonian(), NoiseModel.constant(8), w,
                                 MinimizeConfig(grad_tol=1e-10))
    assert path_distance(path, flow, w) <= 1e-3


@pytest.mark.slow
def test_exceedance_probability_falls_with_noise():
    nls = NlsModel(modes=4)
    torus = TorusSpec((1, 2), (1.0, 1.0))
    levels = torus_exceedance_ladder(nls, torus, NoiseModel.constant(4), [0.025, 0.1, 0.05],
                                     threshold=0.1, T=1.0, n=2000, seed=3, dt=1e-2)
    assert [level.eps for level in levels] == [0.1, 0.05, 0.025]
    assert [level.seed for level in levels] == [3, 4, 5]
    probs = [level.estimate.p_hat for level in levels]
    assert probs[0] > probs[1] > probs[2]
    records = [level.as_record() for level in levels if level.estimate.hits > 0]
    assert all(record["eps2_ln_p"] < 0 for record in records)
