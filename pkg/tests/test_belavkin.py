import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qfilter.belavkin import (
    MarkovModel, PosteriorState, belavkin_step, delta_map, gamma_map, hamiltonian_propagator,
    kraus_operator, lindblad_rhs, random_model, run_filter, simulate_record, structure_residuals,
    validate_structure_maps, verify_duality_mc, zakai_increment, zakai_step,
)
from qfilter.errors import ConfigError, DimensionError, NumericError
from qfilter.hilbert import SIGMA_X, SIGMA_Z, ket_to_dm
from qfilter.stochastic import TimeGrid, integrate_ode

PLUS = np.array([1.0, 1.0]) / np.sqrt(2)
ZERO = np.array([1.0, 0.0])


def _qubit(kappa=1.0, omega=1.0):
    return MarkovModel(0.5 * omega * SIGMA_X, np.sqrt(kappa) * SIGMA_Z)


def test_model_validation():
    with pytest.raises(ConfigError):
        MarkovModel(np.array([[0, 1], [0, 0]]), SIGMA_Z)
    with pytest.raises(DimensionError):
        MarkovModel(np.eye(3), SIGMA_Z)
    m = MarkovModel(np.zeros((2, 2)), np.array([[1, 2j], [0, 1]]))
    assert np.allclose(m.G, m.L + m.L.conj().T)
    assert np.allclose(m.L, m.G / 2 + 1j * m.S)
    assert m.l_diag is None and _qubit().l_diag is not None


def test_structure_identities_random_models():
    rng = np.random.default_rng(4)
    for dim in (2, 3, 5):
        assert validate_structure_maps(random_model(dim, rng), n_random=20, seed=dim) < 1e-10


def test_structure_maps_are_heisenberg_generator():
    # tr(gamma(X) rho) = -tr(X Lind(rho))
    rng = np.random.default_rng(0)
    model = random_model(3, rng)
    X = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    A = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    rho = A @ A.conj().T
    rho /= np.trace(rho)
    lhs = np.trace(gamma_map(X, model) @ rho)
    rhs = -np.trace(X @ lindblad_rhs(rho, model))
    assert abs(lhs - rhs) < 1e-12
    assert np.allclose(delta_map(X, model), X @ model.L - model.L @ X)


def test_structure_residuals_vanish_for_identity():
    r1, r2, r3 = structure_residuals(_qubit(), np.eye(2))
    assert max(r1, r2, r3) < 1e-14


def test_lindblad_preserves_trace_and_dephases():
    kappa = 0.7
    model = MarkovModel(np.zeros((2, 2)), np.sqrt(kappa) * SIGMA_Z)
    rho = ket_to_dm(PLUS)
    d = lindblad_rhs(rho, model)
    assert abs(np.trace(d)) < 1e-15
    assert d[0, 1] == pytest.approx(-2 * kappa * rho[0, 1])
    with pytest.raises(DimensionError):
        lindblad_rhs(np.eye(3), model)


def test_zero_coupling_reduces_to_unitary_evolution():
    model = MarkovModel(0.5 * SIGMA_X, np.zeros((2, 2)))
    grid = TimeGrid.from_horizon(1.0, 1e-2)
    rng = np.random.default_rng(1)
    traj = run_filter(model, ket_to_dm(ZERO), rng.normal(size=grid.n_steps), grid.dt,
                      propagator=hamiltonian_propagator(model.H, grid.dt))
    U = hamiltonian_propagator(model.H, 1.0).U
    exact = U @ ket_to_dm(ZERO) @ U.conj().T
    assert np.allclose(traj.final.rho, exact, atol=1e-12)
    assert np.allclose(traj.log_likelihood, 0.0)


def test_zakai_is_linear():
    rng = np.random.default_rng(2)
    model = random_model(3, rng)
    r1 = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    r2 = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    r1, r2 = r1 + r1.conj().T, r2 + r2.conj().T
    a = zakai_increment(2.0 * r1 - 0.5 * r2, model, 0.13, 0.01)
    b = 2.0 * zakai_increment(r1, model, 0.13, 0.01) - 0.5 * zakai_increment(r2, model, 0.13, 0.01)
    assert np.allclose(a, b, atol=1e-13)


def test_zakai_step_tracks_log_trace():
    model = _qubit()
    state = PosteriorState(ket_to_dm(PLUS))
    new = zakai_step(state, model, 0.2, 0.01)
    raw = zakai_increment(ket_to_dm(PLUS), model, 0.2, 0.01)
    assert np.allclose(new.unnormalized(), raw)
    assert abs(np.trace(new.rho) - 1) < 1e-14


def test_pointer_state_is_stationary():
    model = MarkovModel(np.zeros((2, 2)), SIGMA_Z)
    grid = TimeGrid.from_horizon(1.0, 1e-2)
    _, traj = simulate_record(model, ket_to_dm(ZERO), grid, seed=3)
    assert np.allclose(traj.rho, ket_to_dm(ZERO))


def test_record_mean_matches_expected_signal():
    # G = 2 sqrt(kappa) sigma_z is conserved on |0>, so E[y_T] = 2 sqrt(kappa) T
    kappa = 0.25
    model = MarkovModel(np.zeros((2, 2)), np.sqrt(kappa) * SIGMA_Z)
    grid = TimeGrid.from_horizon(1.0, 1e-2)
    rec, _ = simulate_record(model, ket_to_dm(ZERO), grid, seed=5, n_paths=4000, store=False)
    y = rec.sum(axis=1)
    assert abs(y.mean() - 2 * np.sqrt(kappa)) < 4 * y.std(ddof=1) / np.sqrt(y.size)


def test_kraus_scheme_keeps_pure_states_pure():
    model = _qubit()
    grid = TimeGrid.from_horizon(2.0, 1e-3)
    _, traj = simulate_record(model, ket_to_dm(PLUS), grid, seed=0)
    assert np.max(np.abs(traj.purity - 1)) < 1e-6
    assert np.max(np.abs(traj.rho - np.conj(np.swapaxes(traj.rho, -1, -2)))) < 1e-12
    assert np.min(np.linalg.eigvalsh(traj.rho)) > -1e-10
    traj.final.check()


def test_kraus_and_explicit_schemes_agree_to_first_order():
    model = _qubit()
    errs = []
    for dt in (4e-3, 2e-3):
        grid = TimeGrid.from_horizon(0.5, dt)
        rec, a = simulate_record(model, ket_to_dm(PLUS), grid, seed=6)
        b = run_filter(model, ket_to_dm(PLUS), rec, dt, scheme="explicit", monitor=False)
        errs.append(np.max(np.abs(a.rho - b.rho)))
    assert errs[1] < errs[0] < 0.05


def test_normalized_linear_matches_nonlinear():
    model = _qubit()
    grid = TimeGrid.from_horizon(1.0, 1e-3)
    rec, traj = simulate_record(model, ket_to_dm(PLUS), grid, seed=2)
    lin = run_filter(model, ket_to_dm(PLUS), rec, grid.dt, kind="zakai")
    assert np.max(np.abs(lin.rho - traj.rho)) < 20 * grid.dt


def test_kraus_operator_diagonal_branch():
    model = MarkovModel(np.zeros((2, 2)), np.diag([0.5, -1.0 + 0.2j]))
    full = kraus_operator(model, 0.3, 0.01, hamiltonian=True)
    diag = kraus_operator(model, 0.3, 0.01, hamiltonian=False)
    assert np.allclose(np.diag(full), diag)


def test_batched_steps_match_single():
    model = _qubit()
    rec = np.random.default_rng(1).normal(scale=0.1, size=(3, 20))
    batch = run_filter(model, ket_to_dm(PLUS), rec, 0.01)
    for j in range(3):
        single = run_filter(model, ket_to_dm(PLUS), rec[j], 0.01)
        assert np.allclose(batch.rho[j], single.rho, atol=1e-14)
        assert np.allclose(batch.log_likelihood[j], single.log_likelihood)


def test_simulation_is_reproducible():
    grid = TimeGrid.from_horizon(0.5, 1e-2)
    r1, t1 = simulate_record(_qubit(), ket_to_dm(PLUS), grid, seed=11, stream_id=2)
    r2, t2 = simulate_record(_qubit(), ket_to_dm(PLUS), grid, seed=11, stream_id=2)
    assert np.array_equal(r1, r2) and np.array_equal(t1.rho, t2.rho)


def test_duality_trivial_case():
    # g = 0 and X = I: E tr sigma_T = 1
    grid = TimeGrid.from_horizon(0.5, 1e-2)
    res = verify_duality_mc(_qubit(), np.eye(2), 0.0, grid, n_paths=2000, seed=1)
    assert res.ode_value == pytest.approx(1.0, abs=1e-12)
    assert res.within < 3


def test_duality_nontrivial():
    grid = TimeGrid.from_horizon(0.5, 1e-2)
    res = verify_duality_mc(_qubit(), SIGMA_X, lambda t: 0.5 + t, grid, n_paths=4000, seed=2,
                            rho0=ket_to_dm(PLUS))
    assert res.within < 3


def test_log_likelihood_increment():
    model = _qubit()
    state = PosteriorState(ket_to_dm(ZERO))
    new = belavkin_step(state, model, 0.05, 0.01)
    g = 2.0
    assert new.log_likelihood == pytest.approx(g * 0.05 - 0.5 * g * g * 0.01)


def test_error_cases():
    model = _qubit()
    rho = ket_to_dm(PLUS)
    with pytest.raises(ConfigError):
        belavkin_step(PosteriorState(rho), model, 0.0, 0.0)
    with pytest.raises(DimensionError):
        zakai_step(PosteriorState(np.eye(3) / 3), model, 0.0, 0.01)
    with pytest.raises(ConfigError):
        belavkin_step(PosteriorState(rho), model, 0.0, 0.01, scheme="implicit")
    with pytest.raises(ConfigError):
        run_filter(model, rho, np.zeros(3), 0.01, kind="kalman")
    with pytest.raises(ConfigError):
        verify_duality_mc(model, np.eye(2), 0.0, TimeGrid(0, 0.1, 2), n_paths=10)
    with pytest.raises(NumericError):
        PosteriorState.from_unnormalized(np.zeros((2, 2)))


def test_explicit_scheme_reports_failing_step():
    model = _qubit(kappa=1000.0)
    rec = np.full(10, 0.3)
    with pytest.raises(NumericError) as info:
        run_filter(model, ket_to_dm(PLUS), rec, 0.01, scheme="explicit")
    assert info.value.step is not None


def test_posterior_check_detects_violations():
    bad = PosteriorState(np.array([[1.2, 0.0], [0.0, -0.2]]))
    with pytest.raises(NumericError):
        bad.check()
    assert PosteriorState(np.eye(2) / 2).check() == pytest.approx(0.5)


@settings(max_examples=20, deadline=None)
@given(st.floats(-1, 1), st.floats(1e-4, 1e-2), st.integers(0, 1000))
def test_kraus_step_stays_a_state(dy, dt, seed):
    model = random_model(3, np.random.default_rng(seed))
    A = np.random.default_rng(seed + 1).normal(size=(3, 3))
    rho = A @ A.T / np.trace(A @ A.T)
    new = belavkin_step(PosteriorState(rho), model, dy * np.sqrt(dt), dt)
    assert abs(np.trace(new.rho) - 1) < 1e-12
    assert np.min(np.linalg.eigvalsh(new.rho)) > -1e-12


def test_lindblad_ode_trace_conserved():
    rng = np.random.default_rng(3)
    model = random_model(4, rng)
    grid = TimeGrid.from_horizon(1.0, 1e-3)
    rho = integrate_ode(lambda t, r: lindblad_rhs(r, model), np.eye(4, dtype=complex) / 4, grid)
    assert np.max(np.abs(np.einsum("kii->k", rho) - 1)) < 1e-10
