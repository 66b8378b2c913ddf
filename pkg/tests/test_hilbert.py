import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qfilter.errors import ConfigError, DimensionError
from qfilter.hilbert import (
    SIGMA_X, SIGMA_Y, SIGMA_Z, StateVector, as_operator, build_quadrature_rep, ccr_residual,
    commutator, expectation_and_covariance, gaussian_state, operator_from_json, operator_to_json,
    random_hermitian, trace_distance, weyl_expectation, weyl_operator,
)


@pytest.fixture(scope="module")
def rep512():
    return build_quadrature_rep(512, -20.0, 20.0)


@pytest.fixture(scope="module")
def rep128():
    return build_quadrature_rep(128, -20.0, 20.0)


def test_rejects_non_power_of_two():
    with pytest.raises(ConfigError):
        build_quadrature_rep(500, -1, 1)


def test_rejects_degenerate_bounds():
    with pytest.raises(ConfigError):
        build_quadrature_rep(64, 1.0, 1.0)


def test_grid_operators_hermitian(rep128):
    assert np.allclose(rep128.Q, np.diag(rep128.x))
    assert np.linalg.norm(rep128.P - rep128.P.conj().T) < 1e-10


def test_Q_acts_diagonally(rep128):
    e = np.zeros(128)
    e[37] = 1.0
    assert np.allclose(rep128.Q @ e, rep128.x[37] * e)


def test_P_on_plane_wave(rep128):
    # wave number on the grid lattice: 2 pi j / period
    kappa = 2 * np.pi * 5 / 40.0
    v = np.exp(1j * kappa * rep128.x)
    assert np.allclose(rep128.P @ v, 2 * kappa * v, atol=1e-10)
    assert np.allclose(rep128.apply_P(v), 2 * kappa * v, atol=1e-10)


def test_ccr_interior_512(rep512):
    psi = gaussian_state(rep512, 1.5, -2.0, 0.7 + 0.2j).amplitudes
    assert ccr_residual(rep512, psi) < 1e-8
    dense = rep512.P @ (rep512.Q @ psi) - rep512.Q @ (rep512.P @ psi)
    assert np.linalg.norm(dense + 2j * psi) < 1e-8


def test_ccr_improves_with_refinement():
    coarse = build_quadrature_rep(256, -20, 20)
    fine = build_quadrature_rep(1024, -20, 20)
    # a narrow state is under-resolved on the coarse grid
    r_c = ccr_residual(coarse, gaussian_state(coarse, 0.0, 0.0, 12.0).amplitudes)
    r_f = ccr_residual(fine, gaussian_state(fine, 0.0, 0.0, 12.0).amplitudes)
    assert r_f < r_c


def test_commutator_pauli():
    assert np.allclose(commutator(SIGMA_X, SIGMA_Y), 2j * SIGMA_Z)
    a = random_hermitian(4, np.random.default_rng(0))
    assert np.allclose(commutator(a, a), 0)


def test_commutator_dimension_mismatch():
    with pytest.raises(DimensionError):
        commutator(np.eye(2), np.eye(3))


def test_as_operator_checks_claims():
    with pytest.raises(ConfigError):
        as_operator([[0, 1], [0, 0]], hermitian=True)
    with pytest.raises(ConfigError):
        as_operator(2 * np.eye(2), unitary=True)
    assert as_operator(SIGMA_X, hermitian=True, unitary=True).dtype == complex


def test_operator_json_roundtrip():
    a = random_hermitian(3, np.random.default_rng(1)) + 0.5j * np.eye(3)
    assert np.array_equal(operator_from_json(operator_to_json(a)), a)


def test_state_vector_normalization():
    s = StateVector(np.array([3.0, 4.0]))
    assert s.norm == pytest.approx(5.0)
    assert s.normalized().is_normalized()
    with pytest.raises(ConfigError):
        StateVector(np.zeros(3))


def test_gaussian_state_moments(rep512):
    psi = gaussian_state(rep512, 1.0, 2.0, 0.5)
    assert psi.norm == pytest.approx(1.0, abs=1e-12)
    means, cov = expectation_and_covariance(psi, [rep512.P, rep512.Q])
    assert abs(means[0] - 2.0) < 1e-8 and abs(means[1] - 1.0) < 1e-8
    assert np.allclose(cov, np.eye(2), atol=1e-8)


def test_gaussian_state_complex_omega(rep512):
    w = 1 - 1j
    _, cov = expectation_and_covariance(gaussian_state(rep512, 0, 0, w), [rep512.P, rep512.Q])
    assert cov[1, 1] == pytest.approx(1 / (2 * w.real), abs=1e-8)
    assert cov[0, 0] == pytest.approx(2 * abs(w) ** 2 / w.real, abs=1e-8)
    assert cov[0, 1] == pytest.approx(-w.imag / w.real, abs=1e-8)


def test_gaussian_state_errors(rep128):
    with pytest.raises(ConfigError):
        gaussian_state(rep128, 0, 0, -0.5)
    with pytest.raises(ConfigError):
        gaussian_state(rep128, 19.0, 0, 0.5)


def test_identity_expectation(rep128):
    m, c = expectation_and_covariance(gaussian_state(rep128, 0, 0, 0.5), [np.eye(128)])
    assert m[0] == pytest.approx(1.0) and c[0, 0] == pytest.approx(0.0, abs=1e-14)


def test_expectation_rejects_unnormalized(rep128):
    with pytest.raises(ConfigError):
        expectation_and_covariance(np.ones(128), [rep128.Q])


def test_weyl_trivial_and_shift(rep512):
    psi = gaussian_state(rep512, 1.0, 0.0, 0.5)
    assert weyl_expectation(psi, 0.0, 0.0, rep512) == pytest.approx(1.0)
    assert abs(weyl_expectation(psi, 0.0, 1.0, rep512) - np.exp(1j - 0.5)) < 1e-8


def test_weyl_group_law(rep512):
    # [R(xi), R(eta)] = i s(xi, eta) gives X(xi) X(eta) = exp{-i s(xi, eta)/2} X(xi + eta)
    psi = gaussian_state(rep512, 0.5, -0.5, 0.6).amplitudes
    xi, eta = np.array([0.3, -0.4]), np.array([-0.2, 0.5])
    S = np.array([[0.0, -2.0], [2.0, 0.0]])
    lhs = weyl_operator(rep512, *xi) @ (weyl_operator(rep512, *eta) @ psi)
    rhs = np.exp(-0.5j * xi @ S @ eta) * (weyl_operator(rep512, *(xi + eta)) @ psi)
    assert np.linalg.norm(lhs - rhs) < 1e-8


@settings(max_examples=15, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-3, 3), st.floats(-3, 3))
def test_weyl_gaussian_characteristic(xp, xq, q, p):
    rep = build_quadrature_rep(256, -20.0, 20.0)
    psi = gaussian_state(rep, q, p, 0.5)
    val = weyl_expectation(psi, xp, xq, rep)
    expected = np.exp(1j * (p * xp + q * xq) - 0.5 * (xp ** 2 + xq ** 2))
    assert abs(val - expected) < 1e-6
    assert abs(val) <= 1 + 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_commutator_of_hermitians_is_antihermitian(seed):
    rng = np.random.default_rng(seed)
    a, b = random_hermitian(3, rng), random_hermitian(3, rng)
    c = commutator(a, b)
    assert np.allclose(c, -c.conj().T)
    assert np.allclose(commutator(b, a), -c)


def test_trace_distance_batched():
    r0 = np.diag([1.0, 0.0]).astype(complex)
    r1 = np.diag([0.0, 1.0]).astype(complex)
    assert trace_distance(r0, r1) == pytest.approx(1.0)
    assert np.allclose(trace_distance(np.stack([r0, r0]), np.stack([r0, r1])), [0.0, 1.0])
