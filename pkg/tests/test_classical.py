import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from qfilter.classical import (
    Diffusion1D, ParticleEnsemble, cell_grid, gaussian_density, generator_apply,
    kalman_bucy_classical, kalman_bucy_stationary, kalman_bucy_variance, ornstein_uhlenbeck,
    particle_filter_step, quantum_to_classical_generator, run_particle_filter, run_zakai_pde,
    simulate_signal, systematic_resample, uniform_ensemble, zakai_pde_step,
)
from qfilter.errors import ConfigError
from qfilter.stochastic import TimeGrid, sample_wiener_ensemble


def test_generator_on_polynomials():
    model = ornstein_uhlenbeck(0.7, 1.3, 1.0)
    z = np.linspace(-3, 3, 61)
    lin = generator_apply(model, z, z)
    sq = generator_apply(model, z ** 2, z)
    assert np.isnan(lin[0]) and np.isnan(sq[-1])
    assert np.allclose(lin[1:-1], 0.7 * z[1:-1])
    assert np.allclose(sq[1:-1], 2 * 0.7 * z[1:-1] ** 2 - 1.3 ** 2)


def test_quantum_generator_drift():
    # a constant: c = a g - b
    m = quantum_to_classical_generator(2.0, 0.5, lambda t, z: z)
    z = np.linspace(-1, 1, 5)
    assert np.allclose(m.c(0.0, z), 2.0 * z - 0.5)
    # a(z) = z: c = z (g - 1/2) - b
    m = quantum_to_classical_generator(lambda t, z: z, 0.0, 3.0)
    assert np.allclose(m.c(0.0, z), z * 2.5, atol=1e-8)
    assert np.allclose(m.a(0.0, z), z)


def test_constant_coefficients_are_wrapped():
    m = Diffusion1D(1.0, 2.0, 0.0)
    assert np.array_equal(m.a(0.0, np.zeros(3)), [2.0, 2.0, 2.0])


def test_density_moments():
    z = cell_grid(-10, 10, 800)
    d = gaussian_density(z, 1.5, 0.4)
    assert d.mass == pytest.approx(1.0)
    assert d.mean() == pytest.approx(1.5, abs=1e-10)
    assert d.variance() == pytest.approx(0.4, rel=1e-4)
    assert d.boundary_mass() < 1e-12


def test_mass_conserved_without_observation():
    model = Diffusion1D(lambda t, z: np.sin(z), lambda t, z: 1 + 0.3 * np.cos(z), 0.0)
    d = gaussian_density(cell_grid(-6, 6, 200), 0.0, 1.0)
    _, _, masses, final = run_zakai_pde(d, model, np.zeros(200), 0.01)
    assert np.max(np.abs(masses - 1)) < 1e-12
    assert final.values.min() >= 0


def test_mass_is_a_martingale_under_reference_measure():
    model = ornstein_uhlenbeck(1.0, 1.0, 1.0)
    d0 = gaussian_density(cell_grid(-6, 6, 96), 0.5, 0.5)
    grid = TimeGrid.from_horizon(0.5, 0.02)
    ens = sample_wiener_ensemble(grid, 8, 300)
    masses = np.array([run_zakai_pde(d0, model, ens.increments[j], grid.dt)[2][-1]
                       for j in range(300)])
    assert abs(masses.mean() - 1) < 3 * masses.std(ddof=1) / np.sqrt(masses.size)


def test_zakai_matches_kalman_bucy():
    a, sig, g = 1.0, 1.0, 1.0
    model = ornstein_uhlenbeck(a, sig, g)
    grid = TimeGrid.from_horizon(2.0, 1e-3)
    _, dy = simulate_signal(model, 0.3, grid, seed=1)
    d0 = gaussian_density(cell_grid(-8, 8, 800), 0.0, 1.0)
    means, var, _, _ = run_zakai_pde(d0, model, dy, grid.dt)
    m, P = kalman_bucy_classical(a, sig, g, 1.0, grid, dy)
    assert np.max(np.abs(var / P - 1)) < 0.01
    assert np.max(np.abs(means - m)) < 0.01


def test_zakai_stability_bound():
    d = gaussian_density(cell_grid(-1, 1, 400), 0.0, 0.1)
    with pytest.raises(ConfigError):
        zakai_pde_step(d, ornstein_uhlenbeck(), 0.0, 0.1)
    with pytest.raises(ConfigError):
        zakai_pde_step(d, ornstein_uhlenbeck(), 0.0, 0.0)


def test_particle_filter_without_observation_keeps_weights():
    model = ornstein_uhlenbeck(1.0, 1.0, 0.0)
    e = uniform_ensemble(np.random.default_rng(0).normal(size=500))
    new = particle_filter_step(e, model, 0.7, 0.01, rng=np.random.default_rng(1))
    assert np.allclose(new.weights, 1 / 500)
    assert new.t == pytest.approx(0.01)
    with pytest.raises(ConfigError):
        particle_filter_step(e, model, 0.0, 0.01)


def test_particle_filter_tracks_kalman_bucy():
    a, sig, g = 1.0, 1.0, 1.0
    model = ornstein_uhlenbeck(a, sig, g)
    grid = TimeGrid.from_horizon(1.0, 1e-2)
    _, dy = simulate_signal(model, 0.0, grid, seed=2)
    x0 = np.random.default_rng(3).normal(size=(4, 5000))
    means, _ = run_particle_filter(uniform_ensemble(x0), model, dy, grid.dt, seed=5)
    m, _ = kalman_bucy_classical(a, sig, g, 1.0, grid, dy)
    assert means.shape == (grid.n_steps + 1, 4)
    assert np.max(np.abs(means.mean(axis=1) - m)) < 0.05


def test_systematic_resampling_counts():
    w = np.array([0.05, 0.4, 0.15, 0.3, 0.1])
    n = w.size
    rng = np.random.default_rng(0)
    counts = np.array([np.bincount(systematic_resample(w, rng), minlength=n) for _ in range(500)])
    assert np.all(counts >= np.floor(n * w)) and np.all(counts <= np.ceil(n * w))
    for i in range(n):
        if counts[:, i].std() > 0:
            assert stats.ttest_1samp(counts[:, i], n * w[i]).pvalue > 0.01
        else:
            assert counts[0, i] == n * w[i]


def test_batched_resampling_rows_independent():
    w = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    idx = systematic_resample(w, np.random.default_rng(0))
    assert np.array_equal(idx, [[0, 0, 0], [2, 2, 2]])


def test_ensemble_validation_and_moments():
    with pytest.raises(ConfigError):
        ParticleEnsemble(np.zeros(1), np.ones(1))
    e = ParticleEnsemble(np.array([0.0, 2.0]), np.array([0.25, 0.75]))
    assert e.mean() == pytest.approx(1.5)
    assert e.variance() == pytest.approx(0.75)
    assert e.ess == pytest.approx(1 / 0.625)


def test_kalman_bucy_pure_diffusion_grows_linearly():
    grid = TimeGrid.from_horizon(2.0, 0.1)
    P = kalman_bucy_variance(0.0, 1.5, 0.0, 0.3, grid)
    assert np.allclose(P, 0.3 + 1.5 ** 2 * grid.times)


def test_kalman_bucy_stationary_limit():
    grid = TimeGrid.from_horizon(20.0, 1e-2)
    P = kalman_bucy_variance(0.5, 1.2, 0.8, 3.0, grid)
    assert P[-1] == pytest.approx(kalman_bucy_stationary(0.5, 1.2, 0.8), rel=1e-10)
    assert kalman_bucy_stationary(2.0, 1.0, 0.0) == pytest.approx(0.25)
    with pytest.raises(ConfigError):
        kalman_bucy_stationary(0.0, 1.0, 0.0)


def test_kalman_bucy_record_length_checked():
    with pytest.raises(ConfigError):
        kalman_bucy_classical(1.0, 1.0, 1.0, 1.0, TimeGrid(0.0, 0.1, 5), np.zeros(4))


def test_signal_simulation():
    model = ornstein_uhlenbeck(0.0, 1.0, 1.0)
    grid = TimeGrid.from_horizon(1.0, 1e-2)
    z1, dy1 = simulate_signal(model, 0.0, grid, seed=4)
    z2, dy2 = simulate_signal(model, 0.0, grid, seed=4)
    assert np.array_equal(z1, z2) and np.array_equal(dy1, dy2)
    z, dy = simulate_signal(model, 0.0, grid, seed=4, shared_noise=True)
    # with dv = -dw the observation noise cancels the signal increments
    assert np.allclose(dy - z[:-1] * grid.dt, -np.diff(z))


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 3.0), st.floats(0.1, 3.0), st.floats(0.1, 3.0))
def test_stationary_variance_solves_riccati(a, sig, g):
    P = kalman_bucy_stationary(a, sig, g)
    assert P > 0
    assert abs(-2 * a * P + sig ** 2 - g ** 2 * P ** 2) < 1e-10
