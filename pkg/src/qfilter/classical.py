"""Commutative special case: a scalar diffusion observed in white noise.

Signal and observation::

    dz + c(t, z) dt = a(t, z) dv,      dy = g(t, z) dt + dw

The unnormalized conditional density obeys a Zakai equation, solved here on a
uniform grid; a bootstrap particle filter and the linear Kalman-Bucy filter
serve as independent cross-checks.
"""
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import solve_banded

from .errors import ConfigError, NumericError
from .stochastic import TimeGrid, integrate_ode, stream_generator


def _as_fn(f):
    if callable(f):
        return f
    val = float(f)
    return lambda t, z: np.full_like(np.asarray(z, dtype=float), val)


@dataclass(frozen=True)
class Diffusion1D:
    """Drift ``c`` (entering as ``-c dt``), diffusion ``a`` and observation ``g``."""

    c: Callable
    a: Callable
    g: Callable

    def __post_init__(self):
        for name in ("c", "a", "g"):
            object.__setattr__(self, name, _as_fn(getattr(self, name)))


def ornstein_uhlenbeck(a_lin=1.0, sigma=1.0, g_lin=1.0):
    """``dz = -a_lin z dt + sigma dv``, ``dy = g_lin z dt + dw``."""
    return Diffusion1D(c=lambda t, z: a_lin * np.asarray(z, dtype=float),
                       a=sigma,
                       g=lambda t, z: g_lin * np.asarray(z, dtype=float))


def _derivative(f, t, z, h=1e-5):
    return (f(t, z + h) - f(t, z - h)) / (2 * h)


def quantum_to_classical_generator(a_coeffs, b_coeffs, g):
    """Classical diffusion generated by commuting structure maps.

    With ``alpha(x) = a x'`` and ``beta(x) = b x'`` the drift is
    ``c = a (g - a'/2) - b``; derivatives of ``a`` by central differences.
    """
    a = _as_fn(a_coeffs)
    b = _as_fn(b_coeffs)
    gf = _as_fn(g)

    def c(t, z):
        z = np.asarray(z, dtype=float)
        return a(t, z) * (gf(t, z) - 0.5 * _derivative(a, t, z)) - b(t, z)

    return Diffusion1D(c=c, a=a, g=gf)


def generator_apply(model, f_values, z, t=0.0):
    """``(c d/dz - (a^2/2) d^2/dz^2) f`` by central differences on a uniform grid.

    One-sided values at the two end points are dropped (returned as ``nan``).
    """
    z = np.asarray(z, dtype=float)
    f = np.asarray(f_values, dtype=float)
    h = z[1] - z[0]
    out = np.full_like(f, np.nan)
    d1 = (f[2:] - f[:-2]) / (2 * h)
    d2 = (f[2:] - 2 * f[1:-1] + f[:-2]) / h ** 2
    zi = z[1:-1]
    out[1:-1] = model.c(t, zi) * d1 - 0.5 * model.a(t, zi) ** 2 * d2
    return out


@dataclass(frozen=True)
class GridDensity:
    """Unnormalized density ``exp(log_scale) * values`` on cell centres ``z``."""

    z: np.ndarray
    values: np.ndarray
    log_scale: float = 0.0
    t: float = 0.0

    @property
    def dz(self):
        return float(self.z[1] - self.z[0])

    @property
    def mass(self):
        return float(np.exp(self.log_scale) * self.values.sum() * self.dz)

    @property
    def log_mass(self):
        return float(self.log_scale + np.log(self.values.sum() * self.dz))

    def normalized(self):
        return self.values / (self.values.sum() * self.dz)

    def mean(self):
        w = self.normalized()
        return float((self.z * w).sum() * self.dz)

    def variance(self):
        w = self.normalized()
        m = (self.z * w).sum() * self.dz
        return float(((self.z - m) ** 2 * w).sum() * self.dz)

    def boundary_mass(self, n_cells=5):
        """Normalized mass in the outer cells, a leak monitor for the reflecting walls."""
        w = self.normalized() * self.dz
        return float(w[:n_cells].sum() + w[-n_cells:].sum())


def gaussian_density(z, mean, var):
    z = np.asarray(z, dtype=float)
    v = np.exp(-0.5 * (z - mean) ** 2 / var) / np.sqrt(2 * np.pi * var)
    return GridDensity(z, v / (v.sum() * (z[1] - z[0])))


def cell_grid(z_min, z_max, n_cells):
    h = (z_max - z_min) / n_cells
    return z_min + h * (np.arange(n_cells) + 0.5)


def _transport_matrix(model, z, t):
    """Banded flux-form operator of ``d mu/dt = d(c mu)/dz + (1/2) d^2(a^2 mu)/dz^2``
    with zero flux through both ends; its columns sum to zero."""
    h = z[1] - z[0]
    u = -model.c(t, z)  # velocity
    D = model.a(t, z) ** 2
    n = z.size
    u_face = 0.5 * (u[:-1] + u[1:])
    # flux J_{i+1/2} = u_f (mu_i + mu_{i+1})/2 - (D_{i+1} mu_{i+1} - D_i mu_i)/(2h)
    cl = 0.5 * u_face + 0.5 * D[:-1] / h   # coefficient of mu_i in J_{i+1/2}
    cr = 0.5 * u_face - 0.5 * D[1:] / h    # coefficient of mu_{i+1}
    # d mu_i/dt = -(J_{i+1/2} - J_{i-1/2})/h
    diag = np.zeros(n)
    upper = np.zeros(n)  # A[i, i+1]
    lower = np.zeros(n)  # A[i+1, i]
    diag[:-1] -= cl / h
    upper[:-1] = -cr / h
    diag[1:] += cr / h
    lower[:-1] = cl / h
    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[:-1]
    return ab


def _banded_matvec(ab, x):
    y = ab[1] * x
    y[:-1] += ab[0, 1:] * x[1:]
    y[1:] += ab[2, :-1] * x[:-1]
    return y


def zakai_pde_step(density, model, dy, dt, stability=10.0, neg_tol=1e-10):
    """Crank-Nicolson transport followed by the exact multiplicative observation factor.

    Parameters
    ----------
    density : GridDensity
    model : Diffusion1D
    dy : float
        Observation increment.
    dt : float
    stability : float
        Upper bound for ``dt max(a^2) / dz^2``.

    Returns
    -------
    GridDensity
        The mass change of the step is folded into ``log_scale``.
    """
    if not dt > 0:
        raise ConfigError("dt must be positive")
    z = density.z
    h = density.dz
    t = density.t
    D = model.a(t + 0.5 * dt, z) ** 2
    ratio = dt * float(np.max(D)) / h ** 2
    if ratio > stability:
        raise ConfigError(f"dt max(a^2)/dz^2 = {ratio:.2f} exceeds the stability bound {stability}")
    A = _transport_matrix(model, z, t + 0.5 * dt)
    rhs = density.values + 0.5 * dt * _banded_matvec(A, density.values)
    lhs = -0.5 * dt * A
    lhs[1] += 1.0
    mu = solve_banded((1, 1), lhs, rhs)
    gz = model.g(t + dt, z)
    mu = mu * np.exp(gz * dy - 0.5 * gz * gz * dt)
    total = mu.sum()
    if not (np.isfinite(total) and total > 0):
        raise NumericError("Zakai density collapsed")
    mu = mu / total
    if mu.min() < -neg_tol:
        raise NumericError(f"Zakai density went negative ({mu.min():.2e})")
    return GridDensity(z, mu, density.log_scale + np.log(total), t + dt)


def run_zakai_pde(density0, model, record, dt, **kw):
    """Means, variances and masses along a record."""
    record = np.asarray(record, dtype=float)
    n = record.size
    means = np.empty(n + 1)
    variances = np.empty(n + 1)
    masses = np.empty(n + 1)
    d = density0
    means[0], variances[0], masses[0] = d.mean(), d.variance(), d.mass
    for k in range(n):
        try:
            d = zakai_pde_step(d, model, record[k], dt, **kw)
        except NumericError as exc:
            raise NumericError(exc.base_message, step=k) from exc
        means[k + 1], variances[k + 1], masses[k + 1] = d.mean(), d.variance(), d.mass
    return means, variances, masses, d


# particle filter -------------------------------------------------------------------

@dataclass(frozen=True)
class ParticleEnsemble:
    """Positions and normalized weights; leading axes index independent filters."""

    positions: np.ndarray
    weights: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.positions, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if x.shape != w.shape or x.shape[-1] < 2:
            raise ConfigError("need at least two particles with matching weights")
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "weights", w)

    @property
    def ess(self):
        return 1.0 / np.sum(self.weights ** 2, axis=-1)

    def mean(self):
        return np.sum(self.weights * self.positions, axis=-1)

    def variance(self):
        m = self.mean()
        return np.sum(self.weights * (self.positions - m[..., None]) ** 2, axis=-1)


def uniform_ensemble(positions):
    x = np.asarray(positions, dtype=float)
    return ParticleEnsemble(x, np.full(x.shape, 1.0 / x.shape[-1]))


def systematic_resample(weights, rng):
    """Indices drawn by systematic resampling (one uniform offset per filter)."""
    w = np.atleast_2d(weights)
    n = w.shape[-1]
    u = (rng.random((w.shape[0], 1)) + np.arange(n)) / n
    cum = np.cumsum(w, axis=-1)
    cum[:, -1] = 1.0
    # offset row j by j so a single sorted search serves every filter
    off = np.arange(w.shape[0])[:, None]
    flat = np.searchsorted((cum + off).ravel(), (u + off).ravel(), side="left")
    idx = np.minimum(flat.reshape(w.shape) - off * n, n - 1)
    return idx.reshape(np.shape(weights))


def particle_filter_step(ensemble, model, dy, dt, resample_threshold=None, rng=None):
    """Euler prediction, likelihood reweighting and systematic resampling.

    Parameters
    ----------
    resample_threshold : float, optional
        Resample filters whose effective sample size falls below this value;
        defaults to half the number of particles.
    rng : numpy Generator
        Source of the prediction noise and resampling offsets.
    """
    if rng is None:
        raise ConfigError("particle_filter_step needs a random generator")
    x = ensemble.positions
    n = x.shape[-1]
    thr = 0.5 * n if resample_threshold is None else resample_threshold
    t = ensemble.t
    x = x - model.c(t, x) * dt + model.a(t, x) * np.sqrt(dt) * rng.standard_normal(x.shape)
    gz = model.g(t + dt, x)
    logw = np.log(ensemble.weights) + gz * np.asarray(dy)[..., None] - 0.5 * gz * gz * dt
    logw -= np.max(logw, axis=-1, keepdims=True)
    w = np.exp(logw)
    tot = w.sum(axis=-1, keepdims=True)
    if np.any(tot <= 0) or not np.all(np.isfinite(tot)):
        raise NumericError("particle weights underflowed")
    w = w / tot
    ess = 1.0 / np.sum(w ** 2, axis=-1)
    low = np.atleast_1d(ess < thr)
    if np.any(low):
        x2 = np.atleast_2d(x).copy()
        w2 = np.atleast_2d(w).copy()
        rows = np.nonzero(low)[0]
        idx = systematic_resample(w2[rows], rng)
        x2[rows] = np.take_along_axis(x2[rows], idx, axis=-1)
        w2[rows] = 1.0 / n
        x = x2.reshape(x.shape)
        w = w2.reshape(w.shape)
    return ParticleEnsemble(x, w, t + dt)


def run_particle_filter(ensemble0, model, record, dt, seed=0, stream_id=0, **kw):
    """Posterior means along a record for one or several independent filters."""
    rng = stream_generator(seed, stream_id)
    record = np.asarray(record, dtype=float)
    e = ensemble0
    means = [e.mean()]
    for k in range(record.size):
        e = particle_filter_step(e, model, record[k], dt, rng=rng, **kw)
        means.append(e.mean())
    return np.array(means), e


# Kalman-Bucy ---------------------------------------------------------------------

def kalman_bucy_variance(a_lin, sigma, g_lin, P0, grid):
    """``dP/dt = -2 a P + sigma^2 - g^2 P^2`` by rk4."""
    rhs = lambda t, P: -2 * a_lin * P + sigma ** 2 - g_lin ** 2 * P * P
    return integrate_ode(rhs, float(P0), grid, "rk4")


def kalman_bucy_stationary(a_lin, sigma, g_lin):
    """Positive root of ``g^2 P^2 + 2 a P - sigma^2 = 0``."""
    if g_lin == 0:
        if a_lin <= 0:
            raise ConfigError("no stationary variance without observation and damping")
        return sigma ** 2 / (2 * a_lin)
    return (-a_lin + np.sqrt(a_lin ** 2 + g_lin ** 2 * sigma ** 2)) / g_lin ** 2


def kalman_bucy_classical(a_lin, sigma, g_lin, P0, grid, record, m0=0.0):
    """Mean and variance of ``dz = -a z dt + sigma dv`` given ``dy = g z dt + dw``.

    ``dm = -a m dt + g P (dy - g m dt)`` with the variance from
    :func:`kalman_bucy_variance`.
    """
    record = np.asarray(record, dtype=float)
    if record.size != grid.n_steps:
        raise ConfigError("record length differs from the grid")
    P = kalman_bucy_variance(a_lin, sigma, g_lin, P0, grid)
    m = np.empty(grid.n_steps + 1)
    m[0] = m0
    dt = grid.dt
    for k in range(grid.n_steps):
        m[k + 1] = m[k] - a_lin * m[k] * dt + g_lin * P[k] * (record[k] - g_lin * m[k] * dt)
    return m, P


def simulate_signal(model, z0, grid, seed, stream_id=0, shared_noise=False):
    """Euler path of the signal and its observation record.

    With ``shared_noise`` the signal noise is ``dv = -dw`` (one noise source);
    otherwise ``v`` and ``w`` are independent streams.
    """
    rng = stream_generator(seed, stream_id)
    dt = grid.dt
    dw = rng.standard_normal(grid.n_steps) * np.sqrt(dt)
    dv = -dw if shared_noise else rng.standard_normal(grid.n_steps) * np.sqrt(dt)
    z = np.empty(grid.n_steps + 1)
    z[0] = z0
    dy = np.empty(grid.n_steps)
    t = grid.times
    for k in range(grid.n_steps):
        zk = np.array([z[k]])
        dy[k] = float(model.g(t[k], zk)[0]) * dt + dw[k]
        z[k + 1] = z[k] - float(model.c(t[k], zk)[0]) * dt + float(model.a(t[k], zk)[0]) * dv[k]
    return z, dy
