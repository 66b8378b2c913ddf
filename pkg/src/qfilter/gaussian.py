"""Quantum Kalman-Bucy filter for linear diffusions on a real symplectic space.

Phase-space vectors are real ``2n`` arrays ordered ``(p_1, q_1, ..., p_n, q_n)``;
``R(xi) = sum xi_i R_i`` with ``[R_i, R_j] = i s_ij`` and ``s`` block diagonal
with blocks ``[[0, -2], [2, 0]]``.

A model is given by an offset ``upsilon``, a real symmetric ``omega`` and a
complex coupling ``zeta`` (possibly time dependent). Writing ``a = Re zeta``,
``b = Im zeta``, the derived coefficients are::

    eps      = zeta conj(zeta)^T,      eps# = conj(eps)
    kappa    = (eps - eps#)/2 + i omega
    beta     = -2i a b^T,              nu = b b^T
    kappa~   = kappa - beta,           eps~ = sym Re(eps - nu)
    lambda   = 4 a a^T

The filter state is the mean ``theta``, the covariance ``p`` and the log
density ``ln rho``::

    d theta = (i s kappa^T theta - s upsilon) dt + K dw~,   dw~ = dy - 2 a.theta dt
            = -(alpha^T theta + s upsilon) dt + K dy            (Kalman-Bucy form)
    dp/dt   = p lambda p - alpha^T p - p alpha - s eps~ s
    K       = 2 Re((p + (i/2) s) conj(zeta)) = 2 p a + s b
    alpha   = lambda p + i kappa~ s,  alpha^T = p lambda - i s kappa~^T
    d ln rho = 2 a.theta dy - (2 a.theta)^2 dt / 2

``eps~`` enters only as a quadratic form on real vectors, so its
antisymmetric imaginary part drops out and the assembled drift is real.

On a position grid the model is realized by ``H = -R^T omega R / 2 - R(upsilon)``
and ``L = R(conj(zeta))``; the conditional moments of the resulting
stochastic master equation follow the equations above.
"""
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Callable, Union

import numpy as np
from scipy.linalg import expm

from .belavkin import MarkovModel
from .errors import ConfigError, NumericError
from .hilbert import gaussian_state
from .stochastic import TimeGrid, integrate_ode, sample_wiener_path

ADMISSIBILITY_TOL = 1e-8


def symplectic_matrix(n_modes=1):
    block = np.array([[0.0, -2.0], [2.0, 0.0]])
    return np.kron(np.eye(n_modes), block)


@dataclass(frozen=True)
class SymplecticSpace:
    n_modes: int = 1

    @cached_property
    def s(self):
        return symplectic_matrix(self.n_modes)

    @property
    def metric(self):
        return np.eye(2 * self.n_modes)

    @property
    def dim(self):
        return 2 * self.n_modes

    def heisenberg_gap(self):
        """Smallest ``xi^2 eta^2 - <xi,eta>^2 - s(xi,eta)^2/4`` over canonical pairs."""
        e = np.eye(self.dim)
        s = self.s
        gaps = [e[i] @ e[i] * (e[j] @ e[j]) - (e[i] @ e[j]) ** 2 - 0.25 * (e[i] @ s @ e[j]) ** 2
                for i in range(self.dim) for j in range(self.dim)]
        return float(min(gaps))


Coefficient = Union[Callable, np.ndarray, float]


def _evaluate(c, t):
    return np.asarray(c(t) if callable(c) else c)


@dataclass(frozen=True)
class ModelCoefficients:
    """Coefficients of a :class:`GaussianModel` at one instant."""

    upsilon: np.ndarray
    omega: np.ndarray
    zeta: np.ndarray
    s: np.ndarray

    @cached_property
    def a(self):
        return np.real(self.zeta)

    @cached_property
    def b(self):
        return np.imag(self.zeta)

    @cached_property
    def eps(self):
        return np.outer(self.zeta, np.conj(self.zeta))

    @cached_property
    def eps_sharp(self):
        return np.conj(self.eps)

    @cached_property
    def kappa(self):
        return 0.5 * (self.eps - self.eps_sharp) + 1j * self.omega

    @cached_property
    def beta(self):
        return -2j * np.outer(self.a, self.b)

    @cached_property
    def nu(self):
        return np.outer(self.b, self.b)

    @cached_property
    def kappa_tilde(self):
        return self.kappa - self.beta

    @cached_property
    def eps_tilde(self):
        e = np.real(self.eps - self.nu)
        return 0.5 * (e + e.T)

    @cached_property
    def lam(self):
        return 4.0 * np.outer(self.a, self.a)

    def gain(self, p):
        k = p + 0.5j * self.s
        return 2.0 * np.real(k @ np.conj(self.zeta))


@dataclass(frozen=True)
class GaussianModel:
    """Linear quantum diffusion with coefficients constant or callable in ``t``."""

    upsilon: Coefficient
    omega: Coefficient
    zeta: Coefficient
    space: SymplecticSpace = SymplecticSpace(1)

    def at(self, t=0.0):
        if not any(callable(c) for c in (self.upsilon, self.omega, self.zeta)):
            # constant coefficients are evaluated once
            if "_constant" not in self.__dict__:
                self.__dict__["_constant"] = self._coefficients(0.0)
            return self.__dict__["_constant"]
        return self._coefficients(t)

    def _coefficients(self, t):
        n = self.space.dim
        ups = np.asarray(_evaluate(self.upsilon, t), dtype=float).reshape(n)
        om = np.asarray(_evaluate(self.omega, t), dtype=float).reshape(n, n)
        if np.max(np.abs(om - om.T)) > 1e-12:
            raise ConfigError("omega must be symmetric")
        ze = np.asarray(_evaluate(self.zeta, t), dtype=complex).reshape(n)
        return ModelCoefficients(ups, om, ze, self.space.s)


def free_particle_model(m, lam):
    """Free particle of mass ``m`` under position measurement of strength ``lam``.

    ``upsilon = 0``, ``zeta = (sqrt(lam)/2) (0, 1)`` and
    ``omega = diag(1/(8m), 0)``. This scaling makes the matrix Riccati flow
    coincide with ``d omega/dt + (i/2m) omega^2 = lam/2`` through
    :func:`p_from_omega`.
    """
    if not (m > 0 and lam > 0):
        raise ConfigError("mass and measurement strength must be positive")
    return GaussianModel(
        upsilon=np.zeros(2),
        omega=np.diag([1.0 / (8.0 * m), 0.0]),
        zeta=np.array([0.0, np.sqrt(lam) / 2.0], dtype=complex),
    )


@dataclass(frozen=True)
class GaussianBelief:
    theta: np.ndarray
    p: np.ndarray
    log_density: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=float)
        p = np.asarray(self.p, dtype=float)
        if p.shape != (th.size, th.size):
            raise ConfigError("covariance shape does not match the mean")
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "p", 0.5 * (p + p.T))

    def admissibility(self, s=None):
        """Smallest eigenvalue of ``p + (i/2) s``."""
        s = symplectic_matrix(self.theta.size // 2) if s is None else s
        return float(np.min(np.linalg.eigvalsh(self.p + 0.5j * s)))

    @property
    def density(self):
        return float(np.exp(self.log_density))


def initial_belief(theta=(0.0, 0.0), p=None):
    theta = np.asarray(theta, dtype=float)
    return GaussianBelief(theta, np.eye(theta.size) if p is None else p, 0.0, 0.0)


# Riccati -----------------------------------------------------------------------

def riccati_rhs(p, c, imag_tol=1e-10):
    """``p lambda p - alpha^T p - p alpha - s eps~ s`` assembled in complex form."""
    s = c.s
    lam = c.lam
    kt = c.kappa_tilde
    alpha = lam @ p + 1j * kt @ s
    alpha_t = p @ lam - 1j * s @ kt.T
    d = p @ lam @ p - alpha_t @ p - p @ alpha - s @ c.eps_tilde @ s
    scale = max(1.0, float(np.max(np.abs(d))))
    if np.max(np.abs(d.imag)) > imag_tol * scale:
        raise NumericError(f"Riccati drift has imaginary part {np.max(np.abs(d.imag)):.2e}")
    d = d.real
    return 0.5 * (d + d.T)


def riccati_step(belief, model, dt, check=True):
    """Advance the covariance by one rk4 step; returns the new ``p``."""
    if not dt > 0:
        raise ConfigError("dt must be positive")
    t = belief.t
    p = belief.p
    f = lambda tt, pp: riccati_rhs(pp, model.at(tt))
    k1 = f(t, p)
    k2 = f(t + dt / 2, p + dt / 2 * k1)
    k3 = f(t + dt / 2, p + dt / 2 * k2)
    k4 = f(t + dt, p + dt * k3)
    new = p + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    new = 0.5 * (new + new.T)
    if check:
        lo = np.min(np.linalg.eigvalsh(new + 0.5j * model.space.s))
        if lo < -ADMISSIBILITY_TOL:
            raise NumericError(f"covariance lost admissibility (eigenvalue {lo:.2e})")
    return new


def solve_riccati(model, p0, grid, scheme="rk4"):
    """Covariance trajectory on ``grid`` (shape ``(n_steps + 1, 2n, 2n)``)."""
    rhs = lambda t, p: riccati_rhs(p, model.at(t))
    traj = integrate_ode(rhs, np.asarray(p0, dtype=float), grid, scheme)
    traj = 0.5 * (traj + np.swapaxes(traj, 1, 2))
    s = model.space.s
    lo = np.min(np.linalg.eigvalsh(traj + 0.5j * s))
    if lo < -ADMISSIBILITY_TOL:
        raise NumericError(f"covariance lost admissibility (eigenvalue {lo:.2e})")
    return traj


# mean and density ----------------------------------------------------------------

def _mean_drift(c, theta):
    return np.real(1j * c.s @ c.kappa.T @ theta) - c.s @ c.upsilon


def mean_step(belief, model, dy, dt, form="innovation", drift_scheme="euler"):
    """Advance the mean and log density with the covariance held at ``belief.p``.

    Parameters
    ----------
    form : {'innovation', 'kalman_bucy'}
        Innovation form ``(i s kappa^T theta - s upsilon) dt + K dw~`` or the
        equivalent ``-(alpha^T theta + s upsilon) dt + K dy``.
    drift_scheme : {'euler', 'rk4'}
        ``rk4`` integrates the deterministic part of the innovation form
        with a Runge-Kutta step (useful when ``zeta = 0``).

    Returns
    -------
    GaussianBelief
        Updated mean, log density and time; ``p`` is unchanged.
    """
    if not dt > 0:
        raise ConfigError("dt must be positive")
    t = belief.t
    c = model.at(t)
    th = belief.theta
    K = c.gain(belief.p)
    h = 2.0 * c.a @ th
    if form == "innovation":
        dw = dy - h * dt
        if drift_scheme == "euler":
            drift = _mean_drift(c, th) * dt
        elif drift_scheme == "rk4":
            f = lambda tt, x: _mean_drift(model.at(tt), x)
            k1 = f(t, th)
            k2 = f(t + dt / 2, th + dt / 2 * k1)
            k3 = f(t + dt / 2, th + dt / 2 * k2)
            k4 = f(t + dt, th + dt * k3)
            drift = dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        else:
            raise ConfigError(f"unknown drift scheme {drift_scheme!r}")
        new_th = th + drift + K * dw
    elif form == "kalman_bucy":
        kt = c.kappa_tilde
        alpha_t = belief.p @ c.lam - 1j * c.s @ kt.T
        drift = -np.real(alpha_t @ th) - c.s @ c.upsilon
        new_th = th + drift * dt + K * dy
    else:
        raise ConfigError(f"unknown mean form {form!r}")
    if not np.all(np.isfinite(new_th)):
        raise NumericError("mean update overflowed")
    ld = belief.log_density + h * dy - 0.5 * h * h * dt
    return GaussianBelief(new_th, belief.p, ld, t + dt)


@dataclass
class GaussianTrajectory:
    times: np.ndarray
    record: np.ndarray
    theta: np.ndarray
    p: np.ndarray
    log_density: np.ndarray

    def belief(self, k):
        return GaussianBelief(self.theta[k], self.p[k], self.log_density[k], self.times[k])


def run_gaussian_filter(model, belief0, record, dt, form="innovation", drift_scheme="euler",
                        p_traj=None):
    """Filter a record; ``p_traj`` may carry a precomputed Riccati solution."""
    record = np.asarray(record, dtype=float)
    n = record.size
    grid = TimeGrid(belief0.t, dt, n)
    if p_traj is None:
        p_traj = solve_riccati(model, belief0.p, grid)
    th = np.empty((n + 1, belief0.theta.size))
    ld = np.empty(n + 1)
    b = belief0
    th[0], ld[0] = b.theta, b.log_density
    for k in range(n):
        b = mean_step(replace(b, p=p_traj[k]), model, record[k], dt, form, drift_scheme)
        th[k + 1], ld[k + 1] = b.theta, b.log_density
    return GaussianTrajectory(grid.times, record, th, p_traj, ld)


def simulate_gaussian_record(model, belief0, grid, seed, stream_id=0):
    """Record ``dy = 2 a.theta dt + dw~`` generated along the filter itself."""
    noise = sample_wiener_path(grid, seed, stream_id).increments
    p_traj = solve_riccati(model, belief0.p, grid)
    record = np.empty(grid.n_steps)
    th = np.empty((grid.n_steps + 1, belief0.theta.size))
    ld = np.empty(grid.n_steps + 1)
    b = belief0
    th[0], ld[0] = b.theta, b.log_density
    for k in range(grid.n_steps):
        c = model.at(b.t)
        record[k] = 2.0 * c.a @ b.theta * grid.dt + noise[k]
        b = mean_step(replace(b, p=p_traj[k]), model, record[k], grid.dt)
        th[k + 1], ld[k + 1] = b.theta, b.log_density
    return record, GaussianTrajectory(grid.times, record, th, p_traj, ld)


# free particle ----------------------------------------------------------------------

def p_from_omega(omega):
    """Covariance of the pure Gaussian with complex width ``omega`` (filter orientation)."""
    w = complex(omega)
    return np.array([[2 * abs(w) ** 2, w.imag], [w.imag, 0.5]]) / w.real


def omega_from_p(p):
    """Inverse of :func:`p_from_omega` for single-mode pure-state covariances."""
    re = 1.0 / (2.0 * p[1, 1])
    return complex(re, p[0, 1] * re)


def omega_limit(m, lam):
    """Stationary width ``sqrt(lam m / 2) (1 - i)``."""
    return np.sqrt(lam * m / 2.0) * (1 - 1j)


def scalar_riccati_free_particle(m, lam, t_grid, omega0=0.5):
    """Solve ``d omega/dt = lam/2 - (i/2m) omega^2`` with rk4."""
    if not (m > 0 and lam > 0):
        raise ConfigError("mass and measurement strength must be positive")
    rhs = lambda t, w: lam / 2.0 - 0.5j / m * w * w
    traj = integrate_ode(rhs, np.complex128(omega0), t_grid, "rk4")
    bad = np.nonzero(traj.real <= 0)[0]
    if bad.size:
        raise NumericError("Re omega became non-positive", step=int(bad[0]))
    return traj


def stationary_invariants(p):
    """``(Var P * Var Q, p_pq)`` of a single-mode covariance; ``p_pq`` is in units of one
    quarter of the commutator scale, so the free-particle limit gives ``(2, -1)``."""
    return float(p[0, 0] * p[1, 1]), float(p[0, 1])


def posterior_wavefunction(omega, q_hat, p_hat, rep):
    """Grid wave function whose moments are the filter's ``(q_hat, p_hat, p(omega))``.

    The grid state is ``exp{-conj(omega)(x - q_hat)^2/2 + i p_hat x/2}``: the
    filter's width parameter and the wave-function width are complex
    conjugates in this orientation.
    """
    omega = complex(omega)
    if not omega.real > 0:
        raise ConfigError("Re omega must be positive")
    return gaussian_state(rep, q_hat, p_hat, np.conj(omega))


# backward flow ----------------------------------------------------------------------

def backward_flow(model, r, t, g, eta_terminal, n_steps=1000):
    """Solve ``-d eta/dr + i kappa_r s eta_r = g(r)(zeta_r + conj(zeta_r))`` backwards.

    Parameters
    ----------
    r, t : float
        ``r <= t``; the solution is fixed at ``eta_t = eta_terminal``.
    g : callable or float
    n_steps : int
        rk4 steps between ``t`` and ``r``.

    Returns
    -------
    times : ndarray
        Decreasing from ``t`` to ``r``.
    eta : ndarray, complex, shape ``(n_steps + 1, 2n)``
    """
    if r > t:
        raise ConfigError("backward flow needs r <= t")
    gf = g if callable(g) else (lambda x, c=float(g): c)
    if t == r:
        return np.array([t]), np.asarray(eta_terminal, dtype=complex)[None, :]
    h = (t - r) / n_steps
    grid = TimeGrid(0.0, h, n_steps)

    def rhs(tau, eta):
        rr = t - tau
        c = model.at(rr)
        return -(1j * c.kappa @ c.s @ eta - gf(rr) * 2.0 * np.real(c.zeta))

    eta = integrate_ode(rhs, np.asarray(eta_terminal, dtype=complex), grid, "rk4")
    return t - grid.times, eta


def flow_matrix(model, r, t, n_steps=1000):
    """Homogeneous backward propagator ``phi_r(t)`` with ``eta_r = phi_r(t) eta_t``."""
    n = model.space.dim
    cols = [backward_flow(model, r, t, 0.0, e, n_steps)[1][-1] for e in np.eye(n)]
    return np.array(cols).T


def flow_matrix_constant(model, r, t):
    """``expm(-(t - r) i kappa s)`` for constant coefficients."""
    c = model.at(r)
    return expm(-(t - r) * 1j * c.kappa @ c.s)


# characteristic function and its stochastic equation ---------------------------------

def characteristic_function(belief, xi):
    """``rho exp{i theta.xi - xi^T p xi / 2}`` for one or many ``xi`` (last axis)."""
    xi = np.asarray(xi, dtype=float)
    quad = np.einsum("...i,ij,...j->...", xi, belief.p, xi)
    return np.exp(belief.log_density + 1j * xi @ belief.theta - 0.5 * quad)


def _directional(fun, xi, v, h):
    v = np.asarray(v)
    if not np.any(v):
        return 0.0
    return (fun(xi + h * v) - fun(xi - h * v)) / (2 * h)


def spde_coefficients(c, theta_fn, xi, h=1e-5):
    """Drift and noise of ``d theta(xi)`` for the characteristic function.

    The equation follows from the linear filter for ``tr(sigma e^{i R(xi)})``
    with the grid realization of the model; it is first order in
    ``xi``-derivatives, which are taken by central differences of ``theta_fn``.
    """
    s = c.s
    S = lambda u, v: u @ s @ v
    cz = np.conj(c.zeta)  # coupling L = R(conj(zeta))
    u = s @ xi
    th = theta_fn(xi)
    d = lambda v: (_directional(theta_fn, xi, np.real(v), h)
                   + 1j * _directional(theta_fn, xi, np.imag(v), h))
    S_c = S(cz, xi)
    S_cb = S(np.conj(cz), xi)
    drift = (d(c.omega @ u) + 1j * (c.upsilon @ s @ xi) * th
             - 0.5j * (S_c * d(np.conj(cz)) - S_cb * d(cz))
             - 0.5 * S_c * S_cb * th)
    noise = -2j * d(np.real(cz)) + 1j * S(np.imag(cz), xi) * th
    return drift, noise


def spde_residual_check(model, trajectory, xi_samples, h=1e-5):
    """Largest per-step residual of the closed-form characteristic function in
    its stochastic equation, relative to the density.

    ``residual_k = |theta_{k+1} - theta_k - (F_k + F_{k+1}) dt/2 - G_k dy_k| / rho_k``
    maximized over steps and ``xi_samples`` (rows).
    """
    xi_samples = np.atleast_2d(np.asarray(xi_samples, dtype=float))
    dt = trajectory.times[1] - trajectory.times[0]
    n = trajectory.record.size
    worst = 0.0
    prev = None
    for k in range(n):
        if prev is None:
            bk = trajectory.belief(k)
            ck = model.at(bk.t)
            fk = [spde_coefficients(ck, lambda x: characteristic_function(bk, x), xi, h)
                  for xi in xi_samples]
        else:
            bk, fk = prev
        b1 = trajectory.belief(k + 1)
        c1 = model.at(b1.t)
        f1 = [spde_coefficients(c1, lambda x: characteristic_function(b1, x), xi, h)
              for xi in xi_samples]
        dy = trajectory.record[k]
        for j, xi in enumerate(xi_samples):
            diff = (characteristic_function(b1, xi) - characteristic_function(bk, xi)
                    - 0.5 * (fk[j][0] + f1[j][0]) * dt - fk[j][1] * dy)
            worst = max(worst, abs(diff) / bk.density)
        prev = (b1, f1)
    return float(worst)


# grid realization ----------------------------------------------------------------------

def grid_operators(rep):
    """``(P, Q)`` of a single-mode grid, ordered like phase-space vectors."""
    return [rep.P, rep.Q]


def grid_model(model, rep, t=0.0):
    """Markov model ``(H, L)`` on the grid realizing a single-mode Gaussian model."""
    if model.space.n_modes != 1:
        raise ConfigError("grid realization is single-mode")
    c = model.at(t)
    R = grid_operators(rep)
    H = np.zeros((rep.n_points,) * 2, dtype=complex)
    for i in range(2):
        for j in range(2):
            H -= 0.25 * c.omega[i, j] * (R[i] @ R[j] + R[j] @ R[i])
        H -= c.upsilon[i] * R[i]
    H = 0.5 * (H + H.conj().T)
    L = sum(np.conj(c.zeta[i]) * R[i] for i in range(2))
    if abs(c.zeta[0]) == 0:
        L = np.diag(np.conj(c.zeta[1]) * rep.x).astype(complex)
    return MarkovModel(H, L)


class SplitGridPropagator:
    """``rho -> U rho U^dag`` for ``H = K(P) + V(Q)`` by Strang splitting.

    Exact when either part vanishes (free particle).
    """

    def __init__(self, rep, kinetic, potential, dt):
        self.rep = rep
        self.half_v = np.exp(-0.5j * dt * potential(rep.x))
        self.full_k = np.exp(-1j * dt * kinetic(rep.p_values))

    def apply_left(self, rho):
        rho = self.half_v[:, None] * rho
        rho = np.fft.ifft(self.full_k[:, None] * np.fft.fft(rho, axis=0), axis=0)
        return self.half_v[:, None] * rho

    def __call__(self, rho):
        left = self.apply_left(rho)
        return self.apply_left(left.conj().T).conj().T


def grid_propagator(model, rep, dt, t=0.0):
    """One-step unitary part of :func:`grid_model`; FFT split when ``omega_pq = 0``."""
    c = model.at(t)
    if c.omega[0, 1] == 0:
        kin = lambda pv: -0.5 * c.omega[0, 0] * pv ** 2 - c.upsilon[0] * pv
        pot = lambda x: -0.5 * c.omega[1, 1] * x ** 2 - c.upsilon[1] * x
        return SplitGridPropagator(rep, kin, pot, dt)
    from .belavkin import hamiltonian_propagator
    return hamiltonian_propagator(grid_model(model, rep, t).H, dt)
