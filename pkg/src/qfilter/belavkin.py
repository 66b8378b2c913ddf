"""Linear (unnormalized) and nonlinear (normalized) quantum filtering equations
in the Schrodinger picture, structure-map identities, record simulation and
the Monte Carlo duality check.

Model: Hamiltonian ``H`` and coupling ``L`` with ``G = L + L^dag``. The
observation is ``dy = tr(G rho) dt + dw~`` (unit efficiency, one channel).

* ``lindblad_rhs``: ``-i[H,rho] + L rho L^dag - {L^dag L, rho}/2``
* ``zakai_step``: ``d sigma = Lind(sigma) dt + (L sigma + sigma L^dag) dy``
* ``belavkin_step``: ``d rho = Lind(rho) dt + (L rho + rho L^dag - <G> rho)(dy - <G> dt)``

The linear step adds the single-noise Milstein term ``(1/2) b'(b) (dy^2 - dt)``,
which needs no iterated-area sampling and keeps ``E tr sigma`` an exact
martingale. The normalized step defaults to the positivity-preserving form
``K rho K^dag / tr(K rho K^dag)`` with the Milstein propagator ``K`` of the
linear stochastic wave equation; both are strong order one, so normalized
linear and nonlinear trajectories agree to ``O(dt)``.

All kernels accept a leading batch axis: ``rho`` of shape ``(..., d, d)``
with ``dy`` broadcastable to ``rho.shape[:-2]``.
"""
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from .errors import ConfigError, DimensionError, NumericError
from .hilbert import as_operator, commutator, dag, random_hermitian, random_matrix
from .stochastic import TimeGrid, integrate_ode, sample_wiener_ensemble, sample_wiener_path


@dataclass(frozen=True)
class MarkovModel:
    """Hamiltonian ``H`` and coupling ``L`` of a single-channel diffusion.

    ``L = G/2 + iS`` with hermitian ``G = L + L^dag`` and ``S = (L - L^dag)/(2i)``.
    """

    H: np.ndarray
    L: np.ndarray

    def __post_init__(self):
        H = as_operator(self.H, hermitian=True)
        L = as_operator(self.L)
        if H.shape != L.shape:
            raise DimensionError(f"H {H.shape} and L {L.shape} differ in dimension")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "L", L)

    @property
    def dim(self):
        return self.H.shape[0]

    @cached_property
    def Ld(self):
        return dag(self.L)

    @cached_property
    def LdL(self):
        return self.Ld @ self.L

    @cached_property
    def G(self):
        return self.L + self.Ld

    @cached_property
    def S(self):
        return (self.L - self.Ld) / 2j

    @cached_property
    def l_diag(self):
        """Diagonal of ``L`` when ``L`` is diagonal, else ``None``."""
        d = np.diag(self.L)
        if np.array_equal(self.L, np.diag(d)):
            return d.copy()
        return None

    # products with L exploiting a diagonal coupling (grid models)
    def left_L(self, rho):
        if self.l_diag is not None:
            return self.l_diag[:, None] * rho
        return self.L @ rho

    def right_Ld(self, rho):
        if self.l_diag is not None:
            return rho * np.conj(self.l_diag)[None, :]
        return rho @ self.Ld

    def measurement_map(self, rho):
        """``L rho + rho L^dag``."""
        return self.left_L(rho) + self.right_Ld(rho)

    def expect_G(self, rho):
        """``tr(G rho)`` (real part), batched."""
        if self.l_diag is not None:
            g = 2.0 * np.real(self.l_diag)
            return np.real(np.einsum("...ii->...i", rho)) @ g
        return np.real(np.einsum("ij,...ji->...", self.G, rho))

    def dissipator(self, rho):
        if self.l_diag is not None:
            l = self.l_diag
            ll = np.abs(l) ** 2
            return (l[:, None] * rho * np.conj(l)[None, :]
                    - 0.5 * (ll[:, None] * rho + rho * ll[None, :]))
        return self.L @ rho @ self.Ld - 0.5 * (self.LdL @ rho + rho @ self.LdL)


def _trace(rho):
    return np.einsum("...ii->...", rho)


def _herm(rho):
    return 0.5 * (rho + dag(rho))


@dataclass(frozen=True)
class PosteriorState:
    """Conditional state ``exp(log_likelihood) * rho`` with ``tr rho = 1``.

    For the linear filter the unnormalized state is recovered by
    :meth:`unnormalized`; for the normalized filter ``log_likelihood`` is
    the accumulated log density of the record relative to Wiener measure.
    ``rho`` may carry leading batch axes.
    """

    rho: np.ndarray
    log_likelihood: np.ndarray = 0.0
    t: float = 0.0

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=complex)
        if rho.ndim < 2 or rho.shape[-1] != rho.shape[-2]:
            raise DimensionError(f"rho must be square, got {rho.shape}")
        ll = np.broadcast_to(np.asarray(self.log_likelihood, dtype=float), rho.shape[:-2])
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "log_likelihood", ll.copy() if ll.ndim else float(ll))

    @classmethod
    def from_unnormalized(cls, sigma, t=0.0):
        sigma = np.asarray(sigma, dtype=complex)
        tr = np.real(_trace(sigma))
        if np.any(tr <= 0):
            raise NumericError("unnormalized state has non-positive trace")
        return cls(sigma / np.asarray(tr)[..., None, None], np.log(tr), t)

    def unnormalized(self):
        return np.exp(np.asarray(self.log_likelihood))[..., None, None] * self.rho

    @property
    def trace_sigma(self):
        return np.exp(self.log_likelihood)

    def check(self, herm_tol=1e-10, trace_tol=1e-10, eig_tol=1e-8):
        """Raise if the stored invariants are violated; return min eigenvalue."""
        if np.max(np.abs(self.rho - dag(self.rho))) > herm_tol:
            raise NumericError("posterior lost hermiticity")
        if np.max(np.abs(_trace(self.rho) - 1.0)) > trace_tol:
            raise NumericError("posterior trace is not one")
        lo = float(np.min(np.linalg.eigvalsh(self.rho)))
        if lo < -eig_tol:
            raise NumericError(f"posterior eigenvalue {lo:.3e} below tolerance")
        return lo


class UnitaryPropagator:
    """Conjugation ``rho -> U rho U^dag`` with a fixed one-step unitary."""

    def __init__(self, U):
        self.U = as_operator(U)
        self.Ud = dag(self.U)

    def __call__(self, rho):
        return self.U @ rho @ self.Ud


def hamiltonian_propagator(H, dt):
    """Exact one-step propagator ``exp(-i H dt)``."""
    from scipy.linalg import expm
    return UnitaryPropagator(expm(-1j * np.asarray(H) * dt))


def lindblad_rhs(rho, model, hamiltonian=True):
    """``-i[H,rho] + L rho L^dag - (L^dag L rho + rho L^dag L)/2``."""
    rho = np.asarray(rho)
    if rho.shape[-2:] != (model.dim, model.dim):
        raise DimensionError(f"rho {rho.shape} vs model dimension {model.dim}")
    out = model.dissipator(rho)
    if hamiltonian:
        out = out - 1j * (model.H @ rho - rho @ model.H)
    return out


def _prepare(rho, model, dt, propagator, hamiltonian):
    if not dt > 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    if rho.shape[-2:] != (model.dim, model.dim):
        raise DimensionError(f"rho {rho.shape} vs model dimension {model.dim}")
    if hamiltonian is None:
        hamiltonian = propagator is None
    if propagator is not None:
        rho = propagator(rho)
    return rho, hamiltonian


def zakai_increment(rho, model, dy, dt, propagator=None, milstein=True, hamiltonian=None):
    """Unnormalized one-step update of ``rho`` (any trace), batched."""
    rho, with_h = _prepare(np.asarray(rho), model, dt, propagator, hamiltonian)
    dy = np.asarray(dy, dtype=float)[..., None, None]
    m1 = model.measurement_map(rho)
    new = rho + lindblad_rhs(rho, model, hamiltonian=with_h) * dt + m1 * dy
    if milstein:
        new = new + 0.5 * model.measurement_map(m1) * (dy * dy - dt)
    return _herm(new)


def zakai_step(state, model, dy, dt, propagator=None, milstein=True, hamiltonian=None):
    """One step of the linear filtering equation under the reference measure.

    Parameters
    ----------
    state : PosteriorState
    model : MarkovModel
    dy : float or ndarray
        Record increment(s), one per batch element.
    dt : float
    propagator : callable, optional
        Exact unitary part applied first (split step); the Hamiltonian is
        then omitted from the drift.
    milstein : bool
        Include the single-noise Milstein correction.
    hamiltonian : bool, optional
        Include ``-i[H, rho]`` in the drift; defaults to ``propagator is None``.

    Returns
    -------
    PosteriorState
        Trace-one ``rho`` with ``log_likelihood`` increased by ``ln tr`` of
        the updated unnormalized state.
    """
    new = zakai_increment(state.rho, model, dy, dt, propagator, milstein, hamiltonian)
    tr = np.real(_trace(new))
    if np.any(tr < 1e-300) or not np.all(np.isfinite(tr)):
        raise NumericError("trace of the unnormalized state collapsed (zero-likelihood record)")
    trb = np.asarray(tr)[..., None, None]
    return PosteriorState(new / trb, np.asarray(state.log_likelihood) + np.log(tr), state.t + dt)


def kraus_operator(model, dy, dt, hamiltonian=True, milstein=True):
    """Milstein propagator of the linear stochastic wave equation.

    ``K = I + (-iH - L^dag L / 2) dt + L dy + L^2 (dy^2 - dt) / 2``; the last
    term is dropped for ``milstein=False``. For a diagonal ``L`` without
    Hamiltonian only the diagonal is returned.
    """
    dy = np.asarray(dy, dtype=float)
    c2 = 0.5 if milstein else 0.0
    if not hamiltonian and model.l_diag is not None:
        l = model.l_diag
        dyb = dy[..., None]
        return 1.0 - 0.5 * np.abs(l) ** 2 * dt + l * dyb + c2 * l * l * (dyb * dyb - dt)
    A = -0.5 * model.LdL
    if hamiltonian:
        A = A - 1j * model.H
    dyb = dy[..., None, None]
    return (np.eye(model.dim) + A * dt + model.L * dyb
            + c2 * (model.L @ model.L) * (dyb * dyb - dt))


def belavkin_increment(rho, model, dy, dt, propagator=None, milstein=True, hamiltonian=None,
                       scheme="kraus"):
    """Normalized one-step update; returns ``(rho_new, <G>)``.

    ``scheme='kraus'`` applies ``K rho K^dag`` and renormalizes; expanding the
    ratio to first order gives the innovation-driven equation, and the map
    keeps ``rho`` positive and pure states pure. ``scheme='explicit'``
    evaluates the innovation form term by term (positivity not guaranteed).
    """
    rho, with_h = _prepare(np.asarray(rho), model, dt, propagator, hamiltonian)
    g = np.asarray(model.expect_G(rho))
    if scheme == "kraus":
        K = kraus_operator(model, dy, dt, with_h, milstein)
        if K.ndim == rho.ndim - 1:
            new = K[..., :, None] * rho * np.conj(K)[..., None, :]
        else:
            new = K @ rho @ dag(K)
    elif scheme == "explicit":
        gb = g[..., None, None]
        dyb = np.asarray(dy, dtype=float)[..., None, None]
        b = model.measurement_map(rho) - gb * rho
        new = rho + lindblad_rhs(rho, model, hamiltonian=with_h) * dt + b * (dyb - gb * dt)
        if milstein:
            gdb = np.asarray(model.expect_G(b))[..., None, None]
            db = model.measurement_map(b) - gdb * rho - gb * b
            new = new + 0.5 * db * (dyb * dyb - dt)
    else:
        raise ConfigError(f"unknown normalized-filter scheme {scheme!r}")
    new = _herm(new)
    tr = np.real(_trace(new))
    if np.any(tr <= 0) or not np.all(np.isfinite(tr)):
        raise NumericError("normalization of the posterior failed")
    return new / tr[..., None, None], g


def belavkin_step(state, model, dy, dt, propagator=None, milstein=True,
                  monitor=None, eig_tol=1e-6, hamiltonian=None, scheme="kraus"):
    """One step of the nonlinear (normalized) filtering equation.

    The innovation ``dy - tr(G rho) dt`` drives the update and the state is
    renormalized afterwards. ``log_likelihood`` accumulates
    ``<G> dy - <G>^2 dt / 2``.

    Parameters
    ----------
    scheme : {'kraus', 'explicit'}
        See :func:`belavkin_increment`.
    monitor : bool, optional
        Check the smallest eigenvalue against ``-eig_tol`` and raise on a
        breach. Defaults to on for the explicit scheme in dimensions up to 32.
    """
    new, g = belavkin_increment(state.rho, model, dy, dt, propagator, milstein, hamiltonian,
                                scheme)
    if monitor is None:
        monitor = scheme == "explicit" and model.dim <= 32
    if monitor:
        lo = np.min(np.linalg.eigvalsh(new))
        if lo < -eig_tol:
            raise NumericError(f"negative eigenvalue {lo:.3e}; refine the step size")
    dy = np.asarray(dy, dtype=float)
    ll = np.asarray(state.log_likelihood) + g * dy - 0.5 * g * g * dt
    return PosteriorState(new, ll, state.t + dt)


# structure maps -------------------------------------------------------------

def gamma_map(X, model):
    """``(L^dag [L,X] + [X,L^dag] L)/2 + i[X,H]``."""
    L, Ld, H = model.L, model.Ld, model.H
    return 0.5 * (Ld @ commutator(L, X) + commutator(X, Ld) @ L) + 1j * commutator(X, H)


def delta_map(X, model):
    """``[X, L]``."""
    return commutator(X, model.L)


def structure_residuals(model, X):
    """Residuals of the three structure identities for one operator ``X``."""
    Xd = dag(X)
    gX = gamma_map(X, model)
    dX = delta_map(X, model)
    r1 = np.linalg.norm(gamma_map(Xd, model) - dag(gX))
    r2 = np.linalg.norm(gamma_map(Xd @ X, model) - (Xd @ gX + dag(gX) @ X - dag(dX) @ dX))
    eye = np.eye(model.dim)
    r3 = max(np.linalg.norm(gamma_map(eye, model)), np.linalg.norm(delta_map(eye, model)))
    return r1, r2, r3


def validate_structure_maps(model, n_random=100, seed=0):
    """Largest Frobenius residual of the structure identities over random ``X``."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_random):
        X = random_matrix(model.dim, rng)
        worst = max(worst, *structure_residuals(model, X))
    return float(worst)


def random_model(dim, rng, scale=1.0):
    """Random hermitian ``H`` and general complex ``L``."""
    return MarkovModel(random_hermitian(dim, rng, scale), random_matrix(dim, rng, scale))


# trajectories ----------------------------------------------------------------

@dataclass
class FilterTrajectory:
    """Stored output of a filter run; batched runs add a leading path axis."""

    times: np.ndarray
    record: np.ndarray
    rho: Optional[np.ndarray]
    log_likelihood: np.ndarray
    final: PosteriorState
    observables: dict = field(default_factory=dict)
    purity: Optional[np.ndarray] = None


def run_filter(model, rho0, record, dt, kind="belavkin", t0=0.0, propagator=None,
               milstein=True, store=True, observables=None, monitor=None, scheme="kraus"):
    """Drive a filter along a given record.

    Parameters
    ----------
    record : ndarray
        Increments ``(n_steps,)`` or ``(n_paths, n_steps)``.
    kind : {'belavkin', 'zakai'}
    scheme : {'kraus', 'explicit'}
        Normalized-filter scheme (ignored for ``zakai``).
    store : bool
        Keep every density matrix (memory ``n_steps * d^2`` per path).
    observables : dict of name -> operator, optional
        Expectations ``tr(rho X)`` recorded at every step.
    """
    record = np.asarray(record, dtype=float)
    batched = record.ndim == 2
    n = record.shape[-1]
    rho0 = np.asarray(rho0, dtype=complex)
    if batched and rho0.ndim == 2:
        rho0 = np.broadcast_to(rho0, (record.shape[0],) + rho0.shape).copy()
    state = PosteriorState(rho0 / np.real(_trace(rho0))[..., None, None],
                           np.log(np.real(_trace(rho0))) if kind == "zakai" else 0.0, t0)
    lead = rho0.shape[:-2]
    rhos = np.empty((n + 1,) + rho0.shape, dtype=complex) if store else None
    lls = np.empty((n + 1,) + lead)
    pur = np.empty((n + 1,) + lead)
    obs = {k: np.empty((n + 1,) + lead) for k in (observables or {})}

    def record_step(k, st):
        if store:
            rhos[k] = st.rho
        lls[k] = st.log_likelihood
        pur[k] = np.real(np.einsum("...ij,...ji->...", st.rho, st.rho))
        for name, X in (observables or {}).items():
            obs[name][k] = np.real(np.einsum("ij,...ji->...", X, st.rho))

    record_step(0, state)
    if kind not in ("belavkin", "zakai"):
        raise ConfigError(f"unknown filter kind {kind!r}")
    step = belavkin_step if kind == "belavkin" else zakai_step
    kwargs = {"monitor": monitor, "scheme": scheme} if kind == "belavkin" else {}
    for k in range(n):
        dy = record[..., k]
        try:
            state = step(state, model, dy, dt, propagator=propagator, milstein=milstein, **kwargs)
        except NumericError as exc:
            raise NumericError(exc.base_message, step=k) from exc
        record_step(k + 1, state)
    times = t0 + dt * np.arange(n + 1)
    if batched:
        rhos = None if rhos is None else np.moveaxis(rhos, 0, 1)
        lls = lls.T
        pur = pur.T
        obs = {k: v.T for k, v in obs.items()}
    return FilterTrajectory(times, record, rhos, lls, state, obs, pur)


def simulate_record(model, rho0, grid, seed, mode="physical", stream_id=0, n_paths=None,
                    propagator=None, milstein=True, store=True, observables=None,
                    monitor=None, scheme="kraus"):
    """Generate a measurement record and the matching filter trajectory.

    ``physical`` mode draws the innovation from the ``(seed, stream_id)``
    Wiener stream and sets ``dy = tr(G rho) dt + dw~`` along the normalized
    filter. ``reference`` mode returns raw Wiener increments as the record
    and runs the linear filter on them.

    Returns
    -------
    record : ndarray
        ``(n_steps,)``, or ``(n_paths, n_steps)`` when ``n_paths`` is given.
    trajectory : FilterTrajectory
    """
    if n_paths is None:
        noise = sample_wiener_path(grid, seed, stream_id).increments
    else:
        noise = sample_wiener_ensemble(grid, seed, n_paths, stream_id).increments
    if mode == "reference":
        traj = run_filter(model, rho0, noise, grid.dt, "zakai", grid.t0, propagator, milstein,
                          store, observables, monitor)
        return noise, traj
    if mode != "physical":
        raise ConfigError(f"unknown record mode {mode!r}")
    rho0 = np.asarray(rho0, dtype=complex)
    if n_paths is not None and rho0.ndim == 2:
        rho0 = np.broadcast_to(rho0, (n_paths,) + rho0.shape).copy()
    record = np.empty_like(noise)
    # the record is generated on the fly, so the normalized filter is stepped here
    n = grid.n_steps
    dt = grid.dt
    lead = rho0.shape[:-2]
    state = PosteriorState(rho0, 0.0, grid.t0)
    rhos = np.empty((n + 1,) + rho0.shape, dtype=complex) if store else None
    lls = np.empty((n + 1,) + lead)
    pur = np.empty((n + 1,) + lead)
    obs = {k: np.empty((n + 1,) + lead) for k in (observables or {})}

    def keep(k, st):
        if store:
            rhos[k] = st.rho
        lls[k] = st.log_likelihood
        pur[k] = np.real(np.einsum("...ij,...ji->...", st.rho, st.rho))
        for name, X in (observables or {}).items():
            obs[name][k] = np.real(np.einsum("ij,...ji->...", X, st.rho))

    keep(0, state)
    for k in range(n):
        # <G> is evaluated on the state the increment is applied to
        rho_pred = state.rho if propagator is None else propagator(state.rho)
        g = model.expect_G(rho_pred)
        dy = g * dt + noise[..., k]
        record[..., k] = dy
        try:
            state = belavkin_step(PosteriorState(rho_pred, state.log_likelihood, state.t),
                                  model, dy, dt, milstein=milstein, monitor=monitor,
                                  hamiltonian=propagator is None, scheme=scheme)
        except NumericError as exc:
            raise NumericError(exc.base_message, step=k) from exc
        keep(k + 1, state)
    if n_paths is not None:
        rhos = None if rhos is None else np.moveaxis(rhos, 0, 1)
        lls, pur = lls.T, pur.T
        obs = {k: v.T for k, v in obs.items()}
    traj = FilterTrajectory(grid.times, record, rhos, lls, state, obs, pur)
    return record, traj


@dataclass(frozen=True)
class DualityResult:
    mc_value: float
    standard_error: float
    ode_value: float

    @property
    def discrepancy(self):
        return abs(self.mc_value - self.ode_value)

    @property
    def within(self):
        """Discrepancy in units of the Monte Carlo standard error."""
        return self.discrepancy / self.standard_error if self.standard_error > 0 else (
            0.0 if self.discrepancy == 0 else np.inf)


def duality_ode(model, rho0, g, grid):
    """Integrate ``d mu/dt = Lind(mu) + g(t) (L mu + mu L^dag)`` with rk4."""
    gf = g if callable(g) else (lambda t, c=float(g): c)
    rhs = lambda t, mu: lindblad_rhs(mu, model) + gf(t) * model.measurement_map(mu)
    return integrate_ode(rhs, np.asarray(rho0, dtype=complex), grid, "rk4")


def verify_duality_mc(model, X, g, grid, n_paths, seed=0, rho0=None, milstein=True):
    """Compare ``E[tr(sigma_T X) e_g(T)]`` under Wiener records with the ODE value.

    ``e_g(T) = exp{int g dy - (1/2) int g^2 dt}`` is the exponential
    martingale of the (deterministic) function ``g``.
    """
    if n_paths < 1000:
        raise ConfigError("duality check needs at least 1000 paths")
    if model.dim > 8:
        raise ConfigError("duality check is meant for dimension <= 8")
    rho0 = np.eye(model.dim, dtype=complex) / model.dim if rho0 is None else np.asarray(rho0, complex)
    X = np.asarray(X, dtype=complex)
    gvals = np.array([g(t) if callable(g) else float(g) for t in grid.times[:-1]])
    ens = sample_wiener_ensemble(grid, seed, n_paths)
    traj = run_filter(model, rho0, ens.increments, grid.dt, "zakai", grid.t0,
                      milstein=milstein, store=False)
    sigma_T = traj.final.unnormalized()
    log_e = ens.increments @ gvals - 0.5 * np.sum(gvals ** 2) * grid.dt
    samples = np.real(np.einsum("ij,pji->p", X, sigma_T)) * np.exp(log_e)
    mc = float(samples.mean())
    se = float(samples.std(ddof=1) / np.sqrt(n_paths))
    mu = duality_ode(model, rho0, g, grid)[-1]
    ode = float(np.real(np.trace(mu @ X)))
    return DualityResult(mc, se, ode)
