"""Seeded Brownian paths, ODE/SDE integrators and convergence-order fits.

Random streams are keyed by ``(seed, stream_id)`` through a counter-based
Philox generator, so trajectory ``k`` of an ensemble is the same whether it
is produced alone, in a batch, or by any worker.
"""
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ConfigError, NumericError


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t0, t0 + dt, ..., t0 + n_steps dt``."""

    t0: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 0:
            raise ConfigError(f"n_steps must be a non-negative integer, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @classmethod
    def from_horizon(cls, T, dt, t0=0.0):
        n = int(round((T - t0) / dt))
        if not np.isclose(n * dt, T - t0, rtol=1e-9, atol=1e-12):
            raise ConfigError(f"horizon {T} is not a multiple of dt = {dt}")
        return cls(float(t0), float(dt), n)

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    @property
    def t_end(self):
        return self.t0 + self.dt * self.n_steps


def stream_generator(seed, stream_id):
    """Philox generator for one ``(seed, stream_id)`` stream."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class WienerPath:
    """Brownian increments on a time grid; also serves as a measurement record."""

    grid: TimeGrid
    increments: np.ndarray
    seed: int
    stream_id: int

    @property
    def values(self):
        """Path values ``w(t_k)`` starting from zero."""
        return np.concatenate([[0.0], np.cumsum(self.increments)])


@dataclass(frozen=True)
class WienerEnsemble:
    """Independent paths, row ``j`` being stream ``stream_ids[j]``."""

    grid: TimeGrid
    increments: np.ndarray  # (n_paths, n_steps)
    seed: int
    stream_ids: np.ndarray

    @property
    def n_paths(self):
        return self.increments.shape[0]

    def path(self, j):
        return WienerPath(self.grid, self.increments[j], self.seed, int(self.stream_ids[j]))


def sample_wiener_path(grid, seed, stream_id=0):
    """Draw i.i.d. ``N(0, dt)`` increments from the ``(seed, stream_id)`` stream."""
    rng = stream_generator(seed, stream_id)
    inc = rng.standard_normal(grid.n_steps) * np.sqrt(grid.dt)
    return WienerPath(grid, inc, int(seed), int(stream_id))


def sample_wiener_ensemble(grid, seed, n_paths, first_stream=0):
    """Stack of ``n_paths`` streams; row ``j`` equals ``sample_wiener_path(grid, seed, first_stream + j)``."""
    ids = np.arange(first_stream, first_stream + n_paths)
    inc = np.empty((n_paths, grid.n_steps))
    for j, sid in enumerate(ids):
        inc[j] = sample_wiener_path(grid, seed, sid).increments
    return WienerEnsemble(grid, inc, int(seed), ids)


def _check_finite(y, step):
    if not np.all(np.isfinite(y)):
        raise NumericError("non-finite state", step=step)


def _rk4_step(rhs, t, y, dt):
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = rhs(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = rhs(t + dt, y + dt * k3)
    return y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_ode(rhs, y0, grid, scheme="rk4", rtol=1e-10, atol=1e-12):
    """Integrate ``dy/dt = rhs(t, y)`` and sample on the grid.

    Parameters
    ----------
    rhs : callable ``(t, y) -> dy/dt``
        Works on arrays of the shape of ``y0`` (real or complex).
    y0 : array_like
    grid : TimeGrid
    scheme : {'rk4', 'euler', 'adaptive'}
        ``adaptive`` uses an embedded Runge-Kutta pair (DOP853) with the
        given tolerances and reports values at grid times.

    Returns
    -------
    ndarray of shape ``(n_steps + 1,) + y0.shape``
    """
    y0 = np.asarray(y0)
    if not np.issubdtype(y0.dtype, np.inexact):
        y0 = y0.astype(float)
    out = np.empty((grid.n_steps + 1,) + y0.shape, dtype=np.result_type(y0, float))
    out[0] = y0
    t = grid.times
    if scheme in ("rk4", "euler"):
        y = y0
        for k in range(grid.n_steps):
            if scheme == "rk4":
                y = _rk4_step(rhs, t[k], y, grid.dt)
            else:
                y = y + grid.dt * rhs(t[k], y)
            _check_finite(y, k)
            out[k + 1] = y
        return out
    if scheme == "adaptive":
        if grid.n_steps == 0:
            return out
        shape = y0.shape

        def f(tt, yy):
            return np.asarray(rhs(tt, yy.reshape(shape))).ravel()

        sol = solve_ivp(f, (t[0], t[-1]), y0.ravel(), method="DOP853",
                        t_eval=t, rtol=rtol, atol=atol)
        if not sol.success:
            raise NumericError(f"adaptive integration failed: {sol.message}")
        vals = sol.y.T.reshape((-1,) + shape)
        for k in range(vals.shape[0]):
            _check_finite(vals[k], k)
        out[:] = vals
        return out
    raise ConfigError(f"unknown ODE scheme {scheme!r}")


def integrate_sde(drift, diffusion, y0, path, scheme="euler_maruyama"):
    """Euler-Maruyama (Ito) integration of ``dy = a(t,y) dt + b(t,y) dw``.

    Parameters
    ----------
    drift, diffusion : callable ``(t, y) -> array``
        Both return arrays shaped like ``y``.
    y0 : array_like
        Initial state. For a :class:`WienerEnsemble` the leading axis of
        ``y0`` indexes paths (a single state is broadcast).
    path : WienerPath or WienerEnsemble
    scheme : {'euler_maruyama'}

    Returns
    -------
    ndarray of shape ``(n_steps + 1,) + y.shape``
    """
    if scheme != "euler_maruyama":
        raise ConfigError(f"unknown SDE scheme {scheme!r}")
    grid = path.grid
    y = np.asarray(y0)
    if not np.issubdtype(y.dtype, np.inexact):
        y = y.astype(float)
    inc = np.asarray(path.increments)
    if inc.ndim == 2:
        n_paths = inc.shape[0]
        if y.ndim == 0 or y.shape[0] != n_paths:
            y = np.broadcast_to(y, (n_paths,) + y.shape).copy()
        dws = inc.T.reshape((grid.n_steps, n_paths) + (1,) * (y.ndim - 1))
    else:
        dws = inc
    out = np.empty((grid.n_steps + 1,) + y.shape, dtype=y.dtype)
    out[0] = y
    t = grid.times
    for k in range(grid.n_steps):
        y = y + drift(t[k], y) * grid.dt + diffusion(t[k], y) * dws[k]
        _check_finite(y, k)
        out[k + 1] = y
    return out


@dataclass(frozen=True)
class StrongProblem:
    """Test problem with an exact solution along the driving path.

    ``exact(t, w_t)`` gives the solution at time ``t`` for Brownian value
    ``w_t``. For deterministic problems set ``diffusion`` to ``None``; then
    ``exact`` ignores its second argument.
    """

    drift: Callable
    diffusion: Optional[Callable]
    y0: float
    T: float
    exact: Callable


def geometric_brownian_motion(a=1.0, b=1.0, x0=1.0, T=1.0):
    """``dX = aX dt + bX dw`` with ``X_T = x0 exp{(a - b^2/2)T + b w_T}``."""
    return StrongProblem(
        drift=lambda t, x: a * x,
        diffusion=lambda t, x: b * x,
        y0=x0,
        T=T,
        exact=lambda t, w: x0 * np.exp((a - 0.5 * b * b) * t + b * w),
    )


def estimate_strong_order(problem, dt_list, n_paths=1000, seed=0, scheme=None):
    """Least-squares slope of ``log(strong error)`` against ``log(dt)``.

    The strong error at ``dt`` is ``E|y_T - exact(T, w_T)|`` over ``n_paths``
    Brownian paths (or the plain error for deterministic problems).

    Returns
    -------
    slope : float
    errors : ndarray
        Errors for each entry of ``dt_list``.
    """
    dt_list = np.asarray(dt_list, dtype=float)
    if dt_list.size < 3:
        raise ConfigError("need at least three step sizes")
    stochastic = problem.diffusion is not None
    if stochastic and n_paths < 100:
        raise ConfigError("need at least 100 paths")
    errors = np.empty(dt_list.size)
    for i, dt in enumerate(dt_list):
        grid = TimeGrid.from_horizon(problem.T, dt)
        if stochastic:
            ens = sample_wiener_ensemble(grid, seed + i, n_paths)
            y = integrate_sde(problem.drift, problem.diffusion,
                              np.full(n_paths, problem.y0, dtype=float), ens,
                              scheme or "euler_maruyama")[-1]
            exact = problem.exact(problem.T, ens.increments.sum(axis=1))
            errors[i] = np.mean(np.abs(y - exact))
        else:
            y = integrate_ode(problem.drift, problem.y0, grid, scheme or "rk4")[-1]
            errors[i] = np.max(np.abs(y - problem.exact(problem.T, 0.0)))
    if np.any(errors <= 0):
        raise NumericError("zero error; step sizes too small to resolve an order")
    slope = np.polyfit(np.log(dt_list), np.log(errors), 1)[0]
    return float(slope), errors
