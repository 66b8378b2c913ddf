"""Dense operators, the position-grid representation of the canonical pair,
Gaussian wave functions and Weyl-operator expectations.

Conventions
-----------
The canonical pair obeys ``[P, Q] = (2/i) I`` (Planck constant set to 2 in
the commutator). On the grid ``Q = x`` and ``P = -2i d/dx``. Operators are
plain complex ``numpy`` arrays; the helpers here validate and combine them.
Vectors of the phase space are ordered ``(p, q)``, so ``R(xi) = xi_p P + xi_q Q``.
"""
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special

from .errors import DimensionError, ConfigError, NumericError

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY_2 = np.eye(2, dtype=complex)

# symplectic matrix of the (p, q) pair: [R_i, R_j] = i S_ij
SYMPLECTIC = np.array([[0.0, -2.0], [2.0, 0.0]])

LEAK_TOL = 1e-10


def dag(a):
    """Conjugate transpose over the last two axes."""
    return np.conj(np.swapaxes(a, -1, -2))


def as_operator(entries, hermitian=False, unitary=False, tol=1e-12):
    """Validate a square complex matrix, optionally checking a claimed property.

    Parameters
    ----------
    entries : array_like
        Square matrix.
    hermitian, unitary : bool
        If set, the claim is verified with Frobenius residual below ``tol``.
    """
    a = np.asarray(entries, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise DimensionError(f"operator must be a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericError("operator has non-finite entries")
    scale = max(1.0, np.linalg.norm(a))
    if hermitian and np.linalg.norm(a - dag(a)) > tol * scale:
        raise ConfigError("operator claimed hermitian is not")
    if unitary and np.linalg.norm(dag(a) @ a - np.eye(a.shape[0])) > tol * a.shape[0]:
        raise ConfigError("operator claimed unitary is not")
    return a


def commutator(a, b):
    """``AB - BA``; broadcasts over leading axes."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[-2:] != b.shape[-2:]:
        raise DimensionError(f"commutator of shapes {a.shape} and {b.shape}")
    return a @ b - b @ a


def anticommutator(a, b):
    return a @ b + b @ a


def trace_distance(rho, sigma):
    """Half the trace norm of ``rho - sigma`` for hermitian inputs (batched)."""
    d = np.asarray(rho) - np.asarray(sigma)
    d = 0.5 * (d + dag(d))
    return 0.5 * np.abs(np.linalg.eigvalsh(d)).sum(axis=-1)


def fidelity_pure(psi, rho):
    """``<psi|rho|psi>`` for a normalized vector and density matrix."""
    psi = np.asarray(psi)
    return float(np.real(np.vdot(psi, rho @ psi)))


def purity(rho):
    rho = np.asarray(rho)
    return np.real(np.einsum("...ij,...ji->...", rho, rho))


def ket_to_dm(psi):
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def bloch_vector(rho):
    """Bloch components ``(<sx>, <sy>, <sz>)`` of qubit density matrices."""
    rho = np.asarray(rho)
    return np.stack([np.real(np.einsum("...ij,ji->...", rho, s))
                     for s in (SIGMA_X, SIGMA_Y, SIGMA_Z)], axis=-1)


@dataclass(frozen=True)
class StateVector:
    """Amplitudes of a pure state in some finite representation."""

    amplitudes: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=complex)
        if a.ndim != 1:
            raise DimensionError("state amplitudes must be a vector")
        if not np.all(np.isfinite(a)):
            raise NumericError("state has non-finite amplitudes")
        if np.linalg.norm(a) <= 0:
            raise ConfigError("state vector has zero norm")
        object.__setattr__(self, "amplitudes", a)

    @property
    def norm(self):
        return float(np.linalg.norm(self.amplitudes))

    @property
    def dim(self):
        return self.amplitudes.shape[0]

    def normalized(self):
        return StateVector(self.amplitudes / self.norm)

    def is_normalized(self, tol=1e-12):
        return abs(self.norm - 1.0) <= tol

    def density_matrix(self):
        return ket_to_dm(self.amplitudes)


def _is_pow2(n):
    return isinstance(n, (int, np.integer)) and n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class QuadratureRep:
    """Uniform periodic grid carrying ``Q = x`` and the spectral ``P``.

    ``x`` excludes the right endpoint, so the grid period is ``x_max - x_min``.
    """

    n_points: int
    x_min: float
    x_max: float
    x: np.ndarray = field(repr=False)
    wavenumbers: np.ndarray = field(repr=False)
    Q: np.ndarray = field(repr=False)
    P: np.ndarray = field(repr=False)

    @property
    def dx(self):
        return (self.x_max - self.x_min) / self.n_points

    @property
    def dim(self):
        return self.n_points

    @property
    def p_values(self):
        """Eigenvalues of ``P`` on the Fourier modes, in FFT order."""
        return 2.0 * self.wavenumbers

    def apply_Q(self, v, axis=0):
        shape = [1] * np.ndim(v)
        shape[axis] = self.n_points
        return self.x.reshape(shape) * v

    def apply_P(self, v, axis=0):
        shape = [1] * np.ndim(v)
        shape[axis] = self.n_points
        vk = np.fft.fft(v, axis=axis)
        return np.fft.ifft(self.p_values.reshape(shape) * vk, axis=axis)

    def interior_mask(self, fraction=0.1):
        """Points away from the outer ``fraction`` of the grid on each side."""
        width = self.x_max - self.x_min
        return (self.x > self.x_min + fraction * width) & (self.x < self.x_max - fraction * width)


def build_quadrature_rep(n_points, x_min, x_max):
    """Grid representation of the canonical pair.

    Parameters
    ----------
    n_points : int
        Power of two, at least 16.
    x_min, x_max : float
        Grid bounds, ``x_min < x_max``.

    Returns
    -------
    QuadratureRep
        ``P`` is the dense matrix of spectral differentiation times ``-2i``.
    """
    if not _is_pow2(n_points) or n_points < 16:
        raise ConfigError(f"n_points must be a power of two >= 16, got {n_points}")
    x_min = float(x_min)
    x_max = float(x_max)
    if not (np.isfinite(x_min) and np.isfinite(x_max)) or not x_min < x_max:
        raise ConfigError(f"degenerate grid bounds [{x_min}, {x_max}]")
    x = x_min + (x_max - x_min) * np.arange(n_points) / n_points
    dx = (x_max - x_min) / n_points
    k = 2 * np.pi * np.fft.fftfreq(n_points, dx)
    if n_points % 2 == 0:
        # the Nyquist mode has no well-defined sign; dropping it keeps P hermitian
        k[n_points // 2] = 0.0
    f = np.fft.fft(np.eye(n_points), axis=0)
    P = np.fft.ifft((2.0 * k)[:, None] * f, axis=0)
    P = 0.5 * (P + dag(P))
    Q = np.diag(x).astype(complex)
    return QuadratureRep(n_points, x_min, x_max, x, k, Q, P)


def ccr_residual(rep, psi):
    """``||([P,Q] + 2i) psi|| / ||psi||`` computed with fast transforms."""
    psi = np.asarray(psi, dtype=complex)
    r = rep.apply_P(rep.apply_Q(psi)) - rep.apply_Q(rep.apply_P(psi)) + 2j * psi
    return float(np.linalg.norm(r) / np.linalg.norm(psi))


def grid_leak(rep, q, omega):
    """Probability mass of ``|psi|^2`` outside the grid for a Gaussian."""
    sd = np.sqrt(1.0 / (2.0 * np.real(omega)))
    lo = (rep.x_min - q) / (np.sqrt(2) * sd)
    hi = (rep.x_max - rep.dx - q) / (np.sqrt(2) * sd)
    return float(0.5 * special.erfc(hi) + 0.5 * special.erfc(-lo))


def gaussian_state(rep, q, p, omega):
    """Normalized samples of ``exp{-omega (x-q)^2 / 2 + i p x / 2}``.

    The state has ``<Q> = q``, ``<P> = p``, ``Var Q = 1/(2 Re omega)``,
    ``Var P = 2|omega|^2 / Re omega`` and symmetric covariance
    ``Cov(P, Q) = -Im omega / Re omega``.
    """
    omega = complex(omega)
    if not omega.real > 0:
        raise ConfigError(f"Re omega must be positive, got {omega}")
    leak = grid_leak(rep, q, omega)
    if leak > LEAK_TOL:
        raise ConfigError(f"Gaussian leaks mass {leak:.3e} outside the grid")
    x = rep.x
    amp = np.exp(-0.5 * omega * (x - q) ** 2 + 0.5j * p * x)
    amp = amp / np.linalg.norm(amp)
    return StateVector(amp)


def expectation_and_covariance(state, ops, tol=1e-10):
    """Means and symmetrized covariance of a list of operators.

    Parameters
    ----------
    state : StateVector or array_like
        Normalized state.
    ops : sequence of ndarray
        Operators of matching dimension.

    Returns
    -------
    means : ndarray, complex
    cov : ndarray, real symmetric
        ``Re <X_i X_j> - Re<X_i> Re<X_j>`` (the real part of ``<XY>``
        equals the symmetrized product for hermitian operators).
    """
    psi = state.amplitudes if isinstance(state, StateVector) else np.asarray(state, dtype=complex)
    if abs(np.linalg.norm(psi) - 1.0) > tol:
        raise ConfigError("expectation requires a normalized state")
    vecs = []
    for op in ops:
        op = np.asarray(op)
        if op.shape != (psi.size, psi.size):
            raise DimensionError(f"operator shape {op.shape} vs state dim {psi.size}")
        vecs.append(op @ psi)
    vecs = np.array(vecs)
    means = vecs @ psi.conj()
    gram = vecs.conj() @ vecs.T  # <X_i psi, X_j psi> = <X_i^dag X_j>
    sym = 0.5 * (gram + gram.T)
    cov = np.real(sym) - np.outer(means.real, means.real)
    cov = 0.5 * (cov + cov.T)
    return means, cov


def weyl_operator(rep, xi_p, xi_q):
    """``exp{i(xi_p P + xi_q Q)}`` by scaling-and-squaring Pade."""
    gen = 1j * (xi_p * rep.P + xi_q * rep.Q)
    w = linalg.expm(gen)
    if not np.all(np.isfinite(w)):
        raise NumericError("matrix exponential did not converge")
    return w


def weyl_expectation(state, xi_p, xi_q, rep):
    """``<psi| exp{i R(xi)} |psi>`` with ``R(xi) = xi_p P + xi_q Q``."""
    psi = state.amplitudes if isinstance(state, StateVector) else np.asarray(state, dtype=complex)
    if abs(np.linalg.norm(psi) - 1.0) > 1e-10:
        raise ConfigError("weyl_expectation requires a normalized state")
    return complex(np.vdot(psi, weyl_operator(rep, xi_p, xi_q) @ psi))


def weyl_expectation_dm(rho, xi_p, xi_q, rep):
    """``tr(rho exp{i R(xi)})`` for a density matrix on the grid."""
    return complex(np.trace(rho @ weyl_operator(rep, xi_p, xi_q)))


def random_density(dim, rng, rank=None):
    """Random density matrix from a complex Ginibre draw."""
    rank = dim if rank is None else rank
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ dag(g)
    return rho / np.trace(rho).real


def random_hermitian(dim, rng, scale=1.0):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * 0.5 * (a + dag(a))


def random_matrix(dim, rng, scale=1.0):
    return scale * (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim)))


def operator_to_json(a):
    """JSON text ``{"shape": [n, n], "re": [...], "im": [...]}`` (row-major)."""
    a = np.asarray(a, dtype=complex)
    return json.dumps({"shape": list(a.shape), "re": a.real.ravel().tolist(),
                       "im": a.imag.ravel().tolist()})


def operator_from_json(text):
    d = json.loads(text)
    try:
        a = (np.asarray(d["re"], float) + 1j * np.asarray(d["im"], float)).reshape(d["shape"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"malformed operator dump: {exc}") from exc
    return as_operator(a)
