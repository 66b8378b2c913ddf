"""Repeated-interaction (toy Fock) model of the quantum noise.

Time is cut into slots of length ``dt``; each slot carries one truncated
field mode prepared in its ground state. The system interacts with slot
``k`` through ``U_k = exp{L (x) dA^dag - L^dag (x) dA - i H dt (x) I}`` and the
slot is then left alone, so its quadrature ``dA + dA^dag`` is an output
observable. Everything here is exact finite-dimensional linear algebra and
serves as an oracle for the continuous filters.

Joint states are stored as arrays of shape ``(system_dim, slot_dim, ..., slot_dim)``
with one axis per elapsed slot, in time order.
"""
from dataclasses import dataclass, field
from functools import reduce
from itertools import product

import numpy as np
from scipy.linalg import expm

from .errors import ConfigError, DimensionError, NumericError
from .hilbert import StateVector, dag, ket_to_dm, trace_distance
from .stochastic import stream_generator

DEFAULT_MAX_DIM = 2 ** 14
# conditional outcome probabilities below this are roundoff of an impossible branch
ZERO_PROB = 1e-14


@dataclass(frozen=True)
class ToyFockLattice:
    n_slots: int
    dt: float
    system_dim: int
    slot_dim: int = 2
    max_dim: int = DEFAULT_MAX_DIM

    def __post_init__(self):
        if self.slot_dim < 2:
            raise ConfigError("slot_dim must be at least 2")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.n_slots < 0 or self.system_dim < 1:
            raise ConfigError("invalid lattice size")
        if self.joint_dim > self.max_dim:
            raise ConfigError(f"joint dimension {self.joint_dim} exceeds cap {self.max_dim}")

    @property
    def joint_dim(self):
        return self.system_dim * self.slot_dim ** self.n_slots


@dataclass(frozen=True)
class SlotOperators:
    dA: np.ndarray
    dA_dag: np.ndarray
    vacuum: np.ndarray

    @property
    def quadrature(self):
        return self.dA + self.dA_dag


def _lowering(slot_dim):
    return np.diag(np.sqrt(np.arange(1, slot_dim)), k=1).astype(complex)


def slot_increments(dt, slot_dim=2):
    """Field increments of one slot: ``dA = sqrt(dt) |0><1|`` for two levels.

    Larger slots use the truncated oscillator lowering operator scaled by
    ``sqrt(dt)``.
    """
    if slot_dim < 2:
        raise ConfigError("slot_dim must be at least 2")
    if not dt > 0:
        raise ConfigError("dt must be positive")
    dA = np.sqrt(dt) * _lowering(slot_dim)
    vac = np.zeros(slot_dim, dtype=complex)
    vac[0] = 1.0
    return SlotOperators(dA, dag(dA), vac)


def ito_table_check(dt, slot_dim=2):
    """Largest deviation of vacuum increment products from ``{dt, 0, 0, 0}``.

    Products checked, in order: ``dA dA^dag``, ``dA^dag dA``, ``dA dA``,
    ``dA^dag dA^dag``.
    """
    if dt < 0:
        raise ConfigError("dt must be non-negative")
    dA = np.sqrt(dt) * _lowering(slot_dim)
    dAd = dag(dA)
    vac = np.zeros(slot_dim)
    vac[0] = 1.0
    table = [(dA @ dAd, dt), (dAd @ dA, 0.0), (dA @ dA, 0.0), (dAd @ dAd, 0.0)]
    return float(max(abs(vac @ m @ vac - v) for m, v in table))


def slot_unitary(H, L, dt, slot_dim=2, tol=1e-12):
    """Joint system-slot propagator, ordered system (x) slot."""
    H = np.asarray(H, dtype=complex)
    L = np.asarray(L, dtype=complex)
    ops = slot_increments(dt, slot_dim)
    gen = (np.kron(L, ops.dA_dag) - np.kron(dag(L), ops.dA)
           - 1j * dt * np.kron(H, np.eye(slot_dim)))
    U = expm(gen)
    err = np.linalg.norm(dag(U) @ U - np.eye(U.shape[0]))
    if err > tol:
        raise NumericError(f"slot propagator not unitary (residual {err:.2e})")
    return U


@dataclass
class JointHistory:
    """Joint states after 0, 1, ..., n slots."""

    lattice: ToyFockLattice
    U: np.ndarray
    states: list = field(repr=False)

    def field_traced(self, k):
        """System density matrix after ``k`` slots."""
        psi = self.states[k].reshape(self.lattice.system_dim, -1)
        return psi @ dag(psi)


def _system_vector(initial_system):
    if isinstance(initial_system, StateVector):
        return initial_system.normalized().amplitudes
    v = np.asarray(initial_system, dtype=complex)
    return v / np.linalg.norm(v)


def repeated_interaction_evolve(H, L, lattice, initial_system):
    """Evolve system and field slot by slot.

    Returns
    -------
    JointHistory
        ``states[k]`` has shape ``(system_dim,) + (slot_dim,) * k``.
    """
    psi = _system_vector(initial_system)
    s, d = lattice.system_dim, lattice.slot_dim
    if psi.shape != (s,) or np.shape(H) != (s, s) or np.shape(L) != (s, s):
        raise DimensionError("system operators and state must match system_dim")
    U = slot_unitary(H, L, lattice.dt, d)
    # columns of U with the fresh slot in vacuum: U4[a, b, c] = <a b|U|c 0>
    U4 = U.reshape(s, d, s, d)[:, :, :, 0]
    states = [psi.copy()]
    cur = psi.reshape(s, 1)
    for k in range(lattice.n_slots):
        nxt = np.einsum("abc,cr->arb", U4, cur)  # (s, rest, new slot)
        states.append(nxt.reshape((s,) + (d,) * (k + 1)))
        cur = nxt.reshape(s, -1)
    return JointHistory(lattice, U, states)


def quadrature_basis(dt, slot_dim=2):
    """Eigenvalues and eigenvectors (columns) of the slot quadrature, ascending."""
    ops = slot_increments(dt, slot_dim)
    w, v = np.linalg.eigh(ops.quadrature)
    return w, v


def _outcome_indices(record, eigvals):
    idx = []
    for k, r in enumerate(np.asarray(record, dtype=float)):
        j = int(np.argmin(np.abs(eigvals - r)))
        if abs(eigvals[j] - r) > 1e-9 * max(1.0, abs(r)):
            raise ConfigError(f"outcome {r} at slot {k} is not a quadrature eigenvalue")
        idx.append(j)
    return idx


@dataclass
class ConditionedRecord:
    """Posterior system states along a record of slot outcomes."""

    record: np.ndarray
    states: np.ndarray  # (n + 1, system_dim) normalized vectors
    probabilities: np.ndarray  # cumulative record probabilities, (n + 1,)

    @property
    def density_matrices(self):
        return np.einsum("ka,kb->kab", self.states, self.states.conj())


def condition_on_quadrature_record(history, record):
    """Project each elapsed slot onto its measured quadrature eigenvector.

    Parameters
    ----------
    history : JointHistory
    record : sequence of float
        Outcome per slot; for two-level slots these are ``+-sqrt(dt)``.

    Returns
    -------
    ConditionedRecord
    """
    lat = history.lattice
    record = np.asarray(record, dtype=float)
    if record.shape != (lat.n_slots,):
        raise DimensionError(f"record length {record.size} differs from {lat.n_slots} slots")
    w, v = quadrature_basis(lat.dt, lat.slot_dim)
    idx = _outcome_indices(record, w)
    bras = [v[:, j].conj() for j in idx]
    states = np.empty((lat.n_slots + 1, lat.system_dim), dtype=complex)
    probs = np.empty(lat.n_slots + 1)
    states[0] = history.states[0]
    probs[0] = 1.0
    for k in range(1, lat.n_slots + 1):
        amp = history.states[k]
        for j in range(k):
            # the first remaining slot axis is always axis 1
            amp = np.tensordot(amp, bras[j], axes=([1], [0]))
        p = float(np.real(np.vdot(amp, amp)))
        if p <= ZERO_PROB * probs[k - 1]:
            raise NumericError("zero-probability outcome", step=k - 1)
        states[k] = amp / np.sqrt(p)
        probs[k] = p
    return ConditionedRecord(record, states, probs)


def measurement_operators(H, L, dt, slot_dim=2):
    """System Kraus operators ``<e_j|U|0>`` for each quadrature eigenvector ``e_j``."""
    s = np.shape(H)[0]
    U = slot_unitary(H, L, dt, slot_dim)
    U4 = U.reshape(s, slot_dim, s, slot_dim)[:, :, :, 0]
    w, v = quadrature_basis(dt, slot_dim)
    return w, [np.einsum("b,abc->ac", v[:, j].conj(), U4) for j in range(slot_dim)]


def sequential_conditioning(H, L, lattice, initial_system, record):
    """Same posteriors as :func:`condition_on_quadrature_record`, slot by slot."""
    w, ks = measurement_operators(H, L, lattice.dt, lattice.slot_dim)
    idx = _outcome_indices(record, w)
    psi = _system_vector(initial_system)
    states = [psi]
    probs = [1.0]
    total = 1.0
    for k, j in enumerate(idx):
        phi = ks[j] @ psi
        p = float(np.real(np.vdot(phi, phi)))
        if p <= ZERO_PROB:
            raise NumericError("zero-probability outcome", step=k)
        total *= p
        psi = phi / np.sqrt(p)
        states.append(psi)
        probs.append(total)
    return ConditionedRecord(np.asarray(record, dtype=float), np.array(states), np.array(probs))


def sample_quadrature_record(H, L, lattice, initial_system, seed, stream_id=0):
    """Draw outcomes with their quantum probabilities; returns record and posteriors."""
    rng = stream_generator(seed, stream_id)
    w, ks = measurement_operators(H, L, lattice.dt, lattice.slot_dim)
    psi = _system_vector(initial_system)
    states = [psi]
    probs = [1.0]
    record = []
    total = 1.0
    for _ in range(lattice.n_slots):
        branches = [K @ psi for K in ks]
        p = np.array([np.real(np.vdot(b, b)) for b in branches])
        j = int(rng.choice(len(p), p=p / p.sum()))
        total *= p[j]
        psi = branches[j] / np.sqrt(p[j])
        record.append(w[j])
        states.append(psi)
        probs.append(total)
    return ConditionedRecord(np.array(record), np.array(states), np.array(probs))


def enumerate_records(history):
    """All ``slot_dim ** n`` records with probabilities and final posteriors.

    Returns
    -------
    records : ndarray (n_records, n_slots)
    probabilities : ndarray (n_records,)
    posteriors : ndarray (n_records, system_dim, system_dim)
    """
    lat = history.lattice
    w, v = quadrature_basis(lat.dt, lat.slot_dim)
    final = history.states[-1]
    recs, probs, posts = [], [], []
    for combo in product(range(lat.slot_dim), repeat=lat.n_slots):
        amp = final
        for j in combo:
            amp = np.tensordot(amp, v[:, j].conj(), axes=([1], [0]))
        p = float(np.real(np.vdot(amp, amp)))
        recs.append(w[list(combo)])
        probs.append(p)
        posts.append(ket_to_dm(amp / np.sqrt(p)) if p > 0 else np.zeros((lat.system_dim,) * 2))
    return np.array(recs).reshape(-1, lat.n_slots), np.array(probs), np.array(posts)


def record_enumeration_table(history):
    """Columns for CSV export of a qubit lattice: record bits, probability and
    the posterior Bloch vector. Bit ``j`` is 1 when slot ``j`` gave the larger
    quadrature outcome."""
    from .hilbert import bloch_vector
    if history.lattice.system_dim != 2:
        raise DimensionError("record export is defined for qubit systems")
    recs, probs, posts = enumerate_records(history)
    cols = {f"bit_{j}": (recs[:, j] > 0).astype(int) for j in range(recs.shape[1])}
    cols["probability"] = probs
    bv = bloch_vector(posts)
    for i, name in enumerate(("bloch_x", "bloch_y", "bloch_z")):
        cols[name] = bv[:, i]
    return cols


# nondemolition ---------------------------------------------------------------

def _embed_slot_unitary(U, k, n, s, d):
    """Slot-``k`` propagator (1-based) on system (x) slots 1..n."""
    U4 = U.reshape(s, d, s, d)
    dim = s * d ** n
    # out axes (system, slots before k, slot k, slots after k), then the in axes
    T = np.einsum("abce,ij,pq->aibpcjeq", U4, np.eye(d ** (k - 1)), np.eye(d ** (n - k)))
    return T.reshape(dim, dim)


def _slot_operator(A, k, n, s, d):
    """Slot-``k`` single-mode operator on system (x) slots 1..n."""
    return reduce(np.kron, [np.eye(s)] + [A if j == k else np.eye(d) for j in range(1, n + 1)])


def nondemolition_commutators(H, L, lattice, initial_system, X, norm="state"):
    """Norms of ``[X(t), Y(s)]`` for ``t, s = 0..n`` slots.

    ``X(t)`` is the Heisenberg-picture system observable after ``t`` slots and
    ``Y(s)`` the output quadrature accumulated over slots ``1..s``, both in
    the full joint space of ``n`` slots.

    Parameters
    ----------
    norm : {'state', 'operator'}
        ``state`` uses ``||[X(t), Y(s)] (psi (x) vac)||``; ``operator`` the
        spectral norm.

    Returns
    -------
    ndarray of shape ``(n + 1, n + 1)`` indexed ``[t, s]``.
    """
    s_dim, d, n = lattice.system_dim, lattice.slot_dim, lattice.n_slots
    U = slot_unitary(H, L, lattice.dt, d)
    dim = s_dim * d ** n
    W = [np.eye(dim, dtype=complex)]
    for k in range(1, n + 1):
        W.append(_embed_slot_unitary(U, k, n, s_dim, d) @ W[-1])
    Xfull = np.kron(np.asarray(X, dtype=complex), np.eye(d ** n))
    Xt = [dag(Wt) @ Xfull @ Wt for Wt in W]
    quad = slot_increments(lattice.dt, d).quadrature
    Wn = W[-1]
    out_q = [dag(Wn) @ _slot_operator(quad, j, n, s_dim, d) @ Wn for j in range(1, n + 1)]
    Y = [np.zeros((dim, dim), dtype=complex)]
    for j in range(n):
        Y.append(Y[-1] + out_q[j])
    vac = np.zeros(d ** n)
    vac[0] = 1.0
    psi = np.kron(_system_vector(initial_system), vac)
    res = np.empty((n + 1, n + 1))
    if norm == "state":
        Xpsi = [x @ psi for x in Xt]
        Ypsi = [y @ psi for y in Y]
        for t in range(n + 1):
            for s in range(n + 1):
                res[t, s] = np.linalg.norm(Xt[t] @ Ypsi[s] - Y[s] @ Xpsi[t])
    elif norm == "operator":
        # X(t) and Y(s) are hermitian, so [X, Y] = M - M^dag with M = XY and
        # i[X, Y] is hermitian: its spectral norm is the largest |eigenvalue|
        for t in range(n + 1):
            for s in range(n + 1):
                M = Xt[t] @ Y[s]
                res[t, s] = np.max(np.abs(np.linalg.eigvalsh(1j * (M - dag(M)))))
    else:
        raise ConfigError(f"unknown norm {norm!r}")
    return res


# oracle comparison -------------------------------------------------------------

@dataclass
class OracleComparison:
    dt_list: np.ndarray
    errors: np.ndarray
    order: float


def compare_with_filter(H, L, initial_system, dt_list, T, n_records, seed=0,
                        max_dim=DEFAULT_MAX_DIM):
    """RMS trace distance at time ``T`` between the toy-Fock posterior and the
    normalized continuous filter run on the same binary record.

    Records are drawn with their quantum probabilities; the oracle posterior
    is obtained by projecting the stored joint state, and the filter is
    driven with ``dy = +-sqrt(dt)``.
    """
    from .belavkin import MarkovModel, run_filter

    model = MarkovModel(H, L)
    psi0 = _system_vector(initial_system)
    rho0 = ket_to_dm(psi0)
    errors = []
    for i, dt in enumerate(dt_list):
        n = int(round(T / dt))
        lat = ToyFockLattice(n, dt, model.dim, 2, max_dim)
        history = repeated_interaction_evolve(model.H, model.L, lat, psi0)
        recs = [sample_quadrature_record(model.H, model.L, lat, psi0, seed + i, r).record
                for r in range(n_records)]
        recs = np.array(recs)
        oracle = np.array([condition_on_quadrature_record(history, r).density_matrices[-1]
                           for r in recs])
        traj = run_filter(model, rho0, recs, dt, "belavkin", store=False)
        errors.append(np.sqrt(np.mean(trace_distance(traj.final.rho, oracle) ** 2)))
    errors = np.array(errors)
    order = float(np.polyfit(np.log(dt_list), np.log(errors), 1)[0])
    return OracleComparison(np.asarray(dt_list, dtype=float), errors, order)
