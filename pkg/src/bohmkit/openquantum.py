"""Collision-model environments, unravelled records and exact oracles.

A system repeatedly meets fresh ancillas prepared in |theta_0>; each meeting
applies a joint unitary U and the ancilla is then read out in a fixed basis
{theta_m}.  Reading outcome m applies the Kraus operator

    M_m = <theta_m| U |theta_0>      (acting on the system),

so one noisy record is a sequence of normalized pure states, and averaging
projectors over records reconstructs the reduced density matrix

    rho_S(t) ~ (1/N) sum_xi |psi_xi(t)><psi_xi(t)|.

Two exact oracles back this up: the fresh-ancilla chain keeps every ancilla
in one growing pure state and partial-traces it at each step, and the
recycled variant lets a single never-measured ancilla interact every step,
which breaks the Markov assumption the unravelling encodes.  The trace
distance between reconstruction and oracle is the Monte Carlo gap in the
fresh case and a non-Markovianity witness in the recycled case.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import ConfigurationError, ResourceError, NumericalError
from .seeds import rng_stream, TAG_COLLISIONS
from .measurement import KrausFamily

UNITARITY_TOL = 1e-10
DENSITY_TOL = 1e-10
DEFAULT_DIMENSION_CAP = 2**14


@dataclass
class CollisionSpec:
    """One system-ancilla collision step.

    The joint unitary acts on the (ancilla (x) system) ordering.  drift_h is
    the system Hamiltonian applied for dt before each collision.
    """

    unitary: np.ndarray
    ancilla_state: np.ndarray
    ancilla_basis: np.ndarray    # rows are the measured basis vectors
    dt: float = 1.0
    drift_h: np.ndarray = None
    hbar: float = 1.0

    def __post_init__(self):
        self.unitary = np.asarray(self.unitary, dtype=complex)
        self.ancilla_state = np.asarray(self.ancilla_state, dtype=complex)
        self.ancilla_state = (self.ancilla_state
                              / np.linalg.norm(self.ancilla_state))
        self.ancilla_basis = np.asarray(self.ancilla_basis, dtype=complex)
        da = len(self.ancilla_state)
        joint = self.unitary.shape[0]
        if self.unitary.shape != (joint, joint) or joint % da:
            raise ConfigurationError(
                "joint unitary must be square with dimension divisible by "
                "the ancilla dimension")
        defect = np.abs(self.unitary.conj().T @ self.unitary
                        - np.eye(joint)).max()
        if defect > UNITARITY_TOL:
            raise ConfigurationError(
                f"joint operator unitarity defect {defect:.2e}")
        gram = self.ancilla_basis @ self.ancilla_basis.conj().T
        if np.abs(gram - np.eye(da)).max() > UNITARITY_TOL:
            raise ConfigurationError("ancilla basis is not orthonormal")
        if self.drift_h is not None:
            self.drift_h = np.asarray(self.drift_h, dtype=complex)
            d_s = joint // da
            if self.drift_h.shape != (d_s, d_s):
                raise ConfigurationError("drift Hamiltonian has wrong shape")

    @property
    def ancilla_dim(self):
        return len(self.ancilla_state)

    @property
    def system_dim(self):
        return self.unitary.shape[0] // self.ancilla_dim

    def drift_unitary(self):
        if self.drift_h is None:
            return np.eye(self.system_dim, dtype=complex)
        return expm(-1j * self.dt / self.hbar * self.drift_h)


def kraus_from_collision(spec):
    """Kraus family M_m = <theta_m| U |theta_0> on the system."""
    da, ds = spec.ancilla_dim, spec.system_dim
    u4 = spec.unitary.reshape(da, ds, da, ds)
    ops = []
    for m in range(da):
        theta_m = spec.ancilla_basis[m]
        ops.append(np.einsum("a,asbt,b->st", theta_m.conj(), u4,
                             spec.ancilla_state))
    return KrausFamily(tuple(ops))


@dataclass
class UnravelResult:
    """Noisy pure-state records: states (steps+1, N, d), outcomes (steps, N)."""

    times: np.ndarray
    states: np.ndarray
    outcomes: np.ndarray
    seed: int

    @property
    def records(self):
        return self.states.shape[1]


def unravel(spec, psi0, steps, records, seed):
    """Sample N collision-model records, vectorized across records.

    Outcome draws use one stream per step; the run is bit-reproducible for a
    fixed (seed, records, steps).
    """
    psi0 = np.asarray(psi0, dtype=complex)
    psi0 = psi0 / np.linalg.norm(psi0)
    kraus = kraus_from_collision(spec)
    drift = spec.drift_unitary()
    d = spec.system_dim
    states = np.empty((steps + 1, records, d), dtype=complex)
    outcomes = np.empty((steps, records), dtype=np.int64)
    current = np.tile(psi0, (records, 1))
    states[0] = current
    rng = rng_stream(seed, TAG_COLLISIONS)
    for k in range(steps):
        current = current @ drift.T
        branches = np.stack([current @ m.T for m in kraus.operators])
        probs = np.sum(np.abs(branches) ** 2, axis=2)
        probs /= probs.sum(axis=0, keepdims=True)
        u = rng.random(records)
        choice = (np.cumsum(probs, axis=0) < u).sum(axis=0)
        picked = branches[choice, np.arange(records)]
        norms = np.linalg.norm(picked, axis=1, keepdims=True)
        current = picked / norms
        if np.any(np.abs(np.linalg.norm(current, axis=1) - 1.0) > 1e-10):
            raise NumericalError("record normalization drifted")
        outcomes[k] = choice
        states[k + 1] = current
    times = spec.dt * np.arange(steps + 1)
    return UnravelResult(times, states, outcomes, seed)


def reduced_density(states):
    """Mean projector over records at each step: (T, d, d)."""
    rho = np.einsum("tni,tnj->tij", states, states.conj())
    return rho / states.shape[1]


def check_density(rho, tol=DENSITY_TOL):
    """Hermiticity, unit trace and positivity within tol."""
    herm = np.abs(rho - rho.conj().swapaxes(-1, -2)).max()
    trace = np.abs(np.trace(rho, axis1=-2, axis2=-1) - 1.0).max()
    eigs = np.linalg.eigvalsh(0.5 * (rho + rho.conj().swapaxes(-1, -2)))
    neg = max(0.0, float(-eigs.min()))
    if herm > tol or trace > tol or neg > tol:
        raise NumericalError(
            f"density matrix defects: hermiticity {herm:.2e}, "
            f"trace {trace:.2e}, negativity {neg:.2e}")
    return {"hermiticity": float(herm), "trace": float(trace),
            "negativity": neg}


def partial_trace_oracle(spec, psi0, steps, cap=DEFAULT_DIMENSION_CAP):
    """Exact reduced dynamics with every fresh ancilla retained.

    The joint state grows one ancilla per collision; the reduced matrix at
    each step is the partial trace over all ancillas so far.  Raises
    ResourceError when the joint dimension would exceed the cap.
    """
    psi0 = np.asarray(psi0, dtype=complex)
    psi0 = psi0 / np.linalg.norm(psi0)
    da, ds = spec.ancilla_dim, spec.system_dim
    total = ds * da**steps
    if total > cap:
        raise ResourceError(
            f"fresh-ancilla oracle needs dimension {total} > cap {cap}; "
            f"raise the cap explicitly to run this horizon")
    drift = spec.drift_unitary()
    u4 = spec.unitary.reshape(da, ds, da, ds)
    state = psi0.copy()           # shape (ancillas..., system)
    rhos = [np.outer(psi0, psi0.conj())]
    for _ in range(steps):
        state = np.tensordot(state, drift, axes=([-1], [1]))
        state = np.tensordot(spec.ancilla_state, state, axes=0)
        # joint unitary on the (new ancilla, system) pair: contract axes
        # (0, -1) of the state with axes (2, 3) of U
        state = np.tensordot(u4, state, axes=([2, 3], [0, state.ndim - 1]))
        # tensordot leaves (a', s', middle ancillas); move system last
        state = np.moveaxis(state, 1, -1)
        flat = state.reshape(-1, ds)
        rhos.append(flat.T @ flat.conj())
    return np.asarray(rhos)


def recycled_oracle(spec, psi0, steps):
    """Exact reduced dynamics with one never-measured, recycled ancilla."""
    psi0 = np.asarray(psi0, dtype=complex)
    psi0 = psi0 / np.linalg.norm(psi0)
    da, ds = spec.ancilla_dim, spec.system_dim
    joint = np.kron(spec.ancilla_state, psi0)
    drift_joint = np.kron(np.eye(da), spec.drift_unitary())
    rhos = [np.outer(psi0, psi0.conj())]
    for _ in range(steps):
        joint = spec.unitary @ (drift_joint @ joint)
        flat = joint.reshape(da, ds)
        rhos.append(flat.T @ flat.conj())
    return np.asarray(rhos)


def trace_distance(rho, sigma):
    diff = rho - sigma
    diff = 0.5 * (diff + diff.conj().T)
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(diff))))


@dataclass
class MarkovianityReport:
    times: np.ndarray
    fresh_gap: np.ndarray
    recycled_gap: np.ndarray
    monte_carlo_bound: float
    records: int

    @property
    def witness_ratio(self):
        """Peak recycled gap over the Monte Carlo bound; > 1 flags memory."""
        return float(self.recycled_gap.max() / self.monte_carlo_bound)


def markovianity_diagnostic(spec, psi0, steps, records, seed,
                            cap=DEFAULT_DIMENSION_CAP):
    """Compare the unravelling against fresh and recycled exact oracles.

    The fresh gap stays below the 5/sqrt(N) Monte Carlo bound when the
    environment really is memoryless; the recycled gap measures how far a
    re-colliding (never measured) ancilla drags the dynamics away from the
    collision-model reconstruction.
    """
    run = unravel(spec, psi0, steps, records, seed)
    rho_rec = reduced_density(run.states)
    check_density(rho_rec)
    rho_fresh = partial_trace_oracle(spec, psi0, steps, cap=cap)
    rho_cycle = recycled_oracle(spec, psi0, steps)
    fresh_gap = np.array([trace_distance(a, b)
                          for a, b in zip(rho_rec, rho_fresh)])
    cycle_gap = np.array([trace_distance(a, b)
                          for a, b in zip(rho_rec, rho_cycle)])
    bound = 5.0 / np.sqrt(records)
    return MarkovianityReport(run.times, fresh_gap, cycle_gap, bound,
                              records)


# ready-made collision unitaries ------------------------------------------


def damping_collision(angle, dt=1.0, drift_h=None, hbar=1.0):
    """Qubit amplitude-damping collision: excitation exchange by `angle`.

    The per-collision decay factor of the excited population is cos(angle)^2.
    """
    sp = np.array([[0, 1], [0, 0]], dtype=complex)   # sigma_+ (|0><1|)
    exchange = np.kron(sp, sp.conj().T) + np.kron(sp.conj().T, sp)
    u = expm(-1j * angle * exchange)
    return CollisionSpec(u, np.array([1.0, 0.0]), np.eye(2), dt, drift_h,
                         hbar)


def partial_swap_collision(angle, ancilla_state, dt=1.0, drift_h=None,
                           hbar=1.0):
    """U = cos(angle) I - i sin(angle) SWAP on two equal-dimension parties."""
    d = len(ancilla_state)
    swap = np.zeros((d * d, d * d), dtype=complex)
    for i in range(d):
        for j in range(d):
            swap[i * d + j, j * d + i] = 1.0
    u = np.cos(angle) * np.eye(d * d) - 1j * np.sin(angle) * swap
    return CollisionSpec(u, ancilla_state, np.eye(d), dt, drift_h, hbar)
