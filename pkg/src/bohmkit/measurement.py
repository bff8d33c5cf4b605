"""Measurement protocols: strong pointer, weak value, generalized Kraus.

Strong measurement couples a discrete system to a 1D pointer with the von
Neumann interaction mu(t) B (x) p_M over a window, producing one displaced
pointer envelope per eigenvalue of B.  The readout samples the pointer
position from the evolved marginal (equivalent in law to reading off a
Bohmian pointer trajectory in quantum equilibrium at the end of the window),
records the envelope that contains it, and slices the hybrid state there to
obtain the effectively collapsed system state.

The weak protocol couples a gridded system state to a pointer axis with a
deliberately small strength, reads the barely shifted pointer position z_B,
then immediately reads the system position z_x; averaging z_B / mu over runs
post-selected on z_x in a bin around x0 estimates the local expectation value
of B at x0.

Generalized measurements apply a Kraus family {M_m}: outcome probabilities
P_m = ||M_m psi||^2 with sum_m M_m^dag M_m = 1.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import ConfigurationError, EvaluationError, RegimeError
from . import numerics
from .seeds import rng_stream, TAG_MEASUREMENT
from .wavefield import (Grid, Wavefunction, HybridState, hybrid_product,
                        gaussian_packet, evolve_hybrid,
                        pointer_momentum_matrix)

KRAUS_TOL = 1e-10
OVERLAP_THRESHOLD = 1e-4
GAP_SIGMA_FACTOR = 5.0
WEAKNESS_FACTOR = 0.1


@dataclass
class PointerConfig:
    """Pointer wavepacket and coupling window for a measurement run."""

    strength: float              # integrated coupling mu = integral mu(t) dt
    width: float = 1.0           # initial pointer sigma
    center: float = 0.0
    window: float = 1.0          # coupling duration T
    steps: int = 64
    grid: tuple = None           # (lo, hi, points); None = auto from spectrum
    mass: float = None           # None = infinitely massive pointer

    def __post_init__(self):
        if self.width <= 0 or self.window <= 0 or self.steps < 1:
            raise ConfigurationError("pointer width, window and steps must "
                                     "be positive")

    def pointer_grid(self, shifts=()):
        if self.grid is not None:
            return Grid.line(*self.grid)
        lo = min([self.center, *shifts]) - 8.0 * self.width
        hi = max([self.center, *shifts]) + 8.0 * self.width
        points = max(192, int(np.ceil((hi - lo) / (self.width / 8.0))))
        return Grid.line(lo, hi, points)

    def profile(self):
        """Per-step coupling rate; rectangular pulse integrating to mu."""
        return np.full(self.steps, self.strength / self.window)

    @property
    def dt(self):
        return self.window / self.steps


@dataclass
class MeasurementRecord:
    outcome: float
    outcome_index: int
    pointer_position: float
    probabilities: np.ndarray
    pre_state: np.ndarray
    post_state: np.ndarray
    seed: int


def _eigengroups(coupling, tol=1e-9):
    """Distinct eigenvalues of B with their eigenspace projector columns."""
    vals, vecs = np.linalg.eigh(coupling)
    groups = []
    used = np.zeros(len(vals), dtype=bool)
    for i, v in enumerate(vals):
        if used[i]:
            continue
        sel = np.abs(vals - v) <= tol * max(1.0, np.abs(vals).max())
        used |= sel
        groups.append((float(np.mean(vals[sel])), vecs[:, sel]))
    return groups


def couple_pointer(psi_levels, coupling, cfg, system_h=None, hbar=1.0):
    """Entangle the system with the pointer; returns the evolved hybrid state
    and the eigenvalue groups of the coupling operator."""
    psi_levels = np.asarray(psi_levels, dtype=complex)
    psi_levels = psi_levels / np.linalg.norm(psi_levels)
    coupling = np.asarray(coupling, dtype=complex)
    groups = _eigengroups(coupling)
    shifts = [cfg.center + cfg.strength * g[0] for g in groups]
    grid = cfg.pointer_grid(shifts)
    pointer = gaussian_packet(grid, cfg.center, cfg.width)
    hybrid = hybrid_product(psi_levels, pointer)
    if system_h is None:
        system_h = np.zeros_like(coupling)
    evolved = evolve_hybrid(hybrid, system_h, coupling, cfg.profile(),
                            cfg.dt, pointer_mass=cfg.mass, hbar=hbar)
    return evolved, groups


def _envelope_densities(evolved, groups, psi_levels):
    """Pointer density of each eigenvalue branch, normalized per branch."""
    densities = []
    weights = []
    for value, basis in groups:
        # project the level part onto the eigenspace
        proj = basis @ (basis.conj().T @ evolved.amplitudes)
        dens = np.sum(np.abs(proj) ** 2, axis=0)
        w = float(np.sum(dens) * evolved.pointer_grid.cell)
        weights.append(w)
        densities.append(dens / w if w > 0 else dens)
    return np.asarray(densities), np.asarray(weights)


def _pairwise_overlap(densities, cell):
    worst = 0.0
    for i in range(len(densities)):
        for j in range(i + 1, len(densities)):
            worst = max(worst, float(
                cell * np.sum(np.minimum(densities[i], densities[j]))))
    return worst


def strong_measure(psi_levels, coupling, cfg, seed, system_h=None, hbar=1.0,
                   run_key=0):
    """One projective measurement of B via an explicit pointer.

    Raises RegimeError when the coupling cannot separate the envelopes
    (mu * eigenvalue gap below 5 pointer widths, or residual envelope overlap
    above 1e-4); in that regime use the weak protocol instead.
    """
    psi_levels = np.asarray(psi_levels, dtype=complex)
    psi_levels = psi_levels / np.linalg.norm(psi_levels)
    groups = _eigengroups(np.asarray(coupling, dtype=complex))
    if len(groups) > 1:
        gaps = np.diff(sorted(g[0] for g in groups))
        if cfg.strength * gaps.min() < GAP_SIGMA_FACTOR * cfg.width:
            raise RegimeError(
                f"coupling separates envelopes by only "
                f"{cfg.strength * gaps.min() / cfg.width:.2f} pointer widths "
                f"(< {GAP_SIGMA_FACTOR}); use the weak protocol for this "
                f"regime")
    evolved, groups = couple_pointer(psi_levels, coupling, cfg, system_h,
                                     hbar)
    densities, weights = _envelope_densities(evolved, groups, psi_levels)
    if len(groups) > 1:
        overlap = _pairwise_overlap(densities, evolved.pointer_grid.cell)
        if overlap > OVERLAP_THRESHOLD:
            raise RegimeError(
                f"pointer envelopes overlap at {overlap:.2e} "
                f"(> {OVERLAP_THRESHOLD:.0e}); outcomes would be ambiguous")
    rng = rng_stream(seed, TAG_MEASUREMENT, run_key)
    ax = evolved.pointer_grid.axes[0]
    z = float(numerics.sample_density_1d(ax.lo, ax.hi, ax.nodes,
                                         evolved.pointer_marginal(), 1,
                                         rng)[0])
    # the envelope containing the pointer: largest branch density at z
    branch_at_z = [numerics.linear_interp(ax.nodes, d * w, z)
                   for d, w in zip(densities, weights)]
    idx = int(np.argmax(branch_at_z))
    # effective collapse: slice the hybrid state at the pointer position
    post = np.array([numerics.linear_interp(ax.nodes, evolved.amplitudes[k],
                                            z)
                     for k in range(evolved.levels)])
    post = post / np.linalg.norm(post)
    return MeasurementRecord(groups[idx][0], idx, z, weights,
                             psi_levels, post, seed)


def strong_measure_batch(psi_levels, coupling, cfg, runs, seed,
                         system_h=None, hbar=1.0):
    """Many outcome draws sharing one coupling evolution.

    Returns (outcomes array, pointer positions, eigenvalues, Born weights).
    """
    psi_levels = np.asarray(psi_levels, dtype=complex)
    psi_levels = psi_levels / np.linalg.norm(psi_levels)
    evolved, groups = couple_pointer(psi_levels, coupling, cfg, system_h,
                                     hbar)
    densities, weights = _envelope_densities(evolved, groups, psi_levels)
    if len(groups) > 1:
        overlap = _pairwise_overlap(densities, evolved.pointer_grid.cell)
        if overlap > OVERLAP_THRESHOLD:
            raise RegimeError(
                f"pointer envelopes overlap at {overlap:.2e}")
    rng = rng_stream(seed, TAG_MEASUREMENT, 1)
    ax = evolved.pointer_grid.axes[0]
    z = numerics.sample_density_1d(ax.lo, ax.hi, ax.nodes,
                                   evolved.pointer_marginal(), runs, rng)
    branch = np.stack([np.interp(z, ax.nodes, d * w)
                       for d, w in zip(densities, weights)])
    idx = np.argmax(branch, axis=0)
    values = np.array([g[0] for g in groups])
    return values[idx], z, values, weights


# ---------------------------------------------------------------------------
# weak values on gridded system states


@dataclass
class WeakValueEstimate:
    value: float
    stderr: float
    accepted: int
    runs: int
    strength: float
    bin_center: float
    bin_width: float
    diagnostics: dict = field(default_factory=dict)


def _joint_coupled_state(psi, op, cfg, hbar):
    """Evolve psi (x) pointer under mu(t) B (x) p_z with Crank-Nicolson."""
    n = psi.grid.shape[0]
    grid_z = cfg.pointer_grid()
    m = grid_z.shape[0]
    pointer = gaussian_packet(grid_z, cfg.center, cfg.width)
    joint = psi.amplitudes[:, None] * pointer.amplitudes[None, :]
    p_z = pointer_momentum_matrix(grid_z, hbar)
    h_int = sparse.kron(sparse.csr_matrix(op.matrix), p_z).tocsc()
    dt = cfg.dt
    rate = cfg.strength / cfg.window
    eye = sparse.identity(n * m, format="csc", dtype=complex)
    zf = 1j * dt / (2.0 * hbar)
    a = (eye + zf * rate * h_int).tocsc()
    b = (eye - zf * rate * h_int).tocsr()
    lu = splu(a)
    amps = joint.ravel()
    for _ in range(cfg.steps):
        amps = lu.solve(b @ amps)
    return amps.reshape(n, m), grid_z


def weak_value_protocol(psi, op, cfg, bin_center, bin_width, runs, seed,
                        hbar=1.0, compare_strength=None, keep_samples=False):
    """Post-selected weak measurement of B at positions near bin_center.

    Estimates mean(z_B)/mu over runs whose subsequent position readout fell
    in [bin_center - bin_width/2, bin_center + bin_width/2].  When
    compare_strength is given the whole protocol runs again at that coupling
    with common random numbers and both estimates land in diagnostics, so the
    O(mu) bias can be compared across strengths.
    """
    psi = psi.normalize()
    b_scale = float(np.linalg.norm(op.matrix @ psi.amplitudes)
                    * np.sqrt(psi.grid.cell))
    if cfg.strength * b_scale > WEAKNESS_FACTOR * cfg.width:
        raise RegimeError(
            f"coupling mu*|B psi| = {cfg.strength * b_scale:.3f} exceeds "
            f"{WEAKNESS_FACTOR} * pointer width; not in the weak regime")
    rng = rng_stream(seed, TAG_MEASUREMENT, 2)
    u_pointer = rng.random(runs)
    u_system = rng.random(runs)

    def one_pass(strength):
        local = PointerConfig(strength, cfg.width, cfg.center, cfg.window,
                              cfg.steps, cfg.grid, cfg.mass)
        joint, grid_z = _joint_coupled_state(psi, op, local, hbar)
        ax_z = grid_z.axes[0]
        ax_x = psi.grid.axes[0]
        # pointer readout: inverse-CDF through the shared uniforms
        marg_z = np.sum(np.abs(joint) ** 2, axis=0) * psi.grid.cell
        zs, cdf = numerics._wall_cdf(ax_z.lo, ax_z.hi, ax_z.nodes, marg_z)
        z_b = np.interp(u_pointer, cdf, zs)
        # conditional position readout given z_B, chunked for memory
        x_nodes = ax_x.nodes
        z_nodes = ax_z.nodes
        hz = ax_z.spacing
        z_x = np.empty(runs)
        chunk = 20000
        dens = np.abs(joint) ** 2
        for s in range(0, runs, chunk):
            zb = z_b[s:s + chunk]
            fz = np.clip((zb - z_nodes[0]) / hz, 0.0, len(z_nodes) - 1.0)
            iz = np.minimum(fz.astype(int), len(z_nodes) - 2)
            wz = (fz - iz)[:, None]
            rows = (1 - wz) * dens[:, iz].T + wz * dens[:, iz + 1].T
            xs = np.concatenate(([ax_x.lo], x_nodes, [ax_x.hi]))
            rho = np.concatenate([np.zeros((len(zb), 1)), rows,
                                  np.zeros((len(zb), 1))], axis=1)
            seg = 0.5 * (rho[:, 1:] + rho[:, :-1]) * np.diff(xs)[None, :]
            cdfs = np.concatenate([np.zeros((len(zb), 1)),
                                   np.cumsum(seg, axis=1)], axis=1)
            cdfs /= cdfs[:, -1:]
            u = u_system[s:s + chunk]
            off = 2.0 * np.arange(len(zb))
            pos = np.searchsorted((cdfs + off[:, None]).ravel(), u + off,
                                  side="right") - 1
            pos -= np.arange(len(zb)) * cdfs.shape[1]
            pos = np.clip(pos, 0, cdfs.shape[1] - 2)
            c0 = np.take_along_axis(cdfs, pos[:, None], 1)[:, 0]
            c1 = np.take_along_axis(cdfs, pos[:, None] + 1, 1)[:, 0]
            with np.errstate(invalid="ignore", divide="ignore"):
                fr = np.where(c1 > c0, (u - c0) / (c1 - c0), 0.0)
            z_x[s:s + chunk] = xs[pos] + fr * (xs[pos + 1] - xs[pos])
        accept = np.abs(z_x - bin_center) <= 0.5 * bin_width
        n_acc = int(accept.sum())
        if n_acc == 0:
            raise EvaluationError(
                f"no runs landed in the post-selection bin "
                f"(acceptance 0/{runs}); widen the bin or add runs")
        sel = z_b[accept]
        est = float(sel.mean() / strength)
        se = float(sel.std(ddof=1) / strength / np.sqrt(n_acc))
        return est, se, n_acc, (z_b, z_x, accept)

    est, se, n_acc, samples = one_pass(cfg.strength)
    diagnostics = {"estimates": {cfg.strength: est}}
    if keep_samples:
        diagnostics["samples"] = {"pointer": samples[0],
                                  "position": samples[1],
                                  "accepted": samples[2]}
    if compare_strength is not None:
        est2, se2, n2, _ = one_pass(compare_strength)
        diagnostics["estimates"][compare_strength] = est2
        diagnostics["stderr"] = {cfg.strength: se, compare_strength: se2}
    return WeakValueEstimate(est, se, n_acc, runs, cfg.strength,
                             bin_center, bin_width, diagnostics)


# ---------------------------------------------------------------------------
# generalized (Kraus) measurements


@dataclass
class KrausFamily:
    """Measurement operators {M_m} with sum M^dag M = 1."""

    operators: tuple
    labels: tuple = None

    def __post_init__(self):
        ops = tuple(np.asarray(m, dtype=complex) for m in self.operators)
        if not ops:
            raise ConfigurationError("Kraus family cannot be empty")
        d = ops[0].shape
        if any(m.shape != d for m in ops):
            raise ConfigurationError("Kraus operators must share one shape")
        self.operators = ops
        if self.labels is None:
            self.labels = tuple(range(len(ops)))
        total = sum(m.conj().T @ m for m in ops)
        defect = np.abs(total - np.eye(d[0])).max()
        if defect > KRAUS_TOL:
            raise ConfigurationError(
                f"Kraus completeness defect {defect:.2e} > {KRAUS_TOL:.0e}")

    @property
    def dim(self):
        return self.operators[0].shape[0]

    def probabilities(self, psi):
        psi = np.asarray(psi, dtype=complex)
        return np.array([float(np.linalg.norm(m @ psi) ** 2)
                         for m in self.operators])


def generalized_measure(psi_levels, kraus, seed, run_key=0):
    """Sample an outcome m with P_m = ||M_m psi||^2 and collapse."""
    psi = np.asarray(psi_levels, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    probs = kraus.probabilities(psi)
    probs = probs / probs.sum()
    rng = rng_stream(seed, TAG_MEASUREMENT, 3, run_key)
    idx = int(rng.choice(len(probs), p=probs))
    branch = kraus.operators[idx] @ psi
    post = branch / np.linalg.norm(branch)
    return MeasurementRecord(float(kraus.labels[idx]), idx, np.nan, probs,
                             psi, post, seed)
