"""Conditional wavefunctions: slices of a 2D state along a trajectory.

For a two-degree-of-freedom state Psi(x, y, t) and a Bohmian trajectory
(x(t), y(t)) of the joint flow, the conditional wavefunction of the x
subsystem is the raw slice

    psi(x, t) = Psi(x, y(t), t),

kept unnormalized.  It obeys a 1D Schrodinger-like equation in which the
environment enters through a complex correlation potential with three
channels, each a function of x built from the full 2D field and evaluated at
y = y(t):

    kinetic    = -(m_y / 2) v_y^2
    curvature  = -(hbar^2 / 2 m_y) (d_y^2 sqrt(rho)) / sqrt(rho)
    divergence = -(hbar / 2) d_y v_y          (imaginary channel)

so Re = kinetic + curvature and Im = divergence.  Because the slice follows
the actual trajectory rate dy/dt rather than the local field v_y(x, y(t)),
the exact drive also needs the advection residue

    drift(x) = (v_y(x, y(t)) - dy/dt) * (m_y v_y(x, y(t))
               - i hbar (d_y sqrt(rho)) / sqrt(rho)),

which vanishes identically for product states and at x = x(t).  Evolving the
slice with the three channels alone reproduces it only up to that residue;
the pipeline therefore drives with channels + drift by default.  Slices are
compared after projecting out one global complex factor (least-squares fit).
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, RangeError, EvaluationError
from . import numerics
from .trajectories import (RHO_FLOOR_FRACTION, velocity_field,
                           sample_initial, integrate, _rk4_step, _mean_field)
from .wavefield import Grid, Wavefunction, CrankNicolson, Hamiltonian

STENCIL_MARGIN = 3  # nodes needed on each side of y for the 5-point stencil


@dataclass
class ConditionalWavefunction:
    """Raw (unnormalized) slice of a 2D state at the environment position y."""

    grid: Grid          # 1D subsystem grid
    amplitudes: np.ndarray
    y: float
    time: float = 0.0
    label: int = 0
    raw: bool = True

    def norm(self):
        return float(np.sqrt(numerics.norm_sq(self.amplitudes,
                                              self.grid.cell)))

    def normalized_amplitudes(self):
        n = self.norm()
        if n == 0:
            raise EvaluationError("conditional slice has zero norm")
        return self.amplitudes / n


@dataclass
class CorrelationPotential:
    """Channel decomposition of the complex correlation potential."""

    grid: Grid
    kinetic: np.ndarray      # -(m_y/2) v_y^2
    curvature: np.ndarray    # -(hbar^2/2 m_y) (d_y^2 sqrt rho)/sqrt rho
    divergence: np.ndarray   # -(hbar/2) d_y v_y  (imaginary channel)
    drift: np.ndarray        # complex advection residue
    flags: np.ndarray
    y: float
    time: float = 0.0

    def values(self):
        """The three printed channels recombined: Re + i*Im."""
        return self.kinetic + self.curvature + 1j * self.divergence

    def exact_values(self):
        """Channels plus the advection residue; drives the slice exactly."""
        return self.values() + self.drift

    def dispersion(self):
        """Max deviation of the three-channel value from its spatial mean.

        A spatially uniform complex offset only changes the slice by a global
        factor, so this is the part of the correlation potential that can
        make conditional dynamics differ from unitary subsystem dynamics.
        """
        w = self.values()[~self.flags]
        if w.size == 0:
            raise EvaluationError("all correlation nodes flagged")
        return float(np.max(np.abs(w - w.mean())))


def _env_axis_quantities(psi2d, y, m_y, hbar, floor):
    """Per-x-node environment-axis derivatives, interpolated at y.

    Returns (v_y, dv_y/dy, curvature of sqrt rho, d_y sqrt rho over sqrt rho,
    flags) as arrays over the subsystem nodes.
    """
    grid = psi2d.grid
    if grid.ndim != 2:
        raise ConfigurationError("conditional slicing needs a 2D state")
    ay = grid.axes[1]
    hy = ay.spacing
    frac = (y - ay.nodes[0]) / hy
    j = int(np.floor(frac))
    if j - (STENCIL_MARGIN - 1) < 0 or j + STENCIL_MARGIN > ay.points - 1:
        raise RangeError(
            f"environment position y={y:.4g} too close to the wall for the "
            f"derivative stencils")
    w = frac - j
    amps = psi2d.amplitudes
    rho = psi2d.density()
    root = np.sqrt(rho)
    flags_grid = numerics.low_density_mask(rho, floor)

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        dlog = numerics.first_derivative(amps, hy, axis=1) / amps
        v = (hbar / m_y) * np.imag(dlog)
        droot = np.real(dlog)  # (d_y sqrt rho)/sqrt rho
        dv = numerics.first_derivative(v, hy, axis=1)
        curv = numerics.second_derivative_5pt(root, hy, axis=1) / root

    def pick(fld):
        col = (1.0 - w) * fld[:, j] + w * fld[:, j + 1]
        return col

    flags = flags_grid[:, j] | flags_grid[:, j + 1]
    fields = []
    for fld in (v, dv, curv, droot):
        fld = np.where(np.isfinite(fld), fld, 0.0)
        fields.append(pick(fld))
    return (*fields, flags)


def slice_cwf(psi2d, y, label=0):
    """Raw conditional slice Psi(x, y, t), linear interpolation along y."""
    grid = psi2d.grid
    if grid.ndim != 2:
        raise ConfigurationError("conditional slicing needs a 2D state")
    ay = grid.axes[1]
    if not (ay.lo < y < ay.hi):
        raise RangeError(f"slice position y={y:.4g} outside the domain")
    hy = ay.spacing
    frac = np.clip((y - ay.nodes[0]) / hy, 0.0, ay.points - 1.0)
    j = min(int(frac), ay.points - 2)
    w = frac - j
    amps = (1.0 - w) * psi2d.amplitudes[:, j] + w * psi2d.amplitudes[:, j + 1]
    return ConditionalWavefunction(Grid((grid.axes[0],)), amps, y,
                                   psi2d.time, label)


def correlation_potential(psi2d, y, y_rate, masses, hbar=1.0,
                          floor=RHO_FLOOR_FRACTION, min_valid_fraction=0.2):
    """Correlation-potential channels at environment position y.

    y_rate is the actual trajectory rate dy/dt used for the advection
    residue; pass the sliced field value v_y(x(t), y(t)) from the joint flow.
    """
    m_y = masses[1]
    v, dv, curv, droot, flags = _env_axis_quantities(psi2d, y, m_y, hbar,
                                                     floor)
    valid = 1.0 - flags.mean()
    if valid < min_valid_fraction:
        raise EvaluationError(
            f"only {100 * valid:.1f}% of subsystem nodes have density above "
            f"the floor at y={y:.4g}")
    kinetic = -0.5 * m_y * v**2
    curvature = (-hbar**2 / (2.0 * m_y)) * curv
    divergence = -0.5 * hbar * dv
    drift = (v - y_rate) * (m_y * v - 1j * hbar * droot)
    grid1d = Grid((psi2d.grid.axes[0],))
    return CorrelationPotential(grid1d, kinetic, curvature, divergence,
                                drift, flags, y, psi2d.time)


def evolve_cwf(cwf, effective_potential, mass, dt, hbar=1.0):
    """One Crank-Nicolson step of the slice under a complex potential.

    effective_potential is the midpoint value of U_x + U_xy(., y(t)) plus the
    correlation drive (three channels, optionally + drift); because it is
    complex the step is not norm preserving and the slice stays raw.
    """
    n = cwf.grid.shape[0]
    h = cwf.grid.spacings[0]
    coef = -hbar**2 / (2.0 * mass * h * h)
    z = 1j * dt / (2.0 * hbar)
    diag = -2.0 * coef + np.asarray(effective_potential, dtype=complex)
    # tridiagonal A psi' = B psi via the Thomas-style banded solve
    from scipy.linalg import solve_banded
    ab = np.zeros((3, n), dtype=complex)
    ab[0, 1:] = z * coef
    ab[1, :] = 1.0 + z * diag
    ab[2, :-1] = z * coef
    rhs = (1.0 - z * diag) * cwf.amplitudes
    rhs[:-1] -= z * coef * cwf.amplitudes[1:]
    rhs[1:] -= z * coef * cwf.amplitudes[:-1]
    out = solve_banded((1, 1), ab, rhs)
    return ConditionalWavefunction(cwf.grid, out, cwf.y, cwf.time + dt,
                                   cwf.label, raw=True)


@dataclass
class EwfDiagnostic:
    """Effective-wavefunction check over an ensemble of conditioning paths."""

    correlation_dispersion: float   # max_x,xi |W - mean_x W| / energy scale
    coupling_dispersion: float      # max_x std_xi U_xy(x, y_xi) / energy scale
    energy_scale: float
    correlation_threshold: float
    coupling_threshold: float

    @property
    def is_effective(self):
        return (self.correlation_dispersion <= self.correlation_threshold
                and self.coupling_dispersion <= self.coupling_threshold)


def ewf_diagnostic(correlations, couplings, energy_scale,
                   correlation_threshold=0.05, coupling_threshold=0.05):
    """Decide whether the conditional slices behave as effective states.

    correlations: CorrelationPotential per conditioning trajectory.
    couplings: per-trajectory arrays U_xy(x, y_xi(t)) on the subsystem nodes.
    Both metrics are normalized by the supplied energy scale.
    """
    if energy_scale <= 0:
        raise ConfigurationError("energy scale must be positive")
    w_disp = max(c.dispersion() for c in correlations) / energy_scale
    couplings = np.asarray(couplings, dtype=float)
    if couplings.ndim != 2:
        raise ConfigurationError("couplings must be (trajectories, nodes)")
    u_disp = float(np.max(couplings.std(axis=0))) / energy_scale
    return EwfDiagnostic(w_disp, u_disp, energy_scale,
                         correlation_threshold, coupling_threshold)


@dataclass
class PipelineResult:
    """Per-trajectory outcome of the streaming conditional pipeline."""

    times: np.ndarray
    paths: np.ndarray            # (T, n_traj, 2) joint trajectory positions
    errors: np.ndarray           # (T, n_traj) sliced-vs-evolved rel L2 error
    norms: np.ndarray            # (T, n_traj) raw slice norms
    evolved: list                # final ConditionalWavefunction per trajectory
    sliced: list                 # final slice per trajectory
    correlations: list           # CorrelationPotential per trajectory (final)
    couplings: np.ndarray        # (n_traj, nx) final U_xy(x, y_xi)
    flags: np.ndarray            # (n_traj,) any flagged evaluation
    stored: dict                 # optional per-store-step tables


def conditional_pipeline(psi0, ham, dt, steps, n_traj, seed,
                         include_drift=True, store_every=0,
                         floor=RHO_FLOOR_FRACTION):
    """Full conditional-dynamics run on a 2D scenario.

    Evolves the 2D state with Crank-Nicolson, advances n_traj joint Bohmian
    trajectories with RK4, and for each one drives the conditional slice with
    the correlation potential (channels + drift when include_drift), comparing
    it against the directly sliced state after a global-factor fit.  Streaming:
    only two consecutive 2D fields are held in memory.
    """
    if psi0.grid.ndim != 2:
        raise ConfigurationError("conditional pipeline needs a 2D state")
    masses = ham.spec.masses
    hbar = ham.hbar
    stepper = CrankNicolson(ham, dt)
    u_full = ham.potential
    ux_col = ham.spec.potential.u_x
    u_x = (ux_col(psi0.grid.nodes(0)) if ux_col is not None
           else np.zeros(psi0.grid.shape[0]))

    ens = sample_initial(psi0, n_traj, seed)
    x = ens.positions[0].copy()

    psi = psi0
    v_now = velocity_field(psi, masses, hbar, floor)
    cwfs, errors_t, norms_t = [], [], []
    times = [psi.time]
    paths = [x.copy()]
    flags = np.zeros(n_traj, dtype=bool)
    stored = {"times": [], "tables": []}

    def coupling_at(xi_positions):
        if ham.spec.potential.u_xy is None:
            return np.zeros((n_traj, psi0.grid.shape[0]))
        xs = psi0.grid.nodes(0)
        return np.stack([ham.spec.potential.u_xy(xs, np.full_like(xs, p[1]))
                         for p in xi_positions])

    def drive_field(state, pos, rate):
        corr = correlation_potential(state, pos[1], rate, masses, hbar, floor)
        u_xy_col = _potential_column(u_full, state.grid, pos[1])
        w = corr.exact_values() if include_drift else corr.values()
        return u_xy_col + w, corr

    def _potential_column(u_grid, grid, y):
        ay = grid.axes[1]
        frac = np.clip((y - ay.nodes[0]) / ay.spacing, 0.0, ay.points - 1.0)
        j = min(int(frac), ay.points - 2)
        w = frac - j
        return (1.0 - w) * u_grid[:, j] + w * u_grid[:, j + 1]

    # initial slices and drives
    for k in range(n_traj):
        cwfs.append(slice_cwf(psi, x[k, 1], label=k))
    errors_t.append(np.zeros(n_traj))
    norms_t.append(np.array([c.norm() for c in cwfs]))
    corr_now = []
    rates0 = v_now.at(x)
    for k in range(n_traj):
        drive, corr = drive_field(psi, x[k], rates0[k, 1])
        corr_now.append((drive, corr))

    for i in range(steps):
        psi_next = stepper.step(psi)
        v_next = velocity_field(psi_next, masses, hbar, floor)
        x_new = _rk4_step(x, dt, v_now, _mean_field(v_now, v_next), v_next)
        rates = v_next.at(x_new)
        errs = np.empty(n_traj)
        nrms = np.empty(n_traj)
        corr_next = []
        for k in range(n_traj):
            drive_new, corr_new = drive_field(psi_next, x_new[k],
                                              rates[k, 1])
            drive_mid = 0.5 * (corr_now[k][0] + drive_new)
            cwfs[k] = evolve_cwf(cwfs[k], drive_mid, masses[0], dt, hbar)
            cwfs[k].y = x_new[k, 1]
            target = slice_cwf(psi_next, x_new[k, 1], label=k)
            errs[k] = numerics.global_factor_error(cwfs[k].amplitudes,
                                                   target.amplitudes)
            nrms[k] = target.norm()
            flags[k] |= corr_new.flags.any()
            corr_next.append((drive_new, corr_new))
        psi, v_now, x, corr_now = psi_next, v_next, x_new, corr_next
        errors_t.append(errs)
        norms_t.append(nrms)
        times.append(psi.time)
        paths.append(x.copy())
        if store_every and (i + 1) % store_every == 0:
            stored["times"].append(psi.time)
            stored["tables"].append(
                [(cwfs[k].amplitudes.copy(),
                  corr_now[k][1].values().copy()) for k in range(n_traj)])

    final_slices = [slice_cwf(psi, x[k, 1], label=k) for k in range(n_traj)]
    return PipelineResult(
        times=np.asarray(times),
        paths=np.asarray(paths),
        errors=np.asarray(errors_t),
        norms=np.asarray(norms_t),
        evolved=cwfs,
        sliced=final_slices,
        correlations=[c for _, c in corr_now],
        couplings=coupling_at(x),
        flags=flags,
        stored=stored,
    )
