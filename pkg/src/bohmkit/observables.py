"""Local expectation values along quantum trajectories and derived estimators.

For an operator B and state psi the complex local field is

    C(x) = (B psi)(x) / psi(x),        E(x) = Re C(x),

so that <B> = integral rho * C dx exactly, and the trajectory-ensemble mean of
E(x_t) converges to <B> in quantum equilibrium.  For B = momentum the real
part equals m*v at machine level because the stencils are shared with the
velocity field; for B = H it equals kinetic + potential + quantum potential
up to stencil truncation.

Derived quantities built on the same fields:

  * two-time correlations  mean_xi E_B(x_t2) * E_F(x_t1)
  * trajectory work        W = E_H(x_t2, t2) - E_H(x_t1, t1)  (telescopes)
  * dwell time             per-trajectory time-in-region vs the occupancy
                           integral of |psi|^2
  * total current          1D Ramo-Shockley reduction I = (e/L) v inside the
                           device, with a direct Gauss-law surface oracle
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import ConfigurationError, EvaluationError
from . import numerics
from .seeds import rng_stream
from .trajectories import velocity_field, quantum_potential, RHO_FLOOR_FRACTION

HERMITICITY_TOL = 1e-10


@dataclass
class OperatorRep:
    """An observable as an action on gridded or discrete-level states."""

    kind: str
    matrix: object          # sparse or dense square matrix on the flat state
    grid: object = None     # None for level operators
    label: str = ""

    def apply(self, amps):
        flat = self.matrix @ np.ravel(amps)
        return flat.reshape(np.shape(amps))

    def expectation(self, amps, cell=1.0):
        return complex(cell * np.vdot(np.ravel(amps),
                                      self.matrix @ np.ravel(amps)))


def _check_hermitian(matrix, label, n, seed=1234):
    rng = rng_stream(seed, 0)
    for _ in range(3):
        a = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        b = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        lhs = np.vdot(a, matrix @ b)
        rhs = np.conj(np.vdot(b, matrix @ a))
        scale = max(1.0, abs(lhs))
        if abs(lhs - rhs) / scale > HERMITICITY_TOL:
            raise ConfigurationError(
                f"operator '{label}' is not Hermitian "
                f"(defect {abs(lhs - rhs) / scale:.2e})")


def position_operator(grid, fn=None, label="x"):
    """Diagonal operator f(x) (default: coordinate of the first axis)."""
    if grid.ndim == 1:
        coords = grid.nodes(0)
        diag = coords if fn is None else np.asarray(fn(coords), dtype=float)
    else:
        meshes = grid.meshes()
        diag = meshes[0] if fn is None else np.asarray(fn(*meshes),
                                                       dtype=float)
    mat = sparse.diags(np.ravel(diag)).tocsr()
    op = OperatorRep("position", mat, grid, label)
    _check_hermitian(mat, label, mat.shape[0])
    return op


def momentum_operator(grid, axis=0, hbar=1.0, label="p"):
    """-i hbar d/dx_axis with the shared central-difference stencil."""
    n = grid.shape[axis]
    h = grid.spacings[axis]
    off = np.full(n - 1, 1.0 / (2.0 * h))
    d1 = sparse.diags([-off, off], [-1, 1], format="csr")
    mat = (-1j * hbar) * d1
    if grid.ndim == 2:
        eye0 = sparse.identity(grid.shape[0])
        eye1 = sparse.identity(grid.shape[1])
        mat = (sparse.kron(mat, eye1) if axis == 0
               else sparse.kron(eye0, mat)).tocsr()
    op = OperatorRep("momentum", mat, grid, label)
    _check_hermitian(op.matrix, label, op.matrix.shape[0])
    return op


def kinetic_operator(grid, masses, hbar=1.0, label="T"):
    from .wavefield import _laplacian_1d
    mat = None
    for axis, (m, h, n) in enumerate(zip(masses, grid.spacings, grid.shape)):
        lap = _laplacian_1d(n, h) * (-hbar**2 / (2.0 * m))
        if grid.ndim == 1:
            term = lap
        elif axis == 0:
            term = sparse.kron(lap, sparse.identity(grid.shape[1]))
        else:
            term = sparse.kron(sparse.identity(grid.shape[0]), lap)
        mat = term if mat is None else mat + term
    op = OperatorRep("kinetic", mat.tocsr(), grid, label)
    _check_hermitian(op.matrix, label, op.matrix.shape[0])
    return op


def hamiltonian_operator(ham, label="H"):
    if ham.absorbing:
        raise ConfigurationError(
            "local expectations need a Hermitian Hamiltonian; "
            "absorbing ramps are excluded")
    op = OperatorRep("hamiltonian", ham.matrix, ham.grid, label)
    _check_hermitian(op.matrix, label, op.matrix.shape[0])
    return op


def level_operator(matrix, label="B"):
    matrix = np.asarray(matrix, dtype=complex)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ConfigurationError("level operator must be a square matrix")
    op = OperatorRep("level", matrix, None, label)
    _check_hermitian(matrix, label, matrix.shape[0])
    return op


@dataclass
class LocalExpectationField:
    """C(x) = (B psi)/psi on the grid, with low-density flags."""

    grid: object
    values: np.ndarray       # complex C(x)
    flags: np.ndarray
    operator: str
    time: float = 0.0

    @property
    def real_part(self):
        return self.values.real

    def at(self, positions):
        """Real part at arbitrary positions plus per-evaluation flags.

        An evaluation is flagged when any node of its interpolation cell is
        flagged.
        """
        positions = np.atleast_2d(positions)
        g = self.grid
        if g.ndim == 1:
            x = positions[:, 0]
            vals = numerics.linear_interp(g.nodes(0), self.real_part, x)
            fl = np.interp(x, g.nodes(0), self.flags.astype(float)) > 0
        else:
            xs, ys = g.nodes(0), g.nodes(1)
            vals = numerics.bilinear_interp(xs, ys, self.real_part,
                                            positions[:, 0], positions[:, 1])
            fl = numerics.bilinear_interp(xs, ys, self.flags.astype(float),
                                          positions[:, 0],
                                          positions[:, 1]) > 0
        return vals, fl


def local_expectation(psi, op, floor=RHO_FLOOR_FRACTION):
    if op.grid is not None and op.grid.shape != psi.grid.shape:
        raise ConfigurationError("operator grid does not match the state")
    rho = psi.density()
    flags = numerics.low_density_mask(rho, floor)
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = op.apply(psi.amplitudes) / psi.amplitudes
    raw = np.where(np.isfinite(raw), raw, 0.0)
    filled = (numerics.fill_from_nearest(raw.real, flags)
              + 1j * numerics.fill_from_nearest(raw.imag, flags))
    return LocalExpectationField(psi.grid, filled, flags, op.label, psi.time)


@dataclass
class EstimateRecord:
    value: float
    stderr: float
    count: int
    flagged: int

    def __iter__(self):
        return iter((self.value, self.stderr, self.count, self.flagged))


def _mean_record(samples, flags):
    ok = ~flags
    if not ok.any():
        raise EvaluationError("every ensemble evaluation was flagged")
    vals = samples[ok]
    se = vals.std(ddof=1) / np.sqrt(len(vals)) if len(vals) > 1 else np.inf
    return EstimateRecord(float(vals.mean()), float(se), int(len(vals)),
                          int(flags.sum()))


def ensemble_expectation(ensemble, fld, step):
    """Trajectory-ensemble mean of the local field at one stored step."""
    vals, fl = fld.at(ensemble.at(step))
    return _mean_record(vals, fl | ensemble.failed)


def quadrature_expectation(psi, op):
    """<B> by grid quadrature; the complex local field integrates to this."""
    return op.expectation(psi.amplitudes, psi.grid.cell)


def local_field_integral(psi, fld):
    """integral rho * C dx; equals <B> up to the flagged-node fill."""
    rho = psi.density()
    return complex(psi.grid.cell * np.sum(rho * fld.values))


def two_time_correlation(ensemble, field_2, field_1, step_2, step_1):
    """mean over trajectories of E_B(x_t2) * E_F(x_t1)."""
    b_vals, b_fl = field_2.at(ensemble.at(step_2))
    f_vals, f_fl = field_1.at(ensemble.at(step_1))
    return _mean_record(b_vals * f_vals, b_fl | f_fl | ensemble.failed)


def trajectory_work(ensemble, field_end, field_start, step_end, step_start):
    """Per-trajectory work: energy field at the endpoint minus the start.

    Summing over adjacent windows telescopes exactly because each endpoint
    evaluation is a single shared number.
    """
    e2, fl2 = field_end.at(ensemble.at(step_end))
    e1, fl1 = field_start.at(ensemble.at(step_start))
    return e2 - e1, fl2 | fl1 | ensemble.failed


@dataclass
class RegionSpec:
    """Axis-aligned interval (1D) used for dwell times and devices."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ConfigurationError("region needs hi > lo")

    @property
    def length(self):
        return self.hi - self.lo

    def contains(self, x):
        return (x >= self.lo) & (x <= self.hi)

    def check_overlaps(self, grid, axis=0):
        ax = grid.axes[axis]
        if self.hi <= ax.lo or self.lo >= ax.hi:
            raise ConfigurationError(
                f"region [{self.lo}, {self.hi}] does not intersect the "
                f"domain [{ax.lo}, {ax.hi}]")


@dataclass
class DwellResult:
    per_trajectory: np.ndarray
    trajectory_mean: EstimateRecord
    occupancy_integral: float
    final_occupancy_fraction: float
    warnings: list


def dwell_time(ensemble, region, history=None):
    """Time spent inside the region, trapezoid on the crossing indicator.

    The indicator is sampled at the stored steps, so the estimate carries an
    O(dt) bias near entry and exit.  When a history is supplied the
    independent occupancy route  integral dt integral_Gamma |psi|^2 dx  and a
    horizon check are evaluated as well.
    """
    region.check_overlaps(_grid_of(ensemble, history))
    times = ensemble.times
    inside = region.contains(ensemble.positions[:, :, 0]).astype(float)
    dt = np.diff(times)
    tau = 0.5 * ((inside[1:] + inside[:-1]) * dt[:, None]).sum(axis=0)
    record = _mean_record(tau, ensemble.failed)

    occupancy = np.nan
    final_fraction = np.nan
    warnings = []
    if history is not None:
        xs = history.grid.nodes(0)
        h = history.grid.cell
        # each node owns the cell [x - h/2, x + h/2]; weighting nodes by the
        # clipped overlap keeps the integral honest when the region edges
        # fall between nodes (a whole-node mask quantizes the region and
        # biases the comparison against the trajectory route by ~h/length)
        overlap = (np.minimum(xs + 0.5 * h, region.hi)
                   - np.maximum(xs - 0.5 * h, region.lo))
        frac = np.clip(overlap, 0.0, None) / h
        weights = np.array([h * np.sum(frac * np.abs(history.amps[i]) ** 2)
                            for i in range(len(history))])
        occupancy = float(np.trapezoid(weights, history.times))
        peak = weights.max()
        final_fraction = float(weights[-1] / peak) if peak > 0 else 0.0
        if final_fraction > 0.01:
            warnings.append(
                f"region still holds {100 * final_fraction:.1f}% of peak "
                f"occupancy at the final time; dwell horizon too short")
    return DwellResult(tau, record, occupancy, final_fraction, warnings)


def _grid_of(ensemble, history):
    if history is not None:
        return history.grid
    # synthesize a loose domain check from the positions themselves
    from .wavefield import Grid
    lo = float(ensemble.positions[:, :, 0].min()) - 1.0
    hi = float(ensemble.positions[:, :, 0].max()) + 1.0
    return Grid.line(lo, hi, 16)


@dataclass
class CurrentResult:
    times: np.ndarray
    per_trajectory: np.ndarray   # (T, N) instantaneous currents
    mean: np.ndarray             # ensemble mean series
    charge_collected: np.ndarray  # per-trajectory integral of I dt


def total_current(ensemble, device, charge=1.0, velocities=None,
                  history=None, masses=None, hbar=1.0):
    """Ramo-Shockley reduction: I = (charge / L) v while inside the device.

    Velocities come either from a supplied (T, N) array (synthetic
    trajectories) or from the stored field history evaluated along the
    ensemble.
    """
    if velocities is None:
        if history is None or masses is None:
            raise ConfigurationError(
                "total_current needs velocities or (history, masses)")
        velocities = np.empty(ensemble.positions.shape[:2])
        for i in range(len(history)):
            vf = velocity_field(history.psi(i), masses, hbar)
            velocities[i] = vf.at(ensemble.at(i))[:, 0]
    inside = device.contains(ensemble.positions[:, :, 0])
    per = np.where(inside, (charge / device.length) * velocities, 0.0)
    mean = per.mean(axis=1)
    collected = np.trapezoid(per, ensemble.times, axis=0)
    return CurrentResult(ensemble.times, per, mean, collected)


def gauss_law_current(times, path, device, surface, charge=1.0,
                      permittivity=1.0):
    """Direct-definition current at a surface inside the device.

    Solves the 1D Gauss law for a point charge between grounded contacts at
    the device edges: the field at the surface is -q(L-x)/(eps L) when the
    charge sits right of the surface and q x/(eps L) when left.  The current
    is the displacement term eps dE/dt plus the conduction spike at
    crossings, evaluated per step; away from crossings the spikes vanish and
    the result should match the Ramo-Shockley value.
    """
    if not (device.lo < surface < device.hi):
        raise ConfigurationError("surface must lie inside the device")
    x = np.asarray(path, dtype=float)
    L = device.length
    rel = x - device.lo
    inside = device.contains(x)
    e_surf = np.where(x > surface,
                      -charge * (L - rel) / (permittivity * L),
                      charge * rel / (permittivity * L))
    e_surf = np.where(inside, e_surf, 0.0)
    dt = np.diff(times)
    displacement = permittivity * np.diff(e_surf) / dt
    # a sample exactly on the surface belongs to the left side, matching the
    # field convention above, so a pass through it counts once
    side = x > surface
    crossed = side[1:] != side[:-1]
    direction = np.sign(x[1:] - x[:-1])
    conduction = np.where(crossed & inside[1:] & inside[:-1],
                          charge * direction / dt, 0.0)
    mid_times = 0.5 * (times[1:] + times[:-1])
    return mid_times, displacement + conduction
