"""Bohmian velocity fields, quantum potential and trajectory ensembles.

The guidance velocity on axis k is

    v_k = (hbar / m_k) Im{ (d_k psi) / psi },

built from the same central differences as the propagator, so it never needs
phase unwrapping.  The quantum potential is

    Q = - sum_k (hbar^2 / 2 m_k) (d_k^2 sqrt(rho)) / sqrt(rho).

Nodes where rho <= rho_floor * max(rho) are flagged; their field values are
replaced by the value at the nearest valid node so interpolation near nodal
regions stays finite.  Initial positions are drawn from |psi|^2 by inverse-CDF
sampling (marginal then conditional in 2D), and trajectories advance with RK4
on linear/bilinear velocity interpolation, using the mean of the two bracketing
stored fields as the midpoint field.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from . import numerics
from .seeds import rng_stream, TAG_SAMPLING

RHO_FLOOR_FRACTION = 1e-12


@dataclass
class VelocityField:
    grid: object
    components: tuple  # one array per axis, flagged nodes already filled
    flags: np.ndarray  # True where the density sat at or below the floor
    time: float = 0.0

    def at(self, positions):
        """Velocity components at arbitrary positions (clamped to the hull)."""
        positions = np.atleast_2d(positions)
        if self.grid.ndim == 1:
            x = positions[:, 0]
            return numerics.linear_interp(self.grid.nodes(0),
                                          self.components[0], x)[:, None]
        xs, ys = self.grid.nodes(0), self.grid.nodes(1)
        out = np.empty_like(positions, dtype=float)
        for k, comp in enumerate(self.components):
            out[:, k] = numerics.bilinear_interp(xs, ys, comp,
                                                 positions[:, 0],
                                                 positions[:, 1])
        return out


@dataclass
class QuantumPotentialField:
    grid: object
    values: np.ndarray
    flags: np.ndarray
    time: float = 0.0


def _flagged_fill(raw, flags):
    raw = np.where(np.isfinite(raw), raw, 0.0)
    return numerics.fill_from_nearest(raw, flags)


def velocity_field(psi, masses, hbar=1.0, floor=RHO_FLOOR_FRACTION):
    rho = psi.density()
    flags = numerics.low_density_mask(rho, floor)
    comps = []
    for axis, (m, h) in enumerate(zip(masses, psi.grid.spacings)):
        with np.errstate(divide="ignore", invalid="ignore"):
            raw = (hbar / m) * np.imag(
                numerics.first_derivative(psi.amplitudes, h, axis=axis)
                / psi.amplitudes)
        comps.append(_flagged_fill(raw, flags))
    return VelocityField(psi.grid, tuple(comps), flags, psi.time)


def quantum_potential(psi, masses, hbar=1.0, floor=RHO_FLOOR_FRACTION):
    rho = psi.density()
    flags = numerics.low_density_mask(rho, floor)
    root = np.sqrt(rho)
    total = np.zeros(psi.grid.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        for axis, (m, h) in enumerate(zip(masses, psi.grid.spacings)):
            total += (-hbar**2 / (2.0 * m)) * (
                numerics.second_derivative(root, h, axis=axis) / root)
    return QuantumPotentialField(psi.grid, _flagged_fill(total, flags),
                                 flags, psi.time)


@dataclass
class Ensemble:
    """Quantum-trajectory positions, times x members x axes."""

    times: np.ndarray
    positions: np.ndarray  # (T, N, d)
    seed: int
    source_id: str = ""
    failed: np.ndarray = field(default=None)
    reflections: int = 0

    def __post_init__(self):
        if self.failed is None:
            self.failed = np.zeros(self.positions.shape[1], dtype=bool)

    @property
    def count(self):
        return self.positions.shape[1]

    @property
    def ndim(self):
        return self.positions.shape[2]

    def at(self, step):
        return self.positions[step]


def sample_initial(psi, count, seed):
    """Quantum-equilibrium ensemble: positions drawn from |psi|^2."""
    if count <= 0:
        raise ConfigurationError("ensemble count must be positive")
    rng = rng_stream(seed, TAG_SAMPLING)
    rho = psi.density()
    g = psi.grid
    if g.ndim == 1:
        ax = g.axes[0]
        pts = numerics.sample_density_1d(ax.lo, ax.hi, ax.nodes, rho,
                                         count, rng)[:, None]
    else:
        ax, ay = g.axes
        pts = numerics.sample_density_2d((ax.lo, ax.hi), (ay.lo, ay.hi),
                                         ax.nodes, ay.nodes, rho, count, rng)
    return Ensemble(np.array([psi.time]), pts[None, :, :], seed,
                    source_id=psi.content_id())


def _reflect(positions, grid):
    """Fold overshoots back inside the walls; returns the event count."""
    events = 0
    for k, ax in enumerate(grid.axes):
        col = positions[:, k]
        low = col < ax.lo
        high = col > ax.hi
        events += int(low.sum() + high.sum())
        col[low] = 2.0 * ax.lo - col[low]
        col[high] = 2.0 * ax.hi - col[high]
        np.clip(col, ax.lo, ax.hi, out=col)
    return events


def _rk4_step(x, dt, v0, vm, v1):
    k1 = v0.at(x)
    k2 = vm.at(x + 0.5 * dt * k1)
    k3 = vm.at(x + 0.5 * dt * k2)
    k4 = v1.at(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _mean_field(va, vb):
    comps = tuple(0.5 * (a + b) for a, b in zip(va.components, vb.components))
    return VelocityField(va.grid, comps, va.flags | vb.flags,
                         0.5 * (va.time + vb.time))


def integrate(ensemble, history, masses, hbar=1.0, substeps=1,
              floor=RHO_FLOOR_FRACTION):
    """Advance every trajectory through all stored field steps.

    The stored snapshot spacing sets the velocity-field update interval;
    substeps > 1 subdivides each interval with linearly time-interpolated
    fields.  Trajectories remain inside the grid domain; wall overshoots are
    reflected and counted, non-finite updates mark a trajectory failed and
    freeze it.
    """
    if len(history) < 2:
        raise ConfigurationError("history must contain at least two snapshots")
    grid = history.grid
    x = ensemble.positions[-1].copy()
    out = [x.copy()]
    times = [history.times[0]]
    failed = ensemble.failed.copy()
    reflections = ensemble.reflections
    v_next = velocity_field(history.psi(0), masses, hbar, floor)
    for i in range(len(history) - 1):
        v0 = v_next
        v_next = velocity_field(history.psi(i + 1), masses, hbar, floor)
        dt_store = float(history.times[i + 1] - history.times[i])
        dt = dt_store / substeps
        for s in range(substeps):
            if substeps == 1:
                va, vm, vb = v0, _mean_field(v0, v_next), v_next
            else:
                def lerp(f):
                    comps = tuple((1 - f) * a + f * b for a, b in zip(
                        v0.components, v_next.components))
                    return VelocityField(grid, comps, v0.flags | v_next.flags)
                va = lerp(s / substeps)
                vm = lerp((s + 0.5) / substeps)
                vb = lerp((s + 1) / substeps)
            x_new = _rk4_step(x, dt, va, vm, vb)
            bad = ~np.all(np.isfinite(x_new), axis=1)
            if bad.any():
                failed |= bad
                x_new[bad] = x[bad]
            reflections += _reflect(x_new, grid)
            x = x_new
        out.append(x.copy())
        times.append(history.times[i + 1])
    return Ensemble(np.asarray(times), np.asarray(out), ensemble.seed,
                    ensemble.source_id, failed, reflections)
