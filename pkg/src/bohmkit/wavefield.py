"""Wavefunctions on hard-wall grids and norm-preserving propagation.

Solves the time-dependent Schrodinger equation

    i hbar dPsi/dt = [ sum_k -hbar^2/(2 m_k) d^2/dq_k^2 + U(q) ] Psi

on uniform 1D or 2D grids with 3-point central second differences and
hard-wall (Dirichlet) boundaries: stored nodes are strictly interior, the
wavefunction vanishes one spacing outside either end.  Time stepping is
Crank-Nicolson,

    (I + i dt H / 2 hbar) psi' = (I - i dt H / 2 hbar) psi,

which for Hermitian H is exactly unitary up to the linear-solve residual.
Natural units hbar = m = 1 are the defaults.

A hybrid discrete (x) continuous state (few levels tensor a 1D pointer grid)
and its von Neumann coupling  mu(t) * B_S (x) p_M  are provided for the
measurement module; the pointer momentum is the central difference
p_M = -i hbar d/dz on the same hard-wall grid.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import ConfigurationError, NumericalError
from . import numerics

MIN_POINTS = 16
NORM_TOL = 1e-8
CN_RESIDUAL_TOL = 1e-9
POINTS_PER_WAVELENGTH = 8


@dataclass(frozen=True)
class GridAxis:
    """One uniform axis; nodes are interior, walls sit at lo and hi."""

    lo: float
    hi: float
    points: int

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ConfigurationError(
                f"axis needs hi > lo, got [{self.lo}, {self.hi}]")
        if self.points < MIN_POINTS:
            raise ConfigurationError(
                f"axis needs at least {MIN_POINTS} points, got {self.points}")

    @property
    def spacing(self):
        return (self.hi - self.lo) / (self.points + 1)

    @property
    def nodes(self):
        h = self.spacing
        return self.lo + h * np.arange(1, self.points + 1)


@dataclass(frozen=True)
class Grid:
    axes: tuple

    def __post_init__(self):
        if len(self.axes) not in (1, 2):
            raise ConfigurationError("only 1D and 2D grids are supported")

    @classmethod
    def line(cls, lo, hi, points):
        return cls((GridAxis(lo, hi, points),))

    @classmethod
    def box(cls, x_axis, y_axis):
        return cls((GridAxis(*x_axis), GridAxis(*y_axis)))

    @property
    def ndim(self):
        return len(self.axes)

    @property
    def shape(self):
        return tuple(ax.points for ax in self.axes)

    @property
    def spacings(self):
        return tuple(ax.spacing for ax in self.axes)

    @property
    def cell(self):
        return float(np.prod(self.spacings))

    def nodes(self, axis=0):
        return self.axes[axis].nodes

    def meshes(self):
        return np.meshgrid(*(ax.nodes for ax in self.axes), indexing="ij")


@dataclass
class Wavefunction:
    """Complex amplitudes on a grid at one instant."""

    grid: Grid
    amplitudes: np.ndarray
    time: float = 0.0
    normalized: bool = True

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != self.grid.shape:
            raise ConfigurationError(
                f"amplitude shape {amps.shape} does not match grid "
                f"shape {self.grid.shape}")
        if not np.all(np.isfinite(amps.view(float))):
            raise ConfigurationError("amplitudes must be finite")
        self.amplitudes = amps

    def norm(self):
        return float(np.sqrt(numerics.norm_sq(self.amplitudes,
                                              self.grid.cell)))

    def density(self):
        return np.abs(self.amplitudes) ** 2

    def normalize(self):
        n = self.norm()
        if n == 0:
            raise NumericalError("cannot normalize a zero state")
        return Wavefunction(self.grid, self.amplitudes / n, self.time, True)

    def check_normalized(self, tol=NORM_TOL):
        if abs(self.norm() - 1.0) > tol:
            raise NumericalError(
                f"state tagged normalized has norm {self.norm():.3e}")

    def content_id(self):
        h = hashlib.sha256(np.ascontiguousarray(self.amplitudes).tobytes())
        return h.hexdigest()[:12]


def gaussian_packet(grid, center, width, momentum=0.0, axis_widths=None):
    """Normalized Gaussian, optionally with drift momentum (1D or 2D)."""
    if grid.ndim == 1:
        x = grid.nodes(0)
        amps = np.exp(-(x - center) ** 2 / (4.0 * width**2)
                      + 1j * momentum * (x - center))
    else:
        cx, cy = center
        wx, wy = axis_widths if axis_widths is not None else (width, width)
        kx, ky = momentum if np.ndim(momentum) else (momentum, 0.0)
        x, y = grid.meshes()
        amps = np.exp(-(x - cx) ** 2 / (4.0 * wx**2)
                      - (y - cy) ** 2 / (4.0 * wy**2)
                      + 1j * (kx * (x - cx) + ky * (y - cy)))
    return Wavefunction(grid, amps).normalize()


@dataclass
class PotentialSpec:
    """Real potential split into per-axis parts and an optional 2D coupling.

    Each part is a vectorised callable of the node coordinates.  An optional
    absorber callable gives a non-negative rate Gamma; the propagator then
    uses U - i*Gamma and switches its norm bookkeeping to absorbed flux.
    """

    u_x: object = None
    u_y: object = None
    u_xy: object = None
    absorber: object = None

    def on_grid(self, grid):
        total = np.zeros(grid.shape)
        if grid.ndim == 1:
            x = grid.nodes(0)
            if self.u_x is not None:
                total += self.u_x(x)
        else:
            x, y = grid.meshes()
            if self.u_x is not None:
                total += self.u_x(x[:, 0])[:, None]
            if self.u_y is not None:
                total += self.u_y(y[0, :])[None, :]
            if self.u_xy is not None:
                total += self.u_xy(x, y)
        return total

    def absorber_on_grid(self, grid):
        if self.absorber is None:
            return None
        if grid.ndim == 1:
            gamma = self.absorber(grid.nodes(0))
        else:
            gamma = self.absorber(*grid.meshes())
        gamma = np.asarray(gamma, dtype=float)
        if np.any(gamma < 0):
            raise ConfigurationError("absorber rate must be non-negative")
        return gamma


@dataclass
class HamiltonianSpec:
    masses: tuple
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    hbar: float = 1.0

    def __post_init__(self):
        if np.ndim(self.masses) == 0:
            self.masses = (float(self.masses),)
        if any(m <= 0 for m in self.masses):
            raise ConfigurationError("masses must be positive")
        if self.hbar <= 0:
            raise ConfigurationError("hbar must be positive")


def _laplacian_1d(n, h):
    main = np.full(n, -2.0) / h**2
    off = np.full(n - 1, 1.0) / h**2
    return sparse.diags([off, main, off], [-1, 0, 1], format="csr")


class Hamiltonian:
    """Discrete H = kinetic + diagonal potential on a grid."""

    def __init__(self, spec, grid):
        if len(spec.masses) != grid.ndim:
            raise ConfigurationError(
                f"{len(spec.masses)} masses given for a {grid.ndim}D grid")
        self.spec = spec
        self.grid = grid
        self.hbar = spec.hbar
        self.potential = spec.potential.on_grid(grid)
        gamma = spec.potential.absorber_on_grid(grid)
        self.absorbing = gamma is not None
        kin = None
        for axis, (m, h, n) in enumerate(zip(spec.masses, grid.spacings,
                                             grid.shape)):
            lap = _laplacian_1d(n, h) * (-spec.hbar**2 / (2.0 * m))
            if grid.ndim == 1:
                term = lap
            elif axis == 0:
                term = sparse.kron(lap, sparse.identity(grid.shape[1]))
            else:
                term = sparse.kron(sparse.identity(grid.shape[0]), lap)
            kin = term if kin is None else kin + term
        diag = self.potential.astype(complex)
        if gamma is not None:
            diag = diag - 1j * gamma
        self.matrix = (kin + sparse.diags(diag.ravel())).tocsr()

    def apply(self, amps):
        return (self.matrix @ amps.ravel()).reshape(self.grid.shape)

    def expectation(self, psi):
        val = numerics.grid_inner(psi.amplitudes,
                                  self.apply(psi.amplitudes), psi.grid.cell)
        return val.real if not self.absorbing else val


def build_hamiltonian(spec, grid):
    return Hamiltonian(spec, grid)


def resolution_diagnostic(ham, psi):
    """Points per de Broglie wavelength on each axis, from the kinetic scale.

    Returns a list of warning strings (empty when the grid is adequate).
    """
    warnings = []
    for axis, (m, h) in enumerate(zip(ham.spec.masses, ham.grid.spacings)):
        d2 = numerics.second_derivative(psi.amplitudes, h, axis=axis)
        ke = numerics.grid_inner(psi.amplitudes,
                                 -ham.hbar**2 / (2 * m) * d2,
                                 psi.grid.cell).real
        if ke <= 0:
            continue
        p_rms = np.sqrt(2.0 * m * ke)
        wavelength = 2.0 * np.pi * ham.hbar / p_rms
        if wavelength / h < POINTS_PER_WAVELENGTH:
            warnings.append(
                f"axis {axis}: {wavelength / h:.1f} points per de Broglie "
                f"wavelength (< {POINTS_PER_WAVELENGTH}); refine the grid")
    return warnings


class CrankNicolson:
    """Cached-factorization Crank-Nicolson stepper for a fixed H and dt."""

    def __init__(self, ham, dt):
        if dt <= 0:
            raise ConfigurationError("dt must be positive")
        self.ham = ham
        self.dt = dt
        n = ham.matrix.shape[0]
        eye = sparse.identity(n, format="csc", dtype=complex)
        z = 1j * dt / (2.0 * ham.hbar)
        self._a = (eye + z * ham.matrix).tocsc()
        self._b = (eye - z * ham.matrix).tocsr()
        self._lu = splu(self._a)

    def step_array(self, amps):
        rhs = self._b @ amps.ravel()
        out = self._lu.solve(rhs)
        res = np.linalg.norm(self._a @ out - rhs)
        scale = np.linalg.norm(rhs)
        if scale > 0 and res / scale > CN_RESIDUAL_TOL:
            raise NumericalError(
                f"Crank-Nicolson solve residual {res / scale:.3e} exceeds "
                f"{CN_RESIDUAL_TOL:.1e}")
        return out.reshape(amps.shape)

    def step(self, psi):
        return Wavefunction(psi.grid, self.step_array(psi.amplitudes),
                            psi.time + self.dt,
                            psi.normalized and not self.ham.absorbing)


@dataclass
class WavefunctionHistory:
    """Stacked snapshots at uniform step times."""

    grid: Grid
    times: np.ndarray
    amps: np.ndarray  # (T, *grid.shape)
    source_id: str = ""

    def __len__(self):
        return len(self.times)

    def psi(self, i):
        return Wavefunction(self.grid, self.amps[i], float(self.times[i]))

    @property
    def dt(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0


def evolve_step(psi, ham, dt):
    """Single Crank-Nicolson step (convenience wrapper)."""
    return CrankNicolson(ham, dt).step(psi)


def propagate(psi, ham, dt, steps, store_every=1):
    """Evolve and collect snapshots every store_every steps (plus t=0)."""
    stepper = CrankNicolson(ham, dt)
    stored = [psi.amplitudes.copy()]
    times = [psi.time]
    current = psi
    for k in range(steps):
        current = stepper.step(current)
        if (k + 1) % store_every == 0:
            stored.append(current.amplitudes.copy())
            times.append(current.time)
    return WavefunctionHistory(psi.grid, np.asarray(times), np.asarray(stored),
                               source_id=psi.content_id())


def iterate_steps(psi, ham, dt, steps):
    """Generator of successive states, starting with the initial one."""
    stepper = CrankNicolson(ham, dt)
    current = psi
    yield current
    for _ in range(steps):
        current = stepper.step(current)
        yield current


# ---------------------------------------------------------------------------
# hybrid discrete (x) pointer states


@dataclass
class HybridState:
    """Few discrete levels tensor a 1D pointer grid; shape (levels, nodes)."""

    levels: int
    pointer_grid: Grid
    amplitudes: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        want = (self.levels, self.pointer_grid.shape[0])
        if amps.shape != want:
            raise ConfigurationError(
                f"hybrid amplitudes shape {amps.shape} != {want}")
        self.amplitudes = amps

    def norm(self):
        return float(np.sqrt(numerics.norm_sq(self.amplitudes,
                                              self.pointer_grid.cell)))

    def normalize(self):
        n = self.norm()
        if n == 0:
            raise NumericalError("cannot normalize a zero hybrid state")
        return HybridState(self.levels, self.pointer_grid,
                           self.amplitudes / n, self.time)

    def pointer_marginal(self):
        """Pointer density summed over levels; integrates to norm^2."""
        return np.sum(np.abs(self.amplitudes) ** 2, axis=0)

    def level_weights(self):
        """Per-level probability weights (pointer integrated out)."""
        return self.pointer_grid.cell * np.sum(np.abs(self.amplitudes) ** 2,
                                               axis=1)


def hybrid_product(level_amps, pointer_psi):
    """Tensor product |level_amps> (x) pointer wavefunction."""
    level_amps = np.asarray(level_amps, dtype=complex)
    amps = level_amps[:, None] * pointer_psi.amplitudes[None, :]
    return HybridState(len(level_amps), pointer_psi.grid, amps,
                       pointer_psi.time)


def pointer_momentum_matrix(grid, hbar):
    """p = -i hbar * central difference with hard-wall zeros; Hermitian."""
    n = grid.shape[0]
    h = grid.spacings[0]
    off = np.full(n - 1, 1.0 / (2.0 * h))
    d1 = sparse.diags([-off, off], [-1, 1], format="csr")
    return (-1j * hbar) * d1


def evolve_hybrid(state, system_h, coupling, mu_profile, dt,
                  pointer_mass=None, hbar=1.0):
    """Advance a hybrid state under H_S (x) I + mu(t) B (x) p_M + I (x) H_M.

    mu_profile is a sequence of coupling strengths, one per step, sampled at
    step midpoints; its integral sum(mu)*dt is the total measurement strength.
    H_M is the pointer kinetic term (omitted for the default infinitely
    massive pointer).  Factorizations are cached per distinct mu value, so a
    rectangular pulse costs one factorization.
    """
    system_h = np.asarray(system_h, dtype=complex)
    coupling = np.asarray(coupling, dtype=complex)
    L = state.levels
    if system_h.shape != (L, L) or coupling.shape != (L, L):
        raise ConfigurationError("system and coupling matrices must be LxL")
    if not np.allclose(coupling, coupling.conj().T, atol=1e-12):
        raise ConfigurationError("coupling operator must be Hermitian")
    n = state.pointer_grid.shape[0]
    eye_l = sparse.identity(L, format="csr")
    eye_n = sparse.identity(n, format="csr")
    p_m = pointer_momentum_matrix(state.pointer_grid, hbar)
    base = sparse.kron(sparse.csr_matrix(system_h), eye_n)
    if pointer_mass is not None:
        h = state.pointer_grid.spacings[0]
        kin = _laplacian_1d(n, h) * (-hbar**2 / (2.0 * pointer_mass))
        base = base + sparse.kron(eye_l, kin)
    coupling_term = sparse.kron(sparse.csr_matrix(coupling), p_m)

    lus = {}
    amps = state.amplitudes.ravel().copy()
    eye = sparse.identity(L * n, format="csc", dtype=complex)
    t = state.time
    for mu in mu_profile:
        mu = float(mu)
        if mu not in lus:
            h_tot = (base + mu * coupling_term).tocsc()
            z = 1j * dt / (2.0 * hbar)
            a = (eye + z * h_tot).tocsc()
            b = (eye - z * h_tot).tocsr()
            lus[mu] = (splu(a), b)
        lu, b = lus[mu]
        amps = lu.solve(b @ amps)
        t += dt
    return HybridState(L, state.pointer_grid, amps.reshape(L, n), t)
