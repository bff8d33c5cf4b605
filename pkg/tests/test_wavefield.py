"""Grid conventions, Hamiltonian assembly, Crank-Nicolson contracts, hybrids."""

import numpy as np
import pytest
from scipy.linalg import eigh_tridiagonal, expm

import oracles
from bohmkit.errors import ConfigurationError
from bohmkit.fileio import read_snapshot, write_snapshot
from bohmkit.wavefield import (CrankNicolson, Grid, HamiltonianSpec,
                               PotentialSpec, Wavefunction, build_hamiltonian,
                               evolve_hybrid, evolve_step, gaussian_packet,
                               hybrid_product, propagate,
                               resolution_diagnostic)


def free_ham(grid, mass=1.0):
    return build_hamiltonian(HamiltonianSpec((mass,) * grid.ndim), grid)


def test_grid_spacing_and_interior_nodes():
    g = Grid.line(-2.0, 3.0, 49)
    assert g.spacings[0] == pytest.approx(5.0 / 50)
    x = g.nodes(0)
    assert x[0] > -2.0 and x[-1] < 3.0
    assert np.allclose(np.diff(x), g.spacings[0])


def test_grid_rejects_bad_axes():
    with pytest.raises(ConfigurationError):
        Grid.line(1.0, 1.0, 64)
    with pytest.raises(ConfigurationError):
        Grid.line(0.0, 1.0, 8)
    with pytest.raises(ConfigurationError):
        Grid(Grid.line(0.0, 1.0, 32).axes * 3)


def test_free_hamiltonian_annihilates_constant_interior():
    g = Grid.line(0.0, 1.0, 64)
    ham = free_ham(g)
    out = ham.apply(np.ones(64, dtype=complex))
    # the first and last node feel the hard wall, the rest must vanish
    assert np.abs(out[1:-1]).max() < 1e-10
    assert np.abs(out[0]) > 1.0


def test_box_eigenstate_energy_second_order():
    L, m = 10.0, 1.3
    e_exact = oracles.box_level_energy(1, L, m)
    errs = []
    for points in (100, 201):  # 201 = exactly half the spacing of 100
        g = Grid.line(0.0, L, points)
        psi = Wavefunction(g, np.sin(np.pi * g.nodes(0) / L) + 0j,
                           normalized=False).normalize()
        ham = free_ham(g, m)
        e_num = ham.expectation(psi)
        errs.append(abs(e_num - e_exact) / e_exact)
    assert errs[1] < 1e-4
    assert 3.0 < errs[0] / errs[1] < 5.0


def test_harmonic_ground_energy():
    m, omega = 1.0, 1.0
    g = Grid.line(-10.0, 10.0, 800)
    spec = HamiltonianSpec((m,), PotentialSpec(
        u_x=lambda x: 0.5 * m * omega**2 * x**2))
    ham = build_hamiltonian(spec, g)
    psi = Wavefunction(g, oracles.oscillator_ground(g.nodes(0), m, omega)
                       + 0j, normalized=False).normalize()
    assert ham.expectation(psi) == pytest.approx(0.5 * omega, rel=1e-4)
    # pointwise H psi = E psi on nodes with healthy density
    x = g.nodes(0)
    ratio = (ham.apply(psi.amplitudes) / psi.amplitudes)[np.abs(x) < 2.0]
    assert np.abs(ratio.real - 0.5 * omega).max() < 1e-3


@pytest.mark.parametrize("ndim", [1, 2])
def test_hamiltonian_hermitian_on_random_vectors(ndim):
    if ndim == 1:
        g = Grid.line(-5.0, 5.0, 96)
        spec = HamiltonianSpec((1.0,), PotentialSpec(u_x=lambda x: x**2))
    else:
        g = Grid.box((-4, 4, 24), (-4, 4, 20))
        spec = HamiltonianSpec((1.0, 1.5), PotentialSpec(
            u_x=lambda x: x**2, u_xy=lambda x, y: 0.3 * x * y))
    ham = build_hamiltonian(spec, g)
    rng = np.random.default_rng(7)
    n = int(np.prod(g.shape))
    for _ in range(4):
        a = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        b = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        lhs = np.vdot(a, ham.matrix @ b)
        rhs = np.conj(np.vdot(b, ham.matrix @ a))
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_mass_and_shape_validation():
    g = Grid.line(0.0, 1.0, 32)
    with pytest.raises(ConfigurationError):
        build_hamiltonian(HamiltonianSpec((0.0,)), g)
    with pytest.raises(ConfigurationError):
        build_hamiltonian(HamiltonianSpec((1.0, 1.0)), g)
    with pytest.raises(ConfigurationError):
        Wavefunction(g, np.ones(31, dtype=complex))


def test_eigenstate_steps_as_pure_phase():
    g = Grid.line(-8.0, 8.0, 256)
    h = g.spacings[0]
    u = 0.5 * g.nodes(0) ** 2
    diag = 1.0 / h**2 + u
    off = np.full(255, -0.5 / h**2)
    vals, vecs = eigh_tridiagonal(diag, off, select="i",
                                  select_range=(0, 0))
    spec = HamiltonianSpec((1.0,), PotentialSpec(u_x=lambda x: 0.5 * x**2))
    ham = build_hamiltonian(spec, g)
    psi = Wavefunction(g, vecs[:, 0] + 0j, normalized=False).normalize()
    out = evolve_step(psi, ham, dt=0.05)
    assert np.abs(np.abs(out.amplitudes) - np.abs(psi.amplitudes)).max() < 1e-10
    # the phase advanced by the eigenvalue's Cayley angle, uniform everywhere
    phase = out.amplitudes / psi.amplitudes
    assert np.abs(phase - phase[128]).max() < 1e-9


def test_unitarity_per_step_and_over_long_run():
    g = Grid.line(-25.0, 25.0, 512)
    ham = free_ham(g)
    psi = gaussian_packet(g, -5.0, 1.0, momentum=1.0)
    stepper = CrankNicolson(ham, 0.005)
    drift_per_step = 0.0
    for _ in range(50):
        nxt = stepper.step(psi)
        drift_per_step = max(drift_per_step, abs(nxt.norm() - psi.norm()))
        psi = nxt
    assert drift_per_step < 1e-10
    for _ in range(950):
        psi = stepper.step(psi)
    assert abs(psi.norm() - 1.0) < 1e-7


def test_energy_conserved_over_run():
    g = Grid.line(-16.0, 16.0, 384)
    spec = HamiltonianSpec((1.0,), PotentialSpec(u_x=lambda x: 0.5 * x**2))
    ham = build_hamiltonian(spec, g)
    psi = gaussian_packet(g, 1.5, 1.0 / np.sqrt(2.0))
    e0 = ham.expectation(psi)
    hist = propagate(psi, ham, dt=0.01, steps=400, store_every=40)
    for i in range(len(hist)):
        assert abs(ham.expectation(hist.psi(i)) - e0) <= 1e-6 * abs(e0)


def test_gaussian_spreading_variance():
    g = Grid.line(-16.0, 16.0, 384)
    ham = free_ham(g)
    psi = gaussian_packet(g, 0.0, 1.0)
    hist = propagate(psi, ham, dt=0.01, steps=200, store_every=50)
    x = g.nodes(0)
    for i in range(len(hist)):
        rho = np.abs(hist.amps[i]) ** 2 * g.cell
        var = float(np.sum(x**2 * rho))
        want = oracles.gaussian_width(hist.times[i], 1.0) ** 2
        assert var == pytest.approx(want, rel=0.01)


def test_second_order_convergence_in_dt():
    g = Grid.line(-12.0, 12.0, 256)
    ham = free_ham(g)
    psi = gaussian_packet(g, 0.0, 1.0, momentum=0.8)
    horizon = 0.64

    def final(dt):
        out = psi
        stepper = CrankNicolson(ham, dt)
        for _ in range(int(round(horizon / dt))):
            out = stepper.step(out)
        return out.amplitudes

    ref = final(0.01)
    e1 = np.linalg.norm(final(0.04) - ref)
    e2 = np.linalg.norm(final(0.02) - ref)
    # dt^2 law against the quarter-step reference: exact ratio would be 5
    assert 3.0 < e1 / e2 < 7.0


# ---------------------------------------------------------------------------
# hybrid level (x) pointer states


SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]])
B_DIAG = np.diag([1.0, -1.0])


def pointer_state(lo=-10.0, hi=14.0, points=480, width=1.0):
    return gaussian_packet(Grid.line(lo, hi, points), 0.0, width)


def test_hybrid_zero_coupling_decouples():
    pointer = pointer_state(-8.0, 8.0, 320)
    state = hybrid_product(np.array([1.0, 0.0]), pointer)
    steps, dt = 40, 0.05
    out = evolve_hybrid(state, 0.7 * SIGMA_X, B_DIAG, np.zeros(steps), dt)
    assert np.abs(out.pointer_marginal()
                  - state.pointer_marginal()).max() < 1e-8
    # still a product state: one singular value carries everything
    s = np.linalg.svd(out.amplitudes, compute_uv=False)
    assert s[1] / s[0] < 1e-10
    levels = expm(-1j * 0.7 * SIGMA_X * steps * dt) @ np.array([1.0, 0.0])
    weights = out.level_weights()
    assert np.abs(weights - np.abs(levels) ** 2).max() < 1e-3


def test_hybrid_impulse_displaces_pointer_by_eigenvalue():
    mu = 3.0
    pointer = pointer_state()
    state = hybrid_product(np.array([1.0, 0.0]), pointer)
    steps, window = 32, 1.0
    profile = np.full(steps, mu / window)
    out = evolve_hybrid(state, np.zeros((2, 2)), B_DIAG, profile,
                        window / steps)
    z = out.pointer_grid.nodes(0)
    marg = out.pointer_marginal()
    mean = float(np.sum(z * marg) / np.sum(marg))
    assert mean == pytest.approx(mu * 1.0, rel=0.02)


def test_hybrid_superposition_splits_into_equal_envelopes():
    mu = 6.0
    pointer = pointer_state(-14.0, 14.0, 560)
    state = hybrid_product(np.array([1.0, 1.0]) / np.sqrt(2.0), pointer)
    steps, window = 32, 1.0
    out = evolve_hybrid(state, np.zeros((2, 2)), B_DIAG,
                        np.full(steps, mu / window), window / steps)
    assert np.abs(out.level_weights() - 0.5).max() < 1e-10
    z = out.pointer_grid.nodes(0)
    marg = out.pointer_marginal() * out.pointer_grid.cell
    right = float(np.sum(marg[z > 0.0]))
    assert right == pytest.approx(0.5, abs=1e-6)


def test_hybrid_rejects_non_hermitian_coupling():
    state = hybrid_product(np.array([1.0, 0.0]), pointer_state())
    bad = np.array([[0.0, 1.0], [0.0, 0.0]])
    with pytest.raises(ConfigurationError):
        evolve_hybrid(state, np.zeros((2, 2)), bad, np.ones(4), 0.1)


# ---------------------------------------------------------------------------
# absorbing ramps and diagnostics


def test_absorber_drains_norm_and_clears_normalized_tag():
    g = Grid.line(-10.0, 10.0, 256)
    spec = HamiltonianSpec((1.0,), PotentialSpec(
        absorber=lambda x: 2.0 * np.clip(np.abs(x) - 6.0, 0.0, None)))
    ham = build_hamiltonian(spec, g)
    assert ham.absorbing
    psi = gaussian_packet(g, 4.0, 1.0, momentum=3.0)
    out = psi
    stepper = CrankNicolson(ham, 0.02)
    for _ in range(60):
        out = stepper.step(out)
    assert out.norm() < 0.95
    assert not out.normalized


def test_absorber_must_be_non_negative():
    g = Grid.line(-4.0, 4.0, 64)
    spec = HamiltonianSpec((1.0,), PotentialSpec(absorber=lambda x: -x))
    with pytest.raises(ConfigurationError):
        build_hamiltonian(spec, g)


def test_resolution_diagnostic_flags_coarse_grids():
    coarse = Grid.line(-8.0, 8.0, 32)
    psi = gaussian_packet(coarse, 0.0, 1.5, momentum=8.0)
    assert resolution_diagnostic(free_ham(coarse), psi)
    fine = Grid.line(-8.0, 8.0, 512)
    psi = gaussian_packet(fine, 0.0, 1.5, momentum=1.0)
    assert resolution_diagnostic(free_ham(fine), psi) == []


def test_snapshot_roundtrip_is_exact_and_deterministic(tmp_path):
    g = Grid.line(-3.0, 5.0, 48)
    psi = gaussian_packet(g, 0.7, 0.9, momentum=-1.2)
    psi.time = 0.375
    p1 = tmp_path / "a.csv"
    p2 = tmp_path / "b.csv"
    write_snapshot(psi, p1, config_hash="deadbeef")
    write_snapshot(psi, p2, config_hash="deadbeef")
    assert p1.read_bytes() == p2.read_bytes()
    back = read_snapshot(p1)
    assert back.grid.shape == g.shape
    assert back.time == psi.time
    assert np.array_equal(back.amplitudes, psi.amplitudes)
