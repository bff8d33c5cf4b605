"""Slicing, correlation-potential channels, and exact conditional dynamics."""

import numpy as np
import pytest

import oracles
from bohmkit import numerics
from bohmkit.conditional import (ConditionalWavefunction, conditional_pipeline,
                                 correlation_potential, evolve_cwf,
                                 ewf_diagnostic, slice_cwf)
from bohmkit.errors import (ConfigurationError, EvaluationError, RangeError)
from bohmkit.wavefield import (Grid, HamiltonianSpec, PotentialSpec,
                               Wavefunction, build_hamiltonian, evolve_step,
                               gaussian_packet)

MASSES = (1.0, 1.0)


def product_state(grid, width_x=1.0, width_y=1.0, momentum_y=0.0):
    x, y = grid.meshes()
    amps = (np.exp(-x**2 / (4.0 * width_x**2))
            * np.exp(-y**2 / (4.0 * width_y**2) + 1j * momentum_y * y))
    return Wavefunction(grid, amps, normalized=False).normalize()


def entangled_state(grid, t=0.0, sep=1.5, width=1.0):
    x, y = grid.meshes()
    amps = oracles.two_gaussian_state(x, y, t, sep, width, MASSES)
    return Wavefunction(grid, amps, time=t, normalized=False).normalize()


def two_envelope_state(grid, gap=6.0):
    """Disjoint environment envelopes carrying different subsystem states."""
    x, y = grid.meshes()
    psi1 = np.exp(-(x - 0.8) ** 2 / 4.0)
    psi2 = np.exp(-(x + 0.8) ** 2 / 4.0) * np.exp(0.7j * x)
    phi1 = np.exp(-(y + 0.5 * gap) ** 2 / (4.0 * 0.6**2))
    phi2 = np.exp(-(y - 0.5 * gap) ** 2 / (4.0 * 0.6**2))
    return Wavefunction(grid, psi1 * phi1 + psi2 * phi2,
                        normalized=False).normalize()


def test_slice_of_product_state_is_proportional_to_psi_x():
    g = Grid.box((-8, 8, 96), (-8, 8, 90))
    psi = product_state(g, momentum_y=0.7)
    ref = psi.amplitudes[:, 40]
    for y in (-1.3, 0.0, 0.777, 2.5):
        cut = slice_cwf(psi, y)
        assert numerics.global_factor_error(cut.amplitudes, ref) < 1e-12


def test_slice_in_one_disjoint_envelope_collapses():
    g = Grid.box((-8, 8, 96), (-8, 8, 128))
    psi = two_envelope_state(g)
    x = g.nodes(0)
    cut = slice_cwf(psi, -3.0)
    ref = np.exp(-(x - 0.8) ** 2 / 4.0)
    assert numerics.global_factor_error(cut.amplitudes, ref) < 1e-9


def test_slice_at_grid_node_returns_stored_row():
    g = Grid.box((-6, 6, 64), (-6, 6, 64))
    psi = entangled_state(g)
    j = 20
    y = g.nodes(1)[j]
    cut = slice_cwf(psi, y)
    assert np.array_equal(cut.amplitudes, psi.amplitudes[:, j])
    assert cut.raw


def test_slice_outside_domain_is_a_range_error():
    g = Grid.box((-6, 6, 64), (-6, 6, 64))
    psi = entangled_state(g)
    with pytest.raises(RangeError):
        slice_cwf(psi, 6.5)
    with pytest.raises(ConfigurationError):
        slice_cwf(gaussian_packet(Grid.line(-4, 4, 64), 0.0, 1.0), 0.0)


def test_channels_recombine_to_the_complex_value():
    g = Grid.box((-8, 8, 128), (-8, 8, 128))
    psi = entangled_state(g, t=0.0)
    corr = correlation_potential(psi, 0.4, 0.1, MASSES)
    want = corr.kinetic + corr.curvature + 1j * corr.divergence
    assert np.array_equal(corr.values(), want)
    assert np.array_equal(corr.exact_values(), want + corr.drift)


def test_product_state_channels_are_x_free():
    g = Grid.box((-8, 8, 96), (-8, 8, 110))
    psi = product_state(g, width_y=1.3, momentum_y=0.9)
    corr = correlation_potential(psi, 0.6, 0.25, MASSES)
    w = corr.values()
    scale = np.abs(w).max()
    assert np.abs(w - w.mean()).max() < 1e-6 * scale
    assert corr.dispersion() < 1e-6 * scale
    # the advection residue is x-free as well for separable states
    d = corr.drift
    assert np.abs(d - d.mean()).max() < 1e-6 * max(np.abs(d).max(), 1e-30)


def test_real_state_has_no_imaginary_channel():
    g = Grid.box((-8, 8, 96), (-8, 8, 96))
    psi = entangled_state(g, t=0.0)  # positive sum of real Gaussians
    corr = correlation_potential(psi, 0.3, 0.0, MASSES)
    assert np.abs(corr.divergence).max() == 0.0
    assert np.abs(corr.values().imag).max() == 0.0
    assert np.abs(corr.drift).max() == 0.0  # zero velocity, zero rate


def test_channels_match_symbolic_gaussian_oracle():
    sep, width, t, y, rate = 1.5, 1.0, 0.3, 0.6, 0.2
    g = Grid.box((-10, 10, 255), (-10, 10, 255))
    psi = entangled_state(g, t=t, sep=sep, width=width)
    corr = correlation_potential(psi, y, rate, MASSES)
    x = g.nodes(0)
    kin, curv, div, drift = oracles.two_gaussian_channels(
        x, y, t, sep, width, MASSES, y_rate=rate)
    sel = np.abs(x) < 3.0
    for got, want in ((corr.kinetic, kin), (corr.curvature, curv),
                      (corr.divergence, div), (corr.drift, drift)):
        scale = np.abs(want[sel]).max()
        assert np.abs(got - want)[sel].max() < 0.01 * scale
    assert not corr.flags[sel].any()


def test_correlation_range_and_density_gates():
    g = Grid.box((-6, 6, 64), (-6, 6, 64))
    psi = entangled_state(g)
    with pytest.raises(RangeError):
        correlation_potential(psi, -5.9, 0.0, MASSES)
    x, y = g.meshes()
    narrow = Wavefunction(g, np.exp(-x**2 - y**2 / (4 * 0.05**2)),
                          normalized=False).normalize()
    with pytest.raises(EvaluationError):
        correlation_potential(narrow, 2.0, 0.0, MASSES)


def test_evolve_cwf_with_zero_drive_matches_closed_evolution():
    g = Grid.line(-8.0, 8.0, 192)
    x = g.nodes(0)
    psi = Wavefunction(g, np.exp(-x**2 / 4.0 + 0.4j * x**2),
                       normalized=False).normalize()
    u = 0.5 * x**2
    ham = build_hamiltonian(HamiltonianSpec(
        (1.0,), PotentialSpec(u_x=lambda q: 0.5 * q**2)), g)
    cwf = ConditionalWavefunction(g, psi.amplitudes.copy(), y=0.0)
    for _ in range(5):
        cwf = evolve_cwf(cwf, u, 1.0, dt=0.02)
    ref = psi
    for _ in range(5):
        ref = evolve_step(ref, ham, 0.02)
    assert np.abs(cwf.amplitudes - ref.amplitudes).max() < 1e-12


def test_product_pipeline_reduces_to_independent_evolution():
    g = Grid.box((-10, 10, 95), (-10, 10, 95))
    psi = product_state(g, width_x=1.0, width_y=2.0)
    ham = build_hamiltonian(HamiltonianSpec(MASSES), g)
    dt, steps = 0.005, 60
    res = conditional_pipeline(psi, ham, dt, steps, n_traj=2, seed=13)
    ref = Wavefunction(Grid((g.axes[0],)), psi.amplitudes[:, 47].copy(),
                       normalized=False).normalize()
    ham1 = build_hamiltonian(HamiltonianSpec((1.0,)), Grid((g.axes[0],)))
    for _ in range(steps):
        ref = evolve_step(ref, ham1, dt)
    for cwf in res.evolved:
        assert numerics.global_factor_error(cwf.amplitudes,
                                            ref.amplitudes) < 1e-6


def run_entangled_pipeline(points, dt, steps, include_drift=True):
    g = Grid.box((-10, 10, points), (-10, 10, points))
    psi = entangled_state(g)
    ham = build_hamiltonian(HamiltonianSpec(MASSES), g)
    res = conditional_pipeline(psi, ham, dt, steps, n_traj=3, seed=29,
                               include_drift=include_drift)
    return float(res.errors.max())


def test_pipeline_exactness_improves_under_refinement():
    coarse = run_entangled_pipeline(63, 0.04, 15)
    fine = run_entangled_pipeline(127, 0.02, 30)  # half the spacing and dt
    assert fine < 0.01
    assert coarse / fine >= 3.0


def test_dropping_the_advection_residue_breaks_exactness():
    with_drift = run_entangled_pipeline(95, 0.02, 25)
    without = run_entangled_pipeline(95, 0.02, 25, include_drift=False)
    assert with_drift < 0.01
    assert without > 5.0 * with_drift


def test_correlation_dispersion_falls_with_coupling():
    disp = []
    for k in (0.4, 0.2, 0.0):
        g = Grid.box((-10, 10, 95), (-10, 10, 95))
        psi = product_state(g)
        pot = PotentialSpec(u_xy=(lambda kk: lambda x, y: kk * x * y)(k))
        ham = build_hamiltonian(HamiltonianSpec(MASSES, pot), g)
        res = conditional_pipeline(psi, ham, 0.02, 15, n_traj=2, seed=37)
        disp.append(max(c.dispersion() for c in res.correlations))
    assert disp[0] > disp[1] > disp[2]
    # zero coupling bottoms out at the stencil/splitting floor, orders of
    # magnitude below the weakest coupled case
    assert disp[2] < 1e-3
    assert disp[2] < 0.01 * disp[1]


def test_ewf_diagnostic_flags_three_regimes():
    g = Grid.box((-8, 8, 96), (-8, 8, 128))
    nx = 96
    scale = 1.0

    prod = product_state(g, width_y=1.2, momentum_y=0.4)
    corr = [correlation_potential(prod, y, 0.0, MASSES) for y in (-0.5, 0.4)]
    diag = ewf_diagnostic(corr, np.zeros((2, nx)), scale)
    assert diag.is_effective

    env = two_envelope_state(g)
    corr = [correlation_potential(env, y, 0.0, MASSES)
            for y in (-3.4, -2.8)]  # both conditioning points in one envelope
    diag = ewf_diagnostic(corr, np.zeros((2, nx)), scale)
    assert diag.is_effective

    ent = entangled_state(g)
    corr = [correlation_potential(ent, y, 0.0, MASSES) for y in (-0.4, 0.4)]
    diag = ewf_diagnostic(corr, np.zeros((2, nx)), scale)
    assert not diag.is_effective
    assert diag.correlation_dispersion > diag.correlation_threshold


def test_ewf_diagnostic_input_validation():
    g = Grid.box((-8, 8, 96), (-8, 8, 96))
    corr = [correlation_potential(product_state(g), 0.0, 0.0, MASSES)]
    with pytest.raises(ConfigurationError):
        ewf_diagnostic(corr, np.zeros((1, 96)), energy_scale=0.0)
    with pytest.raises(ConfigurationError):
        ewf_diagnostic(corr, np.zeros(96), energy_scale=1.0)


def test_pipeline_requires_two_dimensions():
    g = Grid.line(-8.0, 8.0, 128)
    ham = build_hamiltonian(HamiltonianSpec((1.0,)), g)
    with pytest.raises(ConfigurationError):
        conditional_pipeline(gaussian_packet(g, 0.0, 1.0), ham, 0.01, 5,
                             n_traj=2, seed=1)
