"""End-to-end acceptance runs, one test per guaranteed behavior.

Each test exercises a full workflow at the advertised scale and asserts the
published tolerance, plus the runtime budget where one is part of the
guarantee.  Run with `pytest -v tests/test_acceptance.py` to get one
pass/fail line per guarantee.
"""
import json
import time
from pathlib import Path

import numpy as np

import oracles
from bohmkit import cli
from bohmkit.conditional import conditional_pipeline
from bohmkit.measurement import (PointerConfig, strong_measure,
                                 strong_measure_batch, weak_value_protocol)
from bohmkit.observables import (RegionSpec, dwell_time, gauss_law_current,
                                 hamiltonian_operator, local_expectation,
                                 local_field_integral, momentum_operator,
                                 position_operator, quadrature_expectation,
                                 ensemble_expectation, total_current,
                                 trajectory_work)
from bohmkit.openquantum import (damping_collision, partial_trace_oracle,
                                 reduced_density, trace_distance, unravel)
from bohmkit.scenarios import (build_hamiltonian_from, build_initial,
                               build_potential, eigenstates_1d, parse_config)
from bohmkit.trajectories import (Ensemble, integrate, quantum_potential,
                                  sample_initial, velocity_field)
from bohmkit.wavefield import (Grid, HamiltonianSpec, PotentialSpec,
                               Wavefunction, build_hamiltonian,
                               gaussian_packet, propagate)

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"


def test_thousand_step_run_conserves_norm_and_energy():
    g = Grid.line(-25.0, 25.0, 512)
    ham = build_hamiltonian(HamiltonianSpec((1.0,)), g)
    psi = gaussian_packet(g, center=-5.0, width=1.0, momentum=1.5)
    t0 = time.perf_counter()
    hist = propagate(psi, ham, dt=0.005, steps=1000, store_every=50)
    elapsed = time.perf_counter() - t0
    norms = np.array([hist.psi(i).norm() for i in range(len(hist))])
    energies = np.array([
        np.real(np.vdot(hist.psi(i).amplitudes,
                        ham.apply(hist.psi(i).amplitudes))) * g.cell
        for i in range(len(hist))])
    assert np.abs(norms - norms[0]).max() <= 1e-7
    assert np.abs(energies - energies[0]).max() <= 1e-6 * abs(energies[0])
    assert elapsed <= 10.0


def test_trajectories_stay_born_distributed_and_never_cross():
    g = Grid.line(-16.0, 16.0, 384)
    ham = build_hamiltonian(HamiltonianSpec((1.0,)), g)
    psi = gaussian_packet(g, 0.0, 1.0)
    t0 = time.perf_counter()
    hist = propagate(psi, ham, dt=0.01, steps=200, store_every=25)
    n = 10_000
    ens = integrate(sample_initial(psi, n, seed=7), hist, (1.0,), substeps=2)

    edges = np.linspace(-8.0, 8.0, 49)
    centers = 0.5 * (edges[1:] + edges[:-1])

    def l1(samples, dens):
        h, _ = np.histogram(samples, bins=edges, density=True)
        rho = np.interp(centers, g.nodes(0), dens)
        return float(np.sum(np.abs(h - rho)) * (edges[1] - edges[0]))

    # even perfectly transported draws land above the t=0 baseline here:
    # the packet spreads, so the final-time histogram covers more bins.
    # The 1.5x allowance covers that growth plus seed-to-seed fluctuation;
    # this seed sits at the ratio median of ten tried.
    baseline = np.mean([
        l1(sample_initial(psi, n, seed=900 + r).positions[0, :, 0],
           np.abs(psi.amplitudes) ** 2) for r in range(8)])
    final = l1(ens.positions[-1, :, 0],
               np.abs(hist.psi(-1).amplitudes) ** 2)
    assert final <= 1.5 * baseline

    rng = np.random.default_rng(2)
    pairs = rng.integers(0, n, size=(1200, 2))
    pairs = pairs[pairs[:, 0] != pairs[:, 1]][:1000]
    assert len(pairs) == 1000
    diffs = ens.positions[:, pairs[:, 0], 0] - ens.positions[:, pairs[:, 1], 0]
    signs = np.sign(diffs)
    assert (signs == signs[0]).all()
    assert time.perf_counter() - t0 <= 60.0


def _entangled_pipeline_error(points, dt, steps):
    g = Grid.box((-10, 10, points), (-10, 10, points))
    x, y = g.meshes()
    amps = oracles.two_gaussian_state(x, y, 0.0, 1.5, 1.0, (1.0, 1.0))
    psi = Wavefunction(g, amps, normalized=False).normalize()
    ham = build_hamiltonian(HamiltonianSpec((1.0, 1.0)), g)
    res = conditional_pipeline(psi, ham, dt, steps, n_traj=3, seed=29,
                               include_drift=True)
    return float(res.errors.max())


def test_conditional_slices_track_the_entangled_state_and_refine():
    t0 = time.perf_counter()
    # 256 cells per axis; the refined run halves both the spacing and dt
    base = _entangled_pipeline_error(255, 0.02, 30)
    halved = _entangled_pipeline_error(511, 0.01, 60)
    assert base <= 0.01
    assert base / halved >= 3.0
    assert time.perf_counter() - t0 <= 300.0


def test_expectation_routes_agree_for_position_momentum_energy():
    g = Grid.line(-10.0, 10.0, 320)
    x = g.nodes(0)
    pot = PotentialSpec(u_x=lambda u: 0.5 * u**2)
    ham = build_hamiltonian(HamiltonianSpec((1.0,), pot), g)
    amps = np.exp(-(x - 0.5) ** 2 / 4.0 + 1j * 0.8 * x + 1j * 0.3 * x**2)
    psi = Wavefunction(g, amps, normalized=False).normalize()
    ens = sample_initial(psi, 10_000, seed=21)
    for op in (position_operator(g), momentum_operator(g),
               hamiltonian_operator(ham)):
        ref = quadrature_expectation(psi, op).real
        fld = local_expectation(psi, op)
        integ = local_field_integral(psi, fld)
        scale = max(abs(ref), 1.0)
        assert abs(integ.real - ref) <= 1e-6 * scale
        assert abs(integ.imag) <= 1e-6 * scale
        rec = ensemble_expectation(ens, fld, 0)
        assert abs(rec.value - ref) <= 4.0 * rec.stderr
        assert rec.count + rec.flagged == 10_000

    # momentum field against mass * velocity on the shared stencil
    fld_p = local_expectation(psi, momentum_operator(g))
    v = velocity_field(psi, (1.0,))
    ok = ~(fld_p.flags | v.flags)[1:-1]
    gap = np.abs(fld_p.values.real[1:-1] - v.components[0][1:-1])[ok]
    assert gap.max() <= 1e-10 * np.abs(v.components[0][1:-1][ok]).max()

    # energy field against kinetic + potential + quantum potential; the
    # residual is stencil error, so it must fall away under refinement
    def decomposition_gap(points):
        gg = Grid.line(-10.0, 10.0, points)
        xx = gg.nodes(0)
        hh = build_hamiltonian(HamiltonianSpec((1.0,), pot), gg)
        aa = np.exp(-(xx - 0.5) ** 2 / 4.0 + 1j * 0.8 * xx + 1j * 0.3 * xx**2)
        pp = Wavefunction(gg, aa, normalized=False).normalize()
        fld = local_expectation(pp, hamiltonian_operator(hh))
        vv = velocity_field(pp, (1.0,)).components[0]
        qq = quantum_potential(pp, (1.0,)).values
        sel = np.abs(xx) < 3.0
        return np.abs(fld.values.real
                      - (0.5 * vv**2 + 0.5 * xx**2 + qq))[sel].max()

    coarse, fine = decomposition_gap(200), decomposition_gap(401)
    assert coarse / fine > 3.0
    assert fine < 0.02


def test_eigenstates_give_flat_energy_fields_and_shipped_mixtures_do_not():
    cfg = parse_config(SCENARIO_DIR / "harmonic_work.cfg")
    g, masses, ham = build_hamiltonian_from(cfg)
    pot = build_potential(cfg, masses, cfg.hbar)
    h_op = hamiltonian_operator(ham)
    _, states = eigenstates_1d(g, pot, masses[0], cfg.hbar, 3)
    for psi in states:
        fld = local_expectation(psi, h_op)
        vals = fld.values.real[~fld.flags]
        assert vals.var() <= 1e-10
    mixture = build_initial(cfg, g, masses, cfg.hbar)
    fld = local_expectation(mixture, h_op)
    assert fld.values.real[~fld.flags].var() > 1e-4


def test_weak_values_recover_local_momentum_with_less_bias_when_weaker():
    g = Grid.line(-8.0, 8.0, 192)
    x = g.nodes(0)
    amps = np.exp(-x**2 / 4.0) * np.exp(1j * 0.5 * x**2)
    psi = Wavefunction(g, amps, normalized=False).normalize()
    op = momentum_operator(g)
    ref = float(np.real(local_expectation(psi, op).at(
        np.array([[1.0]]))[0][0]))
    cfg = PointerConfig(strength=0.08, width=1.0, center=0.0, window=1.0,
                        steps=64)
    t0 = time.perf_counter()
    est = weak_value_protocol(psi, op, cfg, bin_center=1.0, bin_width=0.4,
                              runs=100_000, seed=1, compare_strength=1.2)
    assert abs(est.value - ref) <= 0.05 * abs(ref) + 4.0 * est.stderr
    bias = {mu: abs(v - ref) for mu, v in est.diagnostics["estimates"].items()}
    assert bias[0.08] <= bias[1.2]
    assert time.perf_counter() - t0 <= 300.0


def test_strong_measurement_reproduces_born_weights_and_repeats():
    amps = np.array([np.sqrt(0.8), np.sqrt(0.2)], dtype=complex)
    b = np.diag([1.0, -1.0])
    cfg = PointerConfig(strength=12.0, width=1.0, center=0.0, window=1.0,
                        steps=48)
    outcomes, _, values, _ = strong_measure_batch(amps, b, cfg, 10_000,
                                                  seed=21)
    freq_up = float(np.mean(outcomes == values[1]))
    se = np.sqrt(0.8 * 0.2 / 10_000)
    assert abs(freq_up - 0.8) <= 4.0 * se
    for i in range(1000):
        first = strong_measure(amps, b, cfg, seed=33, run_key=i)
        again = strong_measure(first.post_state, b, cfg, seed=33,
                               run_key=5000 + i)
        assert again.outcome == first.outcome


def test_dwell_estimators_agree_on_the_barrier_scenario():
    cfg = parse_config(SCENARIO_DIR / "barrier_dwell.cfg")
    g, masses, ham = build_hamiltonian_from(cfg)
    psi = build_initial(cfg, g, masses, cfg.hbar)
    ev = cfg.get("evolution")
    hist = propagate(psi, ham, dt=ev.get("dt"), steps=ev.get("steps"),
                     store_every=ev.get("store_every", 1))
    ens = integrate(sample_initial(psi, 10_000, seed=cfg.seed), hist, masses,
                    substeps=cfg.get("ensemble").get("substeps", 1))
    reg = cfg.get("region")
    res = dwell_time(ens, RegionSpec(reg.get("lo"), reg.get("hi")), hist)
    assert res.warnings == []
    rel = abs(res.trajectory_mean.value - res.occupancy_integral) \
        / abs(res.occupancy_integral)
    assert rel <= 0.02


def test_static_hamiltonian_work_averages_to_zero_and_telescopes():
    g = Grid.line(-12.0, 12.0, 256)
    pot = PotentialSpec(u_x=lambda x: 0.5 * x**2)
    ham = build_hamiltonian(HamiltonianSpec((1.0,), pot), g)
    _, states = eigenstates_1d(g, pot, 1.0, 1.0, 2)
    amps = 0.8 * states[0].amplitudes + 0.6 * states[1].amplitudes
    psi = Wavefunction(g, amps, normalized=False).normalize()
    hist = propagate(psi, ham, dt=0.005, steps=120, store_every=30)
    ens = integrate(sample_initial(psi, 4000, seed=9), hist, (1.0,))
    flds = [local_expectation(hist.psi(i), hamiltonian_operator(ham))
            for i in range(len(hist))]
    w02, _ = trajectory_work(ens, flds[2], flds[0], 2, 0)
    w24, _ = trajectory_work(ens, flds[4], flds[2], 4, 2)
    w04, f04 = trajectory_work(ens, flds[4], flds[0], 4, 0)
    assert np.abs((w02 + w24) - w04).max() <= 1e-12
    vals = w04[~(f04 | ens.failed)]
    se = vals.std(ddof=1) / np.sqrt(len(vals))
    assert abs(vals.mean()) <= 4.0 * se


def test_unravelled_density_matrix_converges_to_the_partial_trace():
    spec = damping_collision(0.35)
    psi0 = np.array([0.0, 1.0], dtype=complex)
    t0 = time.perf_counter()
    exact = partial_trace_oracle(spec, psi0, 20, cap=2 * 2**20)

    def gap_series(records, seed):
        run = unravel(spec, psi0, 20, records, seed=seed)
        rho = reduced_density(run.states)
        return np.array([trace_distance(rho[k], exact[k])
                         for k in range(21)])

    assert (gap_series(5000, seed=1000) <= 5.0 / np.sqrt(5000)).all()

    # the per-run gap is noisy (few effective degrees of freedom), so the
    # error statistic is the RMS trace distance over 128 replicas; its
    # square is an unbiased-variance sum and must halve per doubling
    rms = {}
    for records in (1250, 2500, 5000):
        sq = [np.mean(gap_series(records, seed=1000 + rep)[1:] ** 2)
              for rep in range(128)]
        rms[records] = float(np.sqrt(np.mean(sq)))
    first = rms[1250] / rms[2500]
    second = rms[2500] / rms[5000]
    assert 1.25 <= first <= 1.60
    assert 1.25 <= second <= 1.60
    assert 1.7 <= rms[1250] / rms[5000] <= 2.3
    assert time.perf_counter() - t0 <= 120.0


def test_recycled_ancilla_memory_exceeds_the_sampling_bound(tmp_path):
    code = cli.main(["run", str(SCENARIO_DIR / "memory_diagnose.cfg"),
                     "--out", str(tmp_path)])
    assert code == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["results"]["witness_ratio"] >= 3.0


def test_crossing_charge_and_current_oracles_agree():
    times = np.linspace(0.0, 3.0, 601)
    path = -1.0 + 2.0 * times
    device = RegionSpec(0.0, 4.0)
    ens = Ensemble(times=times, positions=path[:, None, None], seed=0,
                   source_id="synthetic")
    vel = np.full((len(times), 1), 2.0)
    res = total_current(ens, device, charge=1.0, velocities=vel)
    assert abs(res.charge_collected[0] - 1.0) <= 0.01

    dt = times[1] - times[0]
    ramo = 1.0 / device.length * 2.0
    for surface in (1.0, 2.0, 3.0):
        mid, cur = gauss_law_current(times, path, device, surface)
        assert abs(np.sum(cur) * dt - 1.0) <= 0.01
        inside = device.contains(path[1:]) & device.contains(path[:-1])
        away = np.abs(mid - (surface + 1.0) / 2.0) > 2 * dt
        assert np.abs(cur[inside & away] - ramo).max() <= 0.02 * ramo
