"""Executes validated scenario configs and writes tables, figures, summary.

Every run produces delimited tables stamped with the config hash, one PNG
figure, and a summary.json with checksums of each data file.  Reruns with the
same config and seed reproduce the data files byte for byte; only the wall
time in the summary differs.
"""

import json
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import plots
from .conditional import conditional_pipeline, ewf_diagnostic
from .errors import ConfigurationError
from .fileio import sha256_of, write_report, write_snapshot, write_table
from .measurement import PointerConfig, strong_measure, strong_measure_batch, \
    weak_value_protocol
from .observables import RegionSpec, dwell_time, ensemble_expectation, \
    gauss_law_current, hamiltonian_operator, kinetic_operator, \
    local_expectation, local_field_integral, momentum_operator, \
    position_operator, quadrature_expectation, total_current, \
    trajectory_work, two_time_correlation
from .openquantum import damping_collision, markovianity_diagnostic, \
    partial_swap_collision, partial_trace_oracle, reduced_density, \
    trace_distance, unravel
from .scenarios import build_grid, build_hamiltonian_from, build_initial, \
    build_masses
from .trajectories import Ensemble, integrate, sample_initial
from .wavefield import propagate, resolution_diagnostic


class OutputSet:
    """Collects the files a run writes, for checksumming in the summary."""

    def __init__(self, out_dir, config_hash, units):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.config_hash = config_hash
        self.units = units
        self.files = []
        plots.set_meta(Description=f"config_hash={config_hash}; "
                                   f"units={units}")

    def table(self, name, columns, extra=()):
        path = write_table(self.dir / name, columns, self.config_hash,
                           self.units, extra)
        self.files.append(path)
        return path

    def snapshot(self, name, psi):
        path = write_snapshot(psi, self.dir / name, self.config_hash,
                              self.units)
        self.files.append(path)
        return path

    def figure(self, name, draw):
        path = draw(str(self.dir / name))
        self.files.append(Path(path))
        return path

    def checksums(self):
        return {p.name: sha256_of(p) for p in self.files}


def _operator_by_name(name, grid, masses, ham, hbar):
    if name == "position":
        return position_operator(grid)
    if name == "position_squared":
        return position_operator(grid, fn=lambda x: x**2, label="x^2")
    if name == "momentum":
        return momentum_operator(grid, hbar=hbar)
    if name == "kinetic":
        return kinetic_operator(grid, masses, hbar=hbar)
    if name == "hamiltonian":
        return hamiltonian_operator(ham)
    raise ConfigurationError(f"no operator named {name!r}")


def _evolution(cfg):
    ev = cfg.get("evolution")
    return ev["dt"], ev["steps"], ev.get("store_every", 1)


def _history_and_ensemble(cfg, seed):
    grid, masses, ham = build_hamiltonian_from(cfg)
    psi0 = build_initial(cfg, grid, masses, cfg.hbar)
    warnings = resolution_diagnostic(ham, psi0)
    dt, steps, store_every = _evolution(cfg)
    history = propagate(psi0, ham, dt, steps, store_every)
    ens_cfg = cfg.get("ensemble")
    ens0 = sample_initial(psi0, ens_cfg.get("count", 1000), seed)
    ens = integrate(ens0, history, masses, cfg.hbar,
                    substeps=ens_cfg.get("substeps", 1))
    return grid, masses, ham, history, ens, warnings


def _moment_columns(history):
    times = history.times
    cols = [("step", "int", np.arange(len(times))),
            ("time", "float", times)]
    norms, means, variances, axes = [], [], [], history.grid.ndim
    for i in range(len(times)):
        rho = np.abs(history.amps[i]) ** 2
        w = history.grid.cell * rho
        norms.append(w.sum())
        row_mean, row_var = [], []
        for ax in range(axes):
            x = history.grid.nodes(ax)
            marg = w.sum(axis=tuple(a for a in range(axes) if a != ax)) \
                if axes > 1 else w
            mu = float((x * marg).sum() / marg.sum())
            row_mean.append(mu)
            row_var.append(float(((x - mu) ** 2 * marg).sum() / marg.sum()))
        means.append(row_mean)
        variances.append(row_var)
    cols.append(("norm", "float", np.array(norms)))
    names = "xy"
    for ax in range(axes):
        cols.append((f"mean_{names[ax]}", "float",
                     np.array([m[ax] for m in means])))
        cols.append((f"var_{names[ax]}", "float",
                     np.array([v[ax] for v in variances])))
    return cols


def run_evolve(cfg, out, oracle, seed):
    grid, masses, ham = build_hamiltonian_from(cfg)
    psi0 = build_initial(cfg, grid, masses, cfg.hbar)
    warnings = resolution_diagnostic(ham, psi0)
    dt, steps, store_every = _evolution(cfg)
    history = propagate(psi0, ham, dt, steps, store_every)
    out.table("moments.csv", _moment_columns(history))
    out.snapshot("final_state.csv", history.psi(len(history) - 1))
    out.figure("evolve.png", lambda p: plots.plot_evolve(p, history))
    e0 = ham.expectation(psi0)
    e1 = ham.expectation(history.psi(len(history) - 1))
    results = {"final_norm": history.psi(len(history) - 1).norm(),
               "energy_initial": _real(e0), "energy_final": _real(e1),
               "energy_drift": _real(e1 - e0)}
    return results, warnings


def _real(x):
    return float(np.real(x))


def run_trajectories(cfg, out, oracle, seed):
    grid, masses, ham, history, ens, warnings = \
        _history_and_ensemble(cfg, seed)
    stored = min(cfg.get("ensemble").get("stored", 200), ens.count)
    T = len(ens.times)
    step_col = np.repeat(np.arange(T), stored)
    time_col = np.repeat(ens.times, stored)
    traj_col = np.tile(np.arange(stored), T)
    cols = [("step", "int", step_col), ("time", "float", time_col),
            ("trajectory", "int", traj_col),
            ("x", "float", ens.positions[:, :stored, 0].ravel())]
    if ens.ndim > 1:
        cols.append(("y", "float", ens.positions[:, :stored, 1].ravel()))
    out.table("positions.csv", cols)

    ens_std = ens.positions[:, :, 0].std(axis=1)
    wf_std = []
    for i in range(len(history)):
        rho = np.abs(history.amps[i]) ** 2
        w = history.grid.cell * rho
        if history.grid.ndim > 1:
            w = w.sum(axis=1)
        x = history.grid.nodes(0)
        mu = (x * w).sum() / w.sum()
        wf_std.append(np.sqrt(((x - mu) ** 2 * w).sum() / w.sum()))
    out.table("spread.csv", [("time", "float", ens.times),
                             ("ensemble_std", "float", ens_std),
                             ("wavefunction_std", "float",
                              np.array(wf_std))])
    out.figure("trajectories.png",
               lambda p: plots.plot_trajectories(p, history, ens))
    results = {"count": ens.count, "failed": int(ens.failed.sum()),
               "reflections": ens.reflections,
               "final_spread_ratio": float(ens_std[-1] / ens_std[0])}
    return results, warnings


def run_cwf(cfg, out, oracle, seed):
    grid, masses, ham = build_hamiltonian_from(cfg)
    psi0 = build_initial(cfg, grid, masses, cfg.hbar)
    warnings = resolution_diagnostic(ham, psi0)
    dt, steps, _ = _evolution(cfg)
    c = cfg.get("conditional")
    result = conditional_pipeline(psi0, ham, dt, steps,
                                  c.get("trajectories", 4), seed,
                                  include_drift=c.get("include_drift", True),
                                  store_every=c.get("store_every", 0))
    T, n = result.errors.shape
    step_col = np.repeat(np.arange(T), n)
    time_col = np.repeat(result.times, n)
    traj_col = np.tile(np.arange(n), T)
    out.table("cwf_errors.csv",
              [("step", "int", step_col), ("time", "float", time_col),
               ("trajectory", "int", traj_col),
               ("slice_error", "float", result.errors.ravel()),
               ("raw_norm", "float", result.norms.ravel())])
    out.table("cwf_paths.csv",
              [("step", "int", step_col), ("time", "float", time_col),
               ("trajectory", "int", traj_col),
               ("x", "float", result.paths[:, :, 0].ravel()),
               ("y", "float", result.paths[:, :, 1].ravel())])
    if result.stored["times"]:
        xs = grid.nodes(0)
        t_col, k_col, x_col = [], [], []
        re_col, im_col, wr_col, wi_col = [], [], [], []
        for t, tables in zip(result.stored["times"],
                             result.stored["tables"]):
            for k, (amps, corr) in enumerate(tables):
                t_col.append(np.full(len(xs), t))
                k_col.append(np.full(len(xs), k))
                x_col.append(xs)
                re_col.append(amps.real)
                im_col.append(amps.imag)
                wr_col.append(corr.real)
                wi_col.append(corr.imag)
        out.table("cwf_fields.csv",
                  [("time", "float", np.concatenate(t_col)),
                   ("trajectory", "int",
                    np.concatenate(k_col).astype(int)),
                   ("x", "float", np.concatenate(x_col)),
                   ("re", "float", np.concatenate(re_col)),
                   ("im", "float", np.concatenate(im_col)),
                   ("corr_re", "float", np.concatenate(wr_col)),
                   ("corr_im", "float", np.concatenate(wi_col))])
    out.figure("cwf.png", lambda p: plots.plot_cwf(p, result.times,
                                                   result.paths,
                                                   result.errors))
    psi0_energy = abs(_real(ham.expectation(psi0)))
    diag = ewf_diagnostic(result.correlations, result.couplings,
                          max(psi0_energy, 1e-12))
    results = {"final_max_error": float(result.errors[-1].max()),
               "flagged_trajectories": int(result.flags.sum()),
               "ewf_flag": bool(diag.is_effective),
               "correlation_dispersion": float(diag.correlation_dispersion),
               "coupling_dispersion": float(diag.coupling_dispersion)}
    if oracle:
        plain = conditional_pipeline(psi0, ham, dt, steps,
                                     c.get("trajectories", 4), seed,
                                     include_drift=False,
                                     store_every=0)
        results["final_max_error_without_drift"] = \
            float(plain.errors[-1].max())
    return results, warnings


def run_observable(cfg, out, oracle, seed):
    grid, masses, ham, history, ens, warnings = \
        _history_and_ensemble(cfg, seed)
    ob = cfg.get("observable")
    idx = ob.get("step", -1) % len(history)
    psi_t = history.psi(idx)
    op = _operator_by_name(ob["operator"], grid, masses, ham, cfg.hbar)
    fld = local_expectation(psi_t, op)
    record = ensemble_expectation(ens, fld, idx)
    quad = quadrature_expectation(psi_t, op)
    integral = local_field_integral(psi_t, fld)
    names = ["trajectory_mean", "quadrature", "field_integral_re",
             "field_integral_im"]
    values = [record.value, _real(quad), integral.real, integral.imag]
    stderrs = [record.stderr, 0.0, 0.0, 0.0]
    counts = [record.count, 0, 0, 0]
    flagged = [record.flagged, 0, 0, 0]
    out.table("observable.csv",
              [("estimator", "str", names), ("value", "float", values),
               ("stderr", "float", stderrs), ("count", "int", counts),
               ("flagged", "int", flagged)],
              extra=(f"operator={op.label}", f"step={idx}"))
    samples, _ = fld.at(ens.at(idx))
    out.figure("observable.png",
               lambda p: plots.plot_observable(p, samples, _real(quad),
                                               record.value, op.label))
    results = {"operator": op.label, "step": idx,
               "trajectory_mean": record.value,
               "trajectory_stderr": record.stderr,
               "quadrature": _real(quad),
               "quadrature_gap": record.value - _real(quad)}
    return results, warnings


def run_weakvalue(cfg, out, oracle, seed):
    grid, masses, ham = build_hamiltonian_from(cfg)
    psi = build_initial(cfg, grid, masses, cfg.hbar)
    wv = cfg.get("weakvalue")
    op = _operator_by_name(wv.get("operator", "momentum"), grid, masses,
                           ham, cfg.hbar)
    pointer = PointerConfig(wv["strength"], wv.get("pointer_width", 1.0),
                            0.0, wv.get("window", 1.0), wv.get("steps", 64))
    compare = wv.get("compare_strength", 0.0) or None
    est = weak_value_protocol(psi, op, pointer, wv["bin_center"],
                              wv["bin_width"], wv.get("runs", 100000), seed,
                              hbar=cfg.hbar, compare_strength=compare,
                              keep_samples=True)
    samples = est.diagnostics.pop("samples")
    out.table("readings.csv",
              [("run", "int", np.arange(est.runs)),
               ("pointer", "float", samples["pointer"]),
               ("position", "float", samples["position"]),
               ("accepted", "bool", samples["accepted"])],
              extra=(f"strength={est.strength}",))
    fld = local_expectation(psi, op)
    reference = float(fld.at(np.array([[wv["bin_center"]]]))[0][0])
    strengths = sorted(est.diagnostics["estimates"])
    estimates = [est.diagnostics["estimates"][s] for s in strengths]
    stderrs = [est.diagnostics.get("stderr", {}).get(s, est.stderr)
               for s in strengths]
    out.table("weakvalue.csv",
              [("strength", "float", strengths),
               ("estimate", "float", estimates),
               ("stderr", "float", stderrs),
               ("reference", "float", [reference] * len(strengths))],
              extra=(f"accepted={est.accepted}", f"runs={est.runs}"))
    out.figure("weakvalue.png",
               lambda p: plots.plot_weakvalue(p, strengths, estimates,
                                              stderrs, reference))
    results = {"estimate": est.value, "stderr": est.stderr,
               "accepted": est.accepted, "runs": est.runs,
               "local_value": reference,
               "bias": est.value - reference}
    return results, []


def run_strongmeasure(cfg, out, oracle, seed):
    sm = cfg.get("strongmeasure")
    psi_levels = np.asarray(sm["amplitudes"], dtype=complex)
    coupling = np.diag(np.asarray(sm["operator_diag"], dtype=float))
    pointer = PointerConfig(sm["strength"], sm.get("pointer_width", 1.0),
                            0.0, sm.get("window", 1.0), sm.get("steps", 48))
    runs = sm.get("runs", 10000)
    outcomes, z, values, weights = strong_measure_batch(
        psi_levels, coupling, pointer, runs, seed)
    freqs = np.array([(outcomes == v).mean() for v in values])
    counts = np.array([(outcomes == v).sum() for v in values])
    out.table("outcomes.csv",
              [("value", "float", values),
               ("born_weight", "float", weights),
               ("frequency", "float", freqs),
               ("count", "int", counts)],
              extra=(f"runs={runs}",))
    out.figure("strongmeasure.png",
               lambda p: plots.plot_strongmeasure(p, values, freqs, weights))
    results = {"runs": runs,
               "max_born_gap": float(np.abs(freqs - weights).max())}
    if oracle:
        repeats = min(runs, 50)
        matches = 0
        for k in range(repeats):
            rec = strong_measure(psi_levels, coupling, pointer, seed,
                                 run_key=k)
            again = strong_measure(rec.post_state, coupling, pointer, seed,
                                   run_key=10_000 + k)
            matches += int(np.isclose(rec.outcome, again.outcome))
        results["repeatability"] = matches / repeats
    return results, []


def run_correlate(cfg, out, oracle, seed):
    grid, masses, ham, history, ens, warnings = \
        _history_and_ensemble(cfg, seed)
    co = cfg.get("correlate")
    i1 = co.get("step_1", 0) % len(history)
    i2 = co.get("step_2", -1) % len(history)
    op_a = _operator_by_name(co["operator_a"], grid, masses, ham, cfg.hbar)
    op_b = _operator_by_name(co["operator_b"], grid, masses, ham, cfg.hbar)
    fld_a = local_expectation(history.psi(i2), op_a)
    fld_b = local_expectation(history.psi(i1), op_b)
    record = two_time_correlation(ens, fld_a, fld_b, i2, i1)
    out.table("correlation.csv",
              [("estimator", "str", ["two_time"]),
               ("value", "float", [record.value]),
               ("stderr", "float", [record.stderr]),
               ("count", "int", [record.count]),
               ("flagged", "int", [record.flagged])],
              extra=(f"operators={op_a.label},{op_b.label}",
                     f"steps={i2},{i1}"))
    a_vals, _ = fld_a.at(ens.at(i2))
    b_vals, _ = fld_b.at(ens.at(i1))
    stored = min(ens.count, 2000)
    out.table("correlation_samples.csv",
              [("trajectory", "int", np.arange(stored)),
               ("early_value", "float", b_vals[:stored]),
               ("late_value", "float", a_vals[:stored])])
    out.figure("correlate.png",
               lambda p: plots.plot_correlate(p, b_vals, a_vals,
                                              (op_a.label, op_b.label)))
    results = {"two_time_mean": record.value, "stderr": record.stderr,
               "count": record.count}
    return results, warnings


def run_work(cfg, out, oracle, seed):
    grid, masses, ham, history, ens, warnings = \
        _history_and_ensemble(cfg, seed)
    wk = cfg.get("work")
    i0 = wk.get("step_start", 0) % len(history)
    i1 = wk.get("step_end", -1) % len(history)
    if i1 <= i0:
        raise ConfigurationError("work window needs step_end after "
                                 "step_start")
    op = hamiltonian_operator(ham)
    fields = {i: local_expectation(history.psi(i), op)
              for i in {i0, i1}}
    works, flags = trajectory_work(ens, fields[i1], fields[i0], i1, i0)
    telescope_residual = None
    windows = wk.get("windows", 1)
    if windows > 1:
        cuts = np.linspace(i0, i1, windows + 1).round().astype(int)
        cuts = np.unique(cuts)
        for i in cuts:
            if i not in fields:
                fields[i] = local_expectation(history.psi(i), op)
        partial = np.zeros(ens.count)
        for a, b in zip(cuts[:-1], cuts[1:]):
            w, fl = trajectory_work(ens, fields[b], fields[a], b, a)
            partial += w
            flags |= fl
        telescope_residual = float(np.abs(partial - works).max())
    ok = ~flags
    mean = float(works[ok].mean())
    se = float(works[ok].std(ddof=1) / np.sqrt(ok.sum()))
    out.table("work.csv",
              [("trajectory", "int", np.arange(ens.count)),
               ("work", "float", works),
               ("flagged", "bool", flags)],
              extra=(f"steps={i0},{i1}",))
    out.table("work_summary.csv",
              [("estimator", "str", ["mean_work"]),
               ("value", "float", [mean]),
               ("stderr", "float", [se]),
               ("count", "int", [int(ok.sum())]),
               ("flagged", "int", [int(flags.sum())])])
    out.figure("work.png", lambda p: plots.plot_work(p, works[ok], mean))
    results = {"mean_work": mean, "stderr": se, "flagged": int(flags.sum())}
    if telescope_residual is not None:
        results["telescoping_residual"] = telescope_residual
    return results, warnings


def run_dwell(cfg, out, oracle, seed):
    grid, masses, ham, history, ens, warnings = \
        _history_and_ensemble(cfg, seed)
    rg = cfg.get("region")
    region = RegionSpec(rg["lo"], rg["hi"])
    res = dwell_time(ens, region, history)
    out.table("dwell.csv",
              [("trajectory", "int", np.arange(ens.count)),
               ("dwell", "float", res.per_trajectory),
               ("failed", "bool", ens.failed)],
              extra=(f"region={region.lo},{region.hi}",))
    rel_diff = (abs(res.trajectory_mean.value - res.occupancy_integral)
                / abs(res.occupancy_integral))
    out.table("dwell_summary.csv",
              [("estimator", "str", ["trajectory_mean",
                                     "occupancy_integral",
                                     "relative_difference"]),
               ("value", "float", [res.trajectory_mean.value,
                                   res.occupancy_integral, rel_diff]),
               ("stderr", "float", [res.trajectory_mean.stderr, 0.0, 0.0])])
    out.figure("dwell.png",
               lambda p: plots.plot_dwell(p, res.per_trajectory,
                                          res.trajectory_mean.value,
                                          res.occupancy_integral))
    results = {"trajectory_mean": res.trajectory_mean.value,
               "trajectory_stderr": res.trajectory_mean.stderr,
               "occupancy_integral": res.occupancy_integral,
               "estimator_relative_difference": rel_diff,
               "final_occupancy_fraction": res.final_occupancy_fraction}
    return results, warnings + res.warnings


def run_current(cfg, out, oracle, seed):
    cu = cfg.get("current")
    device = RegionSpec(cu["device_lo"], cu["device_hi"])
    charge = cu.get("charge", 1.0)
    warnings = []
    if cu.get("mode", "uniform") == "uniform":
        # single synthetic carrier crossing at constant speed
        v = cu.get("velocity", 1.0)
        margin = 0.15 * device.length
        start, stop = device.lo - margin, device.hi + margin
        steps = cu.get("transit_steps", 400)
        times = np.linspace(0.0, (stop - start) / v, steps + 1)
        path = start + v * times
        positions = path[:, None, None]
        ens = Ensemble(times, positions, seed, source_id="uniform-carrier")
        velocities = np.full((len(times), 1), v)
        current = total_current(ens, device, charge, velocities=velocities)
    else:
        grid, masses, ham, history, ens, warnings = \
            _history_and_ensemble(cfg, seed)
        current = total_current(ens, device, charge, history=history,
                                masses=masses, hbar=cfg.hbar)
    cols = [("time", "float", current.times),
            ("mean_current", "float", current.mean)]
    out.table("current.csv", cols,
              extra=(f"device={device.lo},{device.hi}",
                     f"charge={charge}"))
    gauss = {}
    results = {"mean_collected_charge":
               float(current.charge_collected.mean()),
               "charge_relative_error":
               float(abs(current.charge_collected.mean() - charge)
                     / abs(charge))}
    if oracle:
        eps = cu.get("permittivity", 1.0)
        dt_steps = np.diff(current.times)
        ramo_mid = 0.5 * (current.mean[1:] + current.mean[:-1])
        # both routes are discontinuous while the carrier enters or leaves
        # the device, so compare only on steps fully inside it
        inside = device.contains(ens.positions[:, :, 0]).all(axis=1)
        mask = inside[1:] & inside[:-1]
        gauss_cols = []
        max_gaps, collected = {}, {}
        for s in cu.get("surfaces", (0.5,)):
            mids = None
            acc = np.zeros(len(current.times) - 1)
            for j in range(ens.count):
                mids, vals = gauss_law_current(
                    current.times, ens.positions[:, j, 0], device, s,
                    charge, eps)
                acc += vals
            acc /= ens.count
            name = f"gauss_{s:g}"
            gauss[name] = (mids, acc)
            gauss_cols.append((name, "float", acc))
            scale = np.abs(ramo_mid[mask]).max()
            max_gaps[name] = float(
                np.abs(acc[mask] - ramo_mid[mask]).max() / scale)
            collected[name] = float(np.sum(acc * dt_steps))
        out.table("gauss_current.csv",
                  [("mid_time", "float", mids)] + gauss_cols)
        results["ramo_vs_gauss_max_gap"] = max_gaps
        results["gauss_collected_charge"] = collected
    out.figure("current.png",
               lambda p: plots.plot_current(p, current.times, current.mean,
                                            gauss or None))
    return results, warnings


def _collision_spec(cfg):
    co = cfg.get("collision")
    drift_h = None
    if co.get("drift", "none") == "rabi":
        rate = co.get("drift_rate", 0.0)
        drift_h = 0.5 * rate * np.array([[0.0, 1.0], [1.0, 0.0]])
    dt = co.get("dt", 1.0)
    if co["model"] == "damping":
        spec = damping_collision(co["angle"], dt=dt, drift_h=drift_h)
    else:
        spec = partial_swap_collision(co["angle"],
                                      np.array([1.0, 0.0], dtype=complex),
                                      dt=dt, drift_h=drift_h)
    psi0 = np.asarray(co.get("initial", (0.0, 1.0)), dtype=complex)
    psi0 = psi0 / np.linalg.norm(psi0)
    return co, spec, psi0


def run_unravel(cfg, out, oracle, seed):
    co, spec, psi0 = _collision_spec(cfg)
    steps, records = co.get("steps", 20), co.get("records", 5000)
    run = unravel(spec, psi0, steps, records, seed)
    rho = reduced_density(run.states)
    pops = np.real(np.einsum("tii->ti", rho))
    purity = np.real(np.einsum("tij,tji->t", rho, rho))
    cols = [("step", "int", np.arange(steps + 1)),
            ("time", "float", run.times)]
    for level in range(pops.shape[1]):
        cols.append((f"population_{level}", "float", pops[:, level]))
    cols.append(("purity", "float", purity))

    d = rho.shape[1]
    dens_cols = [("step", "int", np.arange(steps + 1)),
                 ("time", "float", run.times)]
    for i in range(d):
        for j in range(d):
            dens_cols.append((f"rho_{i}{j}_re", "float", rho[:, i, j].real))
            dens_cols.append((f"rho_{i}{j}_im", "float", rho[:, i, j].imag))
    out.table("density.csv", dens_cols)

    shown = min(records, co.get("stored", 25))
    T = steps + 1
    sub = run.states[:, :shown, :]
    step_r = np.repeat(np.arange(T), shown * d)
    rec_r = np.tile(np.repeat(np.arange(shown), d), T)
    lvl_r = np.tile(np.arange(d), T * shown)
    out.table("records.csv",
              [("step", "int", step_r), ("record", "int", rec_r),
               ("level", "int", lvl_r),
               ("re", "float", sub.real.ravel()),
               ("im", "float", sub.imag.ravel())])

    results = {"records": records, "steps": steps,
               "final_populations": [float(p) for p in pops[-1]]}
    if oracle:
        rho_exact = partial_trace_oracle(spec, psi0, steps,
                                         cap=co.get("dimension_cap", 2**14))
        gaps = np.array([trace_distance(a, b)
                         for a, b in zip(rho, rho_exact)])
        cols.append(("fresh_gap", "float", gaps))
        bound = 5.0 / np.sqrt(records)
        results["max_fresh_gap"] = float(gaps.max())
        results["monte_carlo_bound"] = bound
    out.table("populations.csv", cols)
    analytic = None
    if co["model"] == "damping" and co.get("drift", "none") == "none":
        analytic = pops[0, 1] * np.cos(co["angle"]) ** (
            2 * np.arange(steps + 1))
    out.figure("unravel.png",
               lambda p: plots.plot_unravel(p, run.times, pops, analytic))
    return results, []


def run_diagnose(cfg, out, oracle, seed):
    co, spec, psi0 = _collision_spec(cfg)
    report = markovianity_diagnostic(spec, psi0, co.get("steps", 20),
                                     co.get("records", 5000), seed,
                                     cap=co.get("dimension_cap", 2**14))
    out.table("markovianity.csv",
              [("step", "int", np.arange(len(report.times))),
               ("time", "float", report.times),
               ("fresh_gap", "float", report.fresh_gap),
               ("recycled_gap", "float", report.recycled_gap)],
              extra=(f"monte_carlo_bound={report.monte_carlo_bound!r}",))
    out.figure("diagnose.png",
               lambda p: plots.plot_diagnose(p, report.times,
                                             report.fresh_gap,
                                             report.recycled_gap,
                                             report.monte_carlo_bound))
    results = {"witness_ratio": report.witness_ratio,
               "max_fresh_gap": float(report.fresh_gap.max()),
               "max_recycled_gap": float(report.recycled_gap.max()),
               "monte_carlo_bound": report.monte_carlo_bound,
               "markovian": bool(report.fresh_gap.max()
                                 <= report.monte_carlo_bound)}
    return results, []


RUNNERS = {
    "evolve": run_evolve,
    "trajectories": run_trajectories,
    "cwf": run_cwf,
    "observable": run_observable,
    "weakvalue": run_weakvalue,
    "strongmeasure": run_strongmeasure,
    "correlate": run_correlate,
    "work": run_work,
    "dwell": run_dwell,
    "current": run_current,
    "unravel": run_unravel,
    "diagnose": run_diagnose,
}


def run_scenario(cfg, out_dir, seed=None, oracle=False):
    """Execute a validated config; returns the summary dict it writes."""
    started = time.perf_counter()
    seed = cfg.seed if seed is None else seed
    out = OutputSet(out_dir, cfg.config_hash, cfg.units)
    results, warnings = RUNNERS[cfg.kind](cfg, out, oracle, seed)
    import numpy
    import scipy
    summary = {
        "kind": cfg.kind,
        "seed": seed,
        "config_hash": cfg.config_hash,
        "units": cfg.units,
        "oracle": oracle,
        "versions": {"bohmkit": __version__, "numpy": numpy.__version__,
                     "scipy": scipy.__version__},
        "warnings": list(warnings),
        "results": results,
        "outputs": out.checksums(),
        "wall_time_s": round(time.perf_counter() - started, 3),
    }
    write_report(Path(out_dir) / "summary.json", summary)
    return summary
