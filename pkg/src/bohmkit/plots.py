"""One diagnostic figure per scenario kind, rendered headless to PNG."""

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

DPI = 120
META = {"Software": "bohmkit"}
_EXTRA = {}


def set_meta(**kw):
    """Extra PNG text metadata (config hash etc); one scenario per process."""
    _EXTRA.clear()
    _EXTRA.update({k: str(v) for k, v in kw.items()})


def _save(fig, path):
    fig.savefig(path, dpi=DPI, metadata={**META, **_EXTRA})
    plt.close(fig)
    return path


def plot_evolve(path, history):
    fig, ax = plt.subplots(figsize=(7, 4))
    if history.grid.ndim == 1:
        x = history.grid.nodes(0)
        dens = np.abs(history.amps) ** 2
        im = ax.imshow(dens, aspect="auto", origin="lower",
                       extent=(x[0], x[-1], history.times[0],
                               history.times[-1]), cmap="magma")
        ax.set_xlabel("x")
        ax.set_ylabel("t")
        fig.colorbar(im, ax=ax, label="density")
    else:
        xs, ys = history.grid.meshes()
        im = ax.pcolormesh(xs, ys, np.abs(history.amps[-1]) ** 2,
                           cmap="magma", shading="auto")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        fig.colorbar(im, ax=ax, label="final density")
    ax.set_title("wavefunction evolution")
    return _save(fig, path)


def plot_trajectories(path, history, ensemble, shown=60):
    fig, ax = plt.subplots(figsize=(7, 4))
    if history.grid.ndim == 1:
        x = history.grid.nodes(0)
        dens = np.abs(history.amps) ** 2
        ax.imshow(dens, aspect="auto", origin="lower", cmap="Greys",
                  extent=(x[0], x[-1], history.times[0], history.times[-1]))
        for i in range(min(shown, ensemble.count)):
            ax.plot(ensemble.positions[:, i, 0], ensemble.times,
                    lw=0.6, color="tab:blue", alpha=0.7)
        ax.set_xlabel("x")
        ax.set_ylabel("t")
    else:
        for i in range(min(shown, ensemble.count)):
            ax.plot(ensemble.positions[:, i, 0], ensemble.positions[:, i, 1],
                    lw=0.6, alpha=0.7)
        ax.set_xlabel("x")
        ax.set_ylabel("y")
    ax.set_title("quantum trajectories")
    return _save(fig, path)


def plot_cwf(path, times, paths, errors):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    n = paths.shape[1]
    for i in range(n):
        ax1.plot(paths[:, i, 0], paths[:, i, 1], lw=0.8)
    ax1.set_xlabel("x")
    ax1.set_ylabel("y")
    ax1.set_title("joint trajectories")
    for i in range(n):
        ax2.semilogy(times, np.maximum(errors[:, i], 1e-16), lw=0.8)
    ax2.set_xlabel("t")
    ax2.set_ylabel("relative L2 error")
    ax2.set_title("evolved vs sliced")
    fig.tight_layout()
    return _save(fig, path)


def plot_observable(path, samples, quadrature, mean, label):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(samples, bins=40, color="tab:blue", alpha=0.8)
    ax.axvline(quadrature, color="k", lw=1.5, label="quadrature")
    ax.axvline(mean, color="tab:red", ls="--", lw=1.5,
               label="trajectory mean")
    ax.set_xlabel(f"local value of {label}")
    ax.set_ylabel("trajectories")
    ax.legend()
    return _save(fig, path)


def plot_weakvalue(path, strengths, estimates, stderrs, reference):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(strengths, estimates, yerr=stderrs, fmt="o", capsize=4)
    ax.axhline(reference, color="k", lw=1.0, label="local value")
    ax.set_xlabel("coupling strength")
    ax.set_ylabel("weak-value estimate")
    ax.set_xlim(0, max(strengths) * 1.2)
    ax.legend()
    return _save(fig, path)


def plot_strongmeasure(path, values, frequencies, born):
    fig, ax = plt.subplots(figsize=(6, 4))
    pos = np.arange(len(values))
    ax.bar(pos - 0.18, frequencies, width=0.36, label="measured")
    ax.bar(pos + 0.18, born, width=0.36, label="Born weight")
    ax.set_xticks(pos)
    ax.set_xticklabels([f"{v:g}" for v in values])
    ax.set_xlabel("outcome")
    ax.set_ylabel("frequency")
    ax.legend()
    return _save(fig, path)


def plot_correlate(path, early, late, labels):
    fig, ax = plt.subplots(figsize=(5, 4.5))
    ax.plot(early, late, ".", ms=3, alpha=0.5)
    ax.set_xlabel(f"{labels[1]} at first step")
    ax.set_ylabel(f"{labels[0]} at second step")
    ax.set_title("per-trajectory product terms")
    return _save(fig, path)


def plot_work(path, works, mean):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(works, bins=40, color="tab:green", alpha=0.8)
    ax.axvline(mean, color="k", lw=1.5, label=f"mean {mean:.3g}")
    ax.set_xlabel("trajectory work")
    ax.set_ylabel("trajectories")
    ax.legend()
    return _save(fig, path)


def plot_dwell(path, taus, mean, occupancy):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(taus, bins=40, color="tab:purple", alpha=0.8)
    ax.axvline(mean, color="k", lw=1.5, label=f"trajectory mean {mean:.3g}")
    ax.axvline(occupancy, color="tab:red", ls="--", lw=1.5,
               label=f"occupancy route {occupancy:.3g}")
    ax.set_xlabel("dwell time")
    ax.set_ylabel("trajectories")
    ax.legend()
    return _save(fig, path)


def plot_current(path, times, ramo, gauss=None):
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(times, ramo, lw=1.5, label="Ramo-Shockley")
    if gauss:
        for name, (mid, vals) in gauss.items():
            ax.plot(mid, vals, ls="--", lw=1.0, label=name)
    ax.set_xlabel("t")
    ax.set_ylabel("current")
    ax.legend()
    return _save(fig, path)


def plot_unravel(path, times, populations, analytic=None):
    fig, ax = plt.subplots(figsize=(6, 4))
    for level in range(populations.shape[1]):
        ax.plot(times, populations[:, level], lw=1.5,
                label=f"level {level}")
    if analytic is not None:
        ax.plot(times, analytic, "k:", lw=1.2, label="analytic decay")
    ax.set_xlabel("t")
    ax.set_ylabel("population")
    ax.legend()
    return _save(fig, path)


def plot_diagnose(path, times, fresh_gap, recycled_gap, bound):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(times, fresh_gap, "o-", ms=3, label="fresh-ancilla gap")
    ax.plot(times, recycled_gap, "s-", ms=3, label="recycled-ancilla gap")
    ax.axhline(bound, color="k", ls="--", lw=1.0, label="Monte Carlo bound")
    ax.set_xlabel("t")
    ax.set_ylabel("trace distance")
    ax.legend()
    return _save(fig, path)
