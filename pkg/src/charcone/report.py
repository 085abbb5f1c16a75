"""Export of constructed fields, residual summaries and figures."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .construction import ConeRun, assemble_state
from .eos import closure_residual

BASE_COLUMNS = (
    "t", "theta1", "theta2", "x1", "x2", "x3", "rho", "v1", "v2", "v3", "s", "c", "w", "wbar",
    "vslash1", "vslash2", "vslash3", "v_That", "V", "null_residual",
)
JET_COLUMNS = (
    "kappa", "That_rho", "That_v1", "That_v2", "That_v3", "That_s", "That2_s", "zeta1", "zeta2", "eta1", "eta2",
)
LEVELS_EXPORTED = 50


def export_levels(n_levels: int, stride: int | None = None) -> np.ndarray:
    """Level indices written to the CSV: every ``stride``-th level and the last."""
    stride = stride or max(1, (n_levels - 1) // LEVELS_EXPORTED)
    idx = np.arange(0, n_levels, stride)
    if idx[-1] != n_levels - 1:
        idx = np.append(idx, n_levels - 1)
    return idx


def field_table(run: ConeRun, jets=None, levels=None) -> tuple:
    """Column names and a 2-D array with one row per (level, grid point)."""
    f = run.fields
    levels = np.arange(run.levels) if levels is None else np.asarray(levels)
    th1, th2 = run.problem.grid().mesh()
    npts = th1.size
    state = assemble_state(run)

    def flat(a):
        return a[levels].reshape(len(levels), -1)

    def comps(a, k):
        return [a[levels][:, i].reshape(len(levels), -1) for i in range(k)]

    t = np.repeat(run.times[levels], npts).reshape(len(levels), -1)
    cols = [t, np.broadcast_to(th1.ravel(), t.shape), np.broadcast_to(th2.ravel(), t.shape)]
    cols += comps(f["position"], 3)
    cols += [flat(f["rho"])] + comps(f["v"], 3) + [flat(f["s"]), flat(f["c"]), flat(f["w"]), flat(f["wbar"])]
    cols += comps(f["vslash"], 3) + [flat(f["v_normal"]), flat(f["speed"]), flat(state["null_residual"])]
    names = list(BASE_COLUMNS)
    if jets is not None:
        j = jets.fields
        cols += [flat(j["kappa"]), flat(j["T_rho"])] + comps(j["T_v"], 3)
        cols += [flat(j["T_s"]), flat(j["T2_s"])] + comps(j["zeta"], 2) + comps(j["eta"], 2)
        names += JET_COLUMNS
    table = np.stack([np.asarray(c, dtype=float).ravel() for c in cols], axis=1)
    return names, table


def write_csv(path, names, table):
    np.savetxt(path, table, fmt="%.17g", delimiter=",", header=",".join(names), comments="")


def read_csv(path) -> dict:
    """Columns of a written fields file by name."""
    with open(path) as fh:
        names = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {n: data[:, i] for i, n in enumerate(names)}


def null_residual_from_columns(cols: dict) -> np.ndarray:
    return -cols["v_That"] + cols["c"] - cols["V"]


def residual_summary(run: ConeRun, jets=None, exported=None) -> dict:
    """Residuals over all stored levels; ``exported`` restricts one entry to written levels."""
    f = run.fields
    nr = np.abs(-f["v_normal"] + f["c"] - f["speed"])
    clos = np.abs(closure_residual(run.problem.eos, f["w"], f["wbar"], f["speed"], f["s"]))
    rel = clos / np.maximum(1.0, np.abs(f["speed"]))
    out = {
        "levels": int(run.levels),
        "t_reached": float(run.times[-1]),
        "null_residual": {"max": float(nr.max()), "mean": float(nr.mean())},
        "closure_residual": {"max": float(clos.max()), "relative_max": float(rel.max())},
        "corner": corner_summary(run.corner),
        "kappa_min": None,
        "truncation": None,
    }
    if exported is not None:
        out["null_residual"]["exported_max"] = float(nr[exported].max())
    if jets is not None:
        out["kappa_min"] = float(np.min(jets.fields["kappa"]))
        out["cb_residual_max"] = float(np.max(np.abs(jets.fields["cb_residual"])))
    return out


def corner_summary(rep) -> dict | None:
    if rep is None:
        return None
    return {
        "passed": rep.passed,
        "null_residual": rep.null_residual,
        "null_location": list(rep.null_location),
        "data_mismatch": rep.data_mismatch,
        "data_location": list(rep.data_location),
        "tol": rep.tol,
        "message": rep.message,
    }


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------


def render_figures(out_dir, run: ConeRun, jets=None) -> list:
    """PNG maps of the last level and time histories; returns the written paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    f = run.fields
    th1, th2 = run.problem.grid().mesh()
    nres = -f["v_normal"] + f["c"] - f["speed"]
    maps = [("rho", f["rho"][-1]), ("wbar", f["wbar"][-1]), ("v_That", f["v_normal"][-1]), ("null residual", nres[-1])]
    if jets is not None:
        maps[-1] = ("kappa", jets.fields["kappa"][-1])
    fig, axes = plt.subplots(2, 2, figsize=(9, 7), constrained_layout=True)
    for ax, (name, val) in zip(axes.flat, maps):
        im = ax.pcolormesh(th2, th1, val, shading="auto")
        ax.set_title(f"{name} at t = {run.times[-1]:.4g}")
        ax.set_xlabel("theta2")
        ax.set_ylabel("theta1")
        fig.colorbar(im, ax=ax)
    paths = [out_dir / "fields_final.png"]
    fig.savefig(paths[0], dpi=100, metadata={"Software": None})
    plt.close(fig)

    axes_t = tuple(range(1, f["rho"].ndim))
    n = 3 if jets is not None else 2
    fig, axes = plt.subplots(n, 1, figsize=(7, 2.6 * n), sharex=True, constrained_layout=True)
    t = run.times
    axes[0].plot(t, f["rho"].min(axis=axes_t), label="min rho")
    axes[0].plot(t, f["rho"].max(axis=axes_t), label="max rho")
    axes[0].legend()
    axes[1].semilogy(t, np.maximum(np.abs(nres).max(axis=axes_t), 1e-300))
    axes[1].set_ylabel("max |null residual|")
    if jets is not None:
        axes[2].plot(jets.times, jets.fields["kappa"].min(axis=axes_t), label="min kappa")
        axes[2].plot(jets.times, jets.fields["T_rho"].mean(axis=axes_t), label="mean That rho")
        axes[2].legend()
    axes[-1].set_xlabel("t")
    paths.append(out_dir / "history.png")
    fig.savefig(paths[1], dpi=100, metadata={"Software": None})
    plt.close(fig)
    return paths
