"""Figure rendering for experiment tables (PNG files written next to the CSVs)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .experiments import Table  # noqa: E402

_SAVE_KW = dict(dpi=120, metadata={"Software": None})


def _grid(table: Table, value: str):
    x, z, v = table.array("x_m"), table.array("z_m"), table.array(value)
    xs, zs = np.unique(x), np.unique(z)
    img = np.full((len(zs), len(xs)), np.nan)
    img[np.searchsorted(zs, z), np.searchsorted(xs, x)] = v
    return xs, zs, img


def _image(table: Table, value: str, label: str, title: str, path):
    xs, zs, img = _grid(table, value)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    mesh = ax.pcolormesh(xs, zs, img, shading="nearest", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label=label)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("z [m]")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def _lines(series, xlabel, ylabel, title, path, logx=False, logy=False, marker="o"):
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, (x, y) in series.items():
        ax.plot(x, y, marker=marker, ms=3, label=label)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    if len(series) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def _group(table: Table, keys, x, y):
    out = {}
    cols = [table.columns.index(k) for k in keys]
    ix, iy = table.columns.index(x), table.columns.index(y)
    for r in table.rows:
        label = ", ".join(f"{k}={r[c]}" for k, c in zip(keys, cols)) or y
        xs, ys = out.setdefault(label, ([], []))
        xs.append(float(r[ix]))
        ys.append(float(r[iy]))
    return out


def plot_gl_convergence(table: Table, path):
    n = table.array("n_points")
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.8))
    for ax, col, lab in zip(axes, ["crb_integral_value", "power_integral_value"], ["Tr{CRB} [m^2]", "power [A^2]"]):
        ax.plot(n, table.array(col), marker="o", ms=3)
        ax.set_xlabel("GL points per axis")
        ax.set_ylabel(lab)
        ax.set_yscale("log" if col.startswith("crb") else "linear")
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def plot_optimize(table: Table, path):
    if "rule" in table.columns:
        # median objective per rule and iteration
        series = {}
        rules = sorted(set(table.column("rule")), key=table.column("rule").index)
        for rule in rules:
            rows = [r for r in table.rows if r[0] == rule]
            iters = sorted({int(r[2]) for r in rows})
            med = [np.median([float(r[3]) for r in rows if int(r[2]) == k]) for k in iters]
            series[rule] = (iters, med)
    else:
        series = {"objective": (table.array("iter"), table.array("objective"))}
    _lines(series, "iteration", "Tr{CRB} [m^2]", "SMGD convergence", path, logy=True, marker="")


def plot_crb_map(table: Table, path):
    _image(table, "log10_crb", "log10 Tr{CRB}", "CRB over the x-z plane", path)


def plot_beam_pattern(table: Table, path):
    _image(table, "value_normalized", "normalized gain", "beam pattern", path)


def plot_sweep(table: Table, path, x="power_mA2"):
    keys = [k for k in ("frequency_ghz", "num_targets", "power_mA2") if k != x]
    series = _group(table, keys, x, "crb")
    _lines(series, x, "Tr{CRB} [m^2]", "optimized CRB", path, logx=(x == "power_mA2"), logy=True)


def plot_robustness(table: Table, path):
    series = _group(table, ["axis"], "offset_m", "crb_at_truth")
    _lines(series, "position offset [m]", "Tr{CRB} at truth [m^2]", "robustness to position error", path, logy=True)


def plot_compare_spda(table: Table, path):
    fig, ax = plt.subplots(figsize=(4.5, 4))
    ax.bar(table.column("architecture"), table.array("crb"), color=["tab:blue", "tab:orange"])
    ax.set_yscale("log")
    ax.set_ylabel("optimized Tr{CRB} [m^2]")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def plot_mle_spectrum(table: Table, path):
    series = _group(table, ["axis"], "coordinate_m", "spectrum_value")
    fig, axes = plt.subplots(1, len(series), figsize=(4.5 * len(series), 3.6), squeeze=False)
    for ax, (label, (x, y)) in zip(axes[0], series.items()):
        y = np.asarray(y)
        ax.plot(x, y / y.max())
        ax.set_xlabel(f"candidate coordinate [m] ({label})")
        ax.set_ylabel("normalized likelihood")
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def plot_nmse(table: Table, path):
    _lines({"nmse": (table.array("step_m"), table.array("nmse"))}, "search step [m]", "NMSE",
           "grid-search NMSE", path, logx=True, logy=True)


PLOTTERS = {
    "gl-convergence": plot_gl_convergence,
    "optimize": plot_optimize,
    "crb-map": plot_crb_map,
    "beam-pattern": plot_beam_pattern,
    "sweep-power": lambda t, p: plot_sweep(t, p, "power_mA2"),
    "sweep-frequency": lambda t, p: plot_sweep(t, p, "frequency_ghz"),
    "robustness": plot_robustness,
    "compare-spda": plot_compare_spda,
    "mle-spectrum": plot_mle_spectrum,
    "nmse-step": plot_nmse,
}


def render(kind: str, table: Table, path) -> None:
    PLOTTERS[kind](table, path)
