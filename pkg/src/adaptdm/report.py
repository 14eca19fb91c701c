"""Plots and text summaries for a finished run directory."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .experiments import read_csv
from .io import atomic_write_text, load_surface_binary
from .zernike import SurfaceMap

CURVE_FILES = ("convergence_epsilon.png", "convergence_rms.png")
HEATMAP_FILES = ("desired.png", "produced.png", "error_global.png", "error_central.png")


class ReportError(RuntimeError):
    pass


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def heatmap_limits(surface: SurfaceMap, symmetric: bool) -> tuple[float, float]:
    """Colour limits over the aperture; symmetric about zero for error maps."""
    values = surface.values
    if symmetric:
        vmax = float(np.abs(values).max()) or 1.0
        return -vmax, vmax
    lo, hi = float(values.min()), float(values.max())
    return (lo, hi) if hi > lo else (lo - 0.5, hi + 0.5)


def save_heatmap(path, surface: SurfaceMap, title: str, symmetric: bool) -> tuple[float, float]:
    plt = _pyplot()
    vmin, vmax = heatmap_limits(surface, symmetric)
    img = np.where(surface.mask, surface.heights_um, np.nan)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(img, origin="lower", cmap="RdBu_r" if symmetric else "viridis", vmin=vmin, vmax=vmax)
    fig.colorbar(im, ax=ax, label="um")
    ax.set_title(title)
    ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return vmin, vmax


def _load_run(run_dir: Path):
    try:
        summary = json.loads((run_dir / "summary.json").read_text(encoding="utf-8"))
        rows = read_csv(run_dir / "iterations.csv")
        desired = load_surface_binary(run_dir / "desired.smap")
        produced = load_surface_binary(run_dir / "produced_best.smap")
        crop = _crop_fraction(run_dir)
    except (OSError, ValueError, KeyError) as exc:
        raise ReportError(f"{run_dir}: missing or corrupt run artifacts ({exc})") from exc
    if len(rows) != summary["iterations"]:
        raise ReportError(f"{run_dir}: CSV has {len(rows)} rows, summary says {summary['iterations']}")
    return summary, rows, desired, produced, crop


def _crop_fraction(run_dir: Path) -> float:
    import yaml

    cfg = yaml.safe_load((run_dir / "config.yaml").read_text(encoding="utf-8"))
    return float(cfg["loop"]["crop_fraction"])


def summary_text(summary: dict, rows: list[dict]) -> str:
    k_best = min(range(len(rows)), key=lambda i: (rows[i]["rms_central"], i))
    lines = [
        f"mode:                {summary['mode']}",
        f"target:              {summary['target']}",
        f"n_modes / m / s:     {summary['n_modes']} / {summary['m']} / {summary['s_probes']}",
        f"iterations:          {summary['iterations']}",
        f"best iteration:      {summary['best_k']} (CSV argmin {rows[k_best]['k']})",
        f"best central RMS:    {summary['best_rms_central_um']:.6g} um",
        f"best global RMS:     {summary['best_rms_global_um']:.6g} um",
        f"best produced P-V:   {summary['best_pv_produced_um']:.6g} um",
        f"final model error:   {summary['final_epsilon_norm']:.6g}",
        f"non-converged BVLS:  {summary['bvls_nonconverged']}",
    ]
    return "\n".join(lines) + "\n"


def cmd_report(run_dir, plots: bool = True) -> dict:
    """Write convergence curves, the four surface panels and ``report.txt``.

    Returns a mapping with the summary text, written files and the colour
    limits used for each heat map.
    """
    run_dir = Path(run_dir)
    summary, rows, desired, produced, crop = _load_run(run_dir)
    text = summary_text(summary, rows)
    atomic_write_text(run_dir / "report.txt", text)
    out = {"text": text, "files": [run_dir / "report.txt"], "limits": {}}
    if not plots:
        return out

    plt = _pyplot()
    k = [r["k"] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogy(k, [r["epsilon_norm"] for r in rows], "o-")
    ax.set_xlabel("iteration k")
    ax.set_ylabel("model error ||eps_k||_2")
    fig.tight_layout()
    fig.savefig(run_dir / CURVE_FILES[0], dpi=100)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(k, [r["rms_global"] for r in rows], "o-", label="global")
    ax.plot(k, [r["rms_central"] for r in rows], "s-", label="central")
    ax.set_xlabel("iteration k")
    ax.set_ylabel("RMS shape error [um]")
    ax.legend()
    fig.tight_layout()
    fig.savefig(run_dir / CURVE_FILES[1], dpi=100)
    plt.close(fig)

    err = produced - desired
    rows_idx, cols_idx = np.nonzero(err.mask)
    cy, cx = rows_idx.mean(), cols_idx.mean()
    yy, xx = np.mgrid[0 : err.mask.shape[0], 0 : err.mask.shape[1]]
    dist = np.hypot(xx - cx, yy - cy)
    central = err.mask & (dist <= crop * dist[err.mask].max())
    err_central = SurfaceMap(err.heights_um, central)

    panels = [
        (HEATMAP_FILES[0], desired, "desired surface", False),
        (HEATMAP_FILES[1], produced, f"produced (k = {summary['best_k']})", False),
        (HEATMAP_FILES[2], err, "global shape error", True),
        (HEATMAP_FILES[3], err_central, "central shape error", True),
    ]
    for name, surf, title, sym in panels:
        out["limits"][name] = save_heatmap(run_dir / name, surf, title, sym)
    out["files"] += [run_dir / f for f in CURVE_FILES + HEATMAP_FILES]
    return out
