"""Experiment orchestration: identification, control runs, sweeps and artifacts.

A run directory holds::

    config.yaml          normalized config snapshot
    iterations.csv       one row per iteration (see CSV_COLUMNS)
    estimator_state.npz  final estimator state
    desired.smap         desired surface (binary surface format)
    produced_best.smap   produced surface at the best iteration
    summary.json         written last; its presence marks a complete run
    checkpoints/         per-iteration estimator states (optional)
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import bvls
from .config import ExperimentConfig, dump_config
from .control import IterationRecord, LoopResult, make_target, run
from .estimator import InitReport, ProbeDataset, batch_init, generate_probes, init_state, save_state
from .io import atomic_write_text, save_surface_binary
from .plant import DMPlant
from .zernike import ZernikeBasis, build_basis

__all__ = [
    "CSV_COLUMNS",
    "Prepared",
    "RunArtifact",
    "cmd_baseline",
    "cmd_run",
    "cmd_sweep_n",
    "format_csv",
    "prepare",
    "read_csv",
]

log = logging.getLogger(__name__)

CSV_COLUMNS = tuple(f.name for f in fields(IterationRecord))
LARGE_BASIS_MODES = 300


@dataclass
class Prepared:
    """Everything needed to start the control loop."""

    basis: ZernikeBasis
    plant: DMPlant
    probes: ProbeDataset
    init: InitReport
    target: object
    b0: bvls.BvlsSolution


@dataclass
class RunArtifact:
    output_dir: Path
    result: LoopResult
    summary: dict


def prepare(cfg: ExperimentConfig, basis: ZernikeBasis | None = None) -> Prepared:
    """Build basis and plant, collect probes, estimate L0 and solve for b0."""
    if cfg.n_modes >= LARGE_BASIS_MODES:
        log.warning(
            "large basis (n = %d modes on %d pixels): expect long runtimes and large memory",
            cfg.n_modes,
            cfg.grid.n_pixels,
        )
    if basis is None:
        basis = build_basis(cfg.grid, cfg.n_modes)
    plant = DMPlant(cfg.plant, cfg.grid)
    probes = generate_probes(
        plant.m,
        cfg.s_probes,
        cfg.theta_assumed,
        cfg.seed,
        lambda u, j: plant.observe(basis, u, 0, tag=1 + j),
    )
    init = batch_init(probes)
    piston = cfg.target["piston_um"]
    if piston is None:
        # mid-range pedestal: mean height of the noiseless response to u = 0.5
        mid = plant.influence_functions @ plant.amplitudes(np.full(plant.m, 0.5), 0)
        piston = float(mid.mean())
    target = make_target(basis, cfg.target["mode"], cfg.target["pv_um"], piston)
    b0 = bvls.solve(
        init.L0_hat,
        target.z_D,
        bvls.BoxBounds.unit(plant.m),
        cfg.loop.bvls_tol,
        cfg.loop.bvls_max_iter,
    )
    return Prepared(basis, plant, probes, init, target, b0)


def _format_value(v) -> str:
    if isinstance(v, np.ndarray):
        return " ".join(repr(float(x)) for x in v)
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def format_csv(records: list[IterationRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rec in records:
        writer.writerow([_format_value(getattr(rec, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def read_csv(path) -> list[dict]:
    """Parse an iterations CSV back into typed rows (``u`` as an array)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV columns {reader.fieldnames}")
        rows = []
        for row in reader:
            rows.append(
                {
                    "k": int(row["k"]),
                    "u": np.array([float(v) for v in row["u"].split()]),
                    "epsilon_norm": float(row["epsilon_norm"]),
                    "rms_global": float(row["rms_global"]),
                    "rms_central": float(row["rms_central"]),
                    "pv_produced": float(row["pv_produced"]),
                    "bvls_converged": row["bvls_converged"] == "1",
                    "bvls_iterations": int(row["bvls_iterations"]),
                    "bvls_objective": float(row["bvls_objective"]),
                    "bvls_kkt_residual": float(row["bvls_kkt_residual"]),
                }
            )
    return rows


def _execute(cfg: ExperimentConfig, adapt: bool, prepared: Prepared | None = None) -> RunArtifact:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    stale = out / "summary.json"
    if stale.exists():
        stale.unlink()
    t0 = time.perf_counter()
    prep = prepared if prepared is not None else prepare(cfg)
    loop_cfg = replace(cfg.loop, adapt=adapt)
    state = init_state(prep.init.L0_hat, loop_cfg.delta, loop_cfg.beta, loop_cfg.estimator_form)
    result = run(
        prep.plant,
        prep.basis,
        prep.target,
        state,
        prep.b0,
        loop_cfg,
        cfg.theta_assumed,
        checkpoint_dir=out / "checkpoints" if loop_cfg.record_checkpoints else None,
    )
    atomic_write_text(out / "config.yaml", dump_config(cfg))
    atomic_write_text(out / "iterations.csv", format_csv(result.records))
    save_state(out / "estimator_state.npz", result.state)
    save_surface_binary(out / "desired.smap", result.desired_surface)
    save_surface_binary(out / "produced_best.smap", result.best_surface)
    best = result.best
    summary = {
        "mode": "adaptive" if adapt else "baseline",
        "iterations": len(result.records),
        "best_k": best.k,
        "best_rms_central_um": best.rms_central,
        "best_rms_global_um": best.rms_global,
        "best_pv_produced_um": best.pv_produced,
        "final_rms_central_um": result.records[-1].rms_central,
        "final_epsilon_norm": result.records[-1].epsilon_norm,
        "n_modes": cfg.n_modes,
        "m": prep.plant.m,
        "s_probes": cfg.s_probes,
        "target": prep.target.description,
        "init_condition_BBt": prep.init.condition_BBt,
        "init_residual_fro": prep.init.residual_fro,
        "bvls_nonconverged": sum(not r.bvls_converged for r in result.records),
    }
    atomic_write_text(out / "summary.json", json.dumps(summary, indent=2) + "\n")
    log.info(
        "%s run: best k=%d rms_central=%.4g um (%.1f s) -> %s",
        summary["mode"],
        best.k,
        best.rms_central,
        time.perf_counter() - t0,
        out,
    )
    return RunArtifact(out, result, summary)


def cmd_run(cfg: ExperimentConfig, prepared: Prepared | None = None) -> RunArtifact:
    """Probes, batch estimate, initial bounded solve, then the adaptive loop."""
    return _execute(cfg, adapt=True, prepared=prepared)


def cmd_baseline(cfg: ExperimentConfig, prepared: Prepared | None = None) -> RunArtifact:
    """Same as :func:`cmd_run` with the influence estimate frozen at L0."""
    return _execute(cfg, adapt=False, prepared=prepared)


def _sweep_entry(args):
    cfg, n = args
    try:
        sub = cfg.with_overrides(n_modes=n, output_dir=str(cfg.output_dir / f"n_{n:04d}"))
        art = cmd_run(sub)
    except Exception as exc:  # recorded per entry; the sweep goes on
        log.error("sweep n=%d failed: %s", n, exc)
        return {"n": n, "best_k": -1, "best_rms_central_um": math.nan, "status": f"failed: {exc}"}
    return {
        "n": n,
        "best_k": art.summary["best_k"],
        "best_rms_central_um": art.summary["best_rms_central_um"],
        "status": "ok",
    }


def cmd_sweep_n(cfg: ExperimentConfig, n_list, workers: int = 1) -> list[dict]:
    """Run the adaptive loop once per basis size; writes ``sweep.csv``.

    Every entry reuses ``cfg.seed`` so the raw probe voltages are shared.
    """
    jobs = [(cfg, int(n)) for n in n_list]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_entry, jobs))
    else:
        rows = [_sweep_entry(j) for j in jobs]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["n", "best_k", "best_rms_central_um", "status"])
    for r in rows:
        writer.writerow([r["n"], r["best_k"], _format_value(float(r["best_rms_central_um"])), r["status"]])
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(cfg.output_dir / "sweep.csv", buf.getvalue())
    return rows
