"""Open-loop shape control with an adaptively identified influence matrix.

Each iteration applies the current voltages, measures the surface, updates
the influence-matrix estimate with RLS and re-solves the bounded
least-squares problem for the next input.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bvls
from .estimator import EstimatorState, current_L, rls_update, save_state
from .plant import DMPlant
from .zernike import SurfaceMap, ZernikeBasis, fit_surface, mode_index, peak_to_valley, synthesize

__all__ = [
    "IterationRecord",
    "LoopConfig",
    "LoopResult",
    "TargetShape",
    "make_target",
    "rms_error",
    "run",
]

log = logging.getLogger(__name__)


@dataclass
class TargetShape:
    """Desired coefficients ``z_D``.

    ``surface`` is the desired height map used for the RMS metrics. It
    defaults to the surface synthesized from ``z_D``; supplying a measured
    surface lets a test target a shape the mirror can reach exactly.
    """

    z_D: np.ndarray
    description: str = ""
    surface: SurfaceMap | None = None


def make_target(
    basis: ZernikeBasis, mode: str, pv_um: float, piston_um: float = 0.0
) -> TargetShape:
    """Scaled and shifted single Zernike mode with the requested peak-to-valley.

    ``z_D = alpha * e_mode + piston_um * e_piston`` with ``alpha > 0`` chosen
    so the synthesized surface has P-V ``pv_um`` over the aperture.
    """
    j = mode_index(mode)
    if j >= basis.n_modes:
        raise ValueError(f"mode {mode} (Noll {j + 1}) is outside a basis of {basis.n_modes} modes")
    if not pv_um > 0:
        raise ValueError("pv_um must be positive")
    z = np.zeros(basis.n_modes)
    z[j] = 1.0
    unit_pv = peak_to_valley(synthesize(basis, z))
    if j == 0 or unit_pv == 0:
        raise ValueError("target mode must have non-zero peak-to-valley")
    z *= pv_um / unit_pv
    z[0] += piston_um
    return TargetShape(z, f"{mode} scaled to P-V {pv_um} um, piston {piston_um} um")


@dataclass(frozen=True)
class LoopConfig:
    iterations: int = 30
    beta: float = 0.98
    delta: float = 1e-2
    estimator_form: str = "factored"
    crop_fraction: float = 0.85
    record_checkpoints: bool = False
    adapt: bool = True
    metric_surface: str = "measured"
    bvls_tol: float = 1e-10
    bvls_max_iter: int | None = None
    warm_start: bool = True

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 < self.beta <= 1:
            raise ValueError("beta must lie in (0, 1]")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.estimator_form not in ("dense", "factored"):
            raise ValueError("estimator_form must be 'dense' or 'factored'")
        if not 0 < self.crop_fraction <= 1:
            raise ValueError("crop_fraction must lie in (0, 1]")
        if self.metric_surface not in ("measured", "fitted"):
            raise ValueError("metric_surface must be 'measured' or 'fitted'")


@dataclass
class IterationRecord:
    k: int
    u: np.ndarray
    epsilon_norm: float
    rms_global: float
    rms_central: float
    pv_produced: float
    bvls_converged: bool
    bvls_iterations: int
    bvls_objective: float
    bvls_kkt_residual: float


@dataclass
class LoopResult:
    records: list[IterationRecord]
    best_index: int
    state: EstimatorState
    best_surface: SurfaceMap = field(repr=False)
    desired_surface: SurfaceMap = field(repr=False)

    @property
    def best(self) -> IterationRecord:
        return self.records[self.best_index]


def rms_error(produced: SurfaceMap, desired: SurfaceMap, crop_fraction: float = 0.85, grid=None):
    """RMS of ``produced - desired`` over the aperture and over its centre.

    The central region holds the aperture pixels within ``crop_fraction``
    of the aperture radius. Without ``grid`` the centre and radius are taken
    from the mask itself (centroid and farthest aperture pixel).
    """
    if produced.mask.shape != desired.mask.shape or not np.array_equal(produced.mask, desired.mask):
        raise ValueError("surfaces live on different grids")
    if not 0 < crop_fraction <= 1:
        raise ValueError("crop_fraction must lie in (0, 1]")
    mask = produced.mask
    diff = produced.heights_um - desired.heights_um
    if grid is not None:
        central = grid.central_mask(crop_fraction)
    else:
        rows, cols = np.nonzero(mask)
        cy, cx = rows.mean(), cols.mean()
        yy, xx = np.mgrid[0 : mask.shape[0], 0 : mask.shape[1]]
        dist = np.hypot(xx - cx, yy - cy)
        radius = dist[mask].max() if crop_fraction < 1 else np.inf
        central = mask & (dist <= crop_fraction * radius)
    if not central.any():
        raise ValueError("central region is empty")
    rms_global = float(np.sqrt(np.mean(diff[mask] ** 2)))
    rms_central = float(np.sqrt(np.mean(diff[central] ** 2)))
    return rms_global, rms_central


def run(
    plant: DMPlant,
    basis: ZernikeBasis,
    target: TargetShape,
    state: EstimatorState,
    b0: bvls.BvlsSolution,
    cfg: LoopConfig,
    theta_assumed: float,
    checkpoint_dir: str | Path | None = None,
) -> LoopResult:
    """Iterate measure -> RLS update -> bounded solve for ``cfg.iterations`` steps.

    ``b0`` is the bounded solution computed from the initial estimate.
    Iteration ``k`` applies ``u_k``, measures the plant at time ``k`` and
    records the metrics of that measurement. With ``cfg.adapt`` off the
    estimate stays frozen and only the model error is tracked.
    """
    if target.z_D.shape != (basis.n_modes,):
        raise ValueError("target length does not match the basis")
    if (state.n, state.m) != (basis.n_modes, plant.m):
        raise ValueError("estimator dimensions do not match basis/plant")
    desired = target.surface if target.surface is not None else synthesize(basis, target.z_D)
    bounds = bvls.BoxBounds.unit(plant.m)
    if cfg.record_checkpoints:
        if checkpoint_dir is None:
            raise ValueError("record_checkpoints needs a checkpoint_dir")
        checkpoint_dir = Path(checkpoint_dir)
        save_state(checkpoint_dir / "state_0000.npz", state)

    records: list[IterationRecord] = []
    best_surface = None
    sol = b0
    for k in range(cfg.iterations):
        b_k = sol.b_star
        u_k = bvls.voltages_from_b(b_k, theta_assumed)
        measured = plant.actuate(u_k, k)
        z_next = fit_surface(basis, measured)
        if cfg.adapt:
            state = rls_update(state, b_k, z_next)
            eps = state.last_epsilon
        else:
            eps = z_next - current_L(state) @ b_k
        produced = synthesize(basis, z_next) if cfg.metric_surface == "fitted" else measured
        rms_g, rms_c = rms_error(produced, desired, cfg.crop_fraction, grid=basis.grid)
        rec = IterationRecord(
            k=k,
            u=u_k,
            epsilon_norm=float(np.linalg.norm(eps)),
            rms_global=rms_g,
            rms_central=rms_c,
            pv_produced=peak_to_valley(produced),
            bvls_converged=sol.converged,
            bvls_iterations=sol.iterations,
            bvls_objective=sol.objective,
            bvls_kkt_residual=sol.kkt_residual,
        )
        records.append(rec)
        if not sol.converged:
            log.warning("iteration %d: bounded solve did not converge (kkt %.3g)", k, sol.kkt_residual)
        if best_surface is None or rms_c < records[best_index].rms_central:
            best_index, best_surface = k, produced
        if cfg.record_checkpoints:
            save_state(checkpoint_dir / f"state_{k + 1:04d}.npz", state)
        if k + 1 < cfg.iterations:
            sol = bvls.solve(
                current_L(state),
                target.z_D,
                bounds,
                cfg.bvls_tol,
                cfg.bvls_max_iter,
                x0=b_k if cfg.warm_start else None,
            )

    return LoopResult(records, best_index, state, best_surface, desired)
