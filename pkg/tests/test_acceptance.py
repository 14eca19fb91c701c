"""Acceptance criteria, one test per criterion.

Each test attaches a one-line verdict; ``conftest.py`` prints them as a
PASS/FAIL table at the end of the session.
"""
import time
from pathlib import Path

import numpy as np
import pytest

from adaptdm import bvls, experiments
from adaptdm.config import load_config
from adaptdm.estimator import batch_init, generate_probes, init_state, rls_update
from adaptdm.plant import DMPlant, PlantConfig
from adaptdm.zernike import ApertureGrid, SurfaceMap, build_basis, fit_surface, synthesize

from .test_bvls import enumerate_bvls
from .test_control import _exact_setup, _start
from .test_estimator import _weighted_ls_oracle

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
DESK = CONFIGS / "desk.yaml"

# frozen from the seeded paired run (seed 1, see test_criterion_06)
DOMINANCE_RATIO = 0.6
FROZEN_ADAPTIVE_BEST = 0.15633807744481762
FROZEN_BASELINE_BEST = 0.2860711671442401


@pytest.fixture
def verdict(record_property):
    def _record(criterion, detail):
        record_property("criterion", criterion)
        record_property("detail", detail)

    return _record


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def test_criterion_01_rls_forms_agree(verdict):
    t0 = time.perf_counter()
    n, m, steps = 20, 12, 60
    worst_x = worst_s = 0.0
    for beta in (0.97, 1.0):
        rng = np.random.default_rng(101)
        L0 = rng.standard_normal((n, m))
        d = init_state(L0, 1e-2, beta, "dense")
        f = init_state(L0, 1e-2, beta, "factored")
        for _ in range(steps):
            b, z = rng.uniform(0, 1, m), rng.standard_normal(n)
            d, f = rls_update(d, b, z), rls_update(f, b, z)
            worst_x = max(worst_x, _rel(f.x_hat, d.x_hat))
            worst_s = max(worst_s, _rel(f.covariance(), d.S_dense))
    elapsed = time.perf_counter() - t0
    verdict(1, f"max rel diff x {worst_x:.2e}, S {worst_s:.2e}, {elapsed:.2f} s")
    assert worst_x <= 1e-10 and worst_s <= 1e-10
    assert elapsed < 10


def test_criterion_02_batch_equivalence(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    n, m, k, delta = 6, 4, 25, 1e-2
    L0 = rng.standard_normal((n, m))
    bs = [rng.uniform(0, 1, m) for _ in range(k)]
    zs = [rng.standard_normal(n) for _ in range(k)]
    worst = 0.0
    for form in ("dense", "factored"):
        state = init_state(L0, delta, 1.0, form)
        for b, z in zip(bs, zs):
            state = rls_update(state, b, z)
        worst = max(worst, _rel(state.L_hat, _weighted_ls_oracle(L0, delta, 1.0, bs, zs)[0]))
    elapsed = time.perf_counter() - t0
    verdict(2, f"rel diff {worst:.2e}, {elapsed:.3f} s")
    assert worst <= 1e-8 and elapsed < 1


def test_criterion_03_identification_consistency(verdict):
    t0 = time.perf_counter()
    grid = ApertureGrid(64, 64, 62, pixel_pitch_um=75.0)
    basis = build_basis(grid, 66)
    plant = DMPlant(PlantConfig(noise_sigma_um=0.0, coupling_gamma=0.0), grid)
    m = plant.m
    probes = generate_probes(m, 2 * m, 1.742, 7, lambda u, j: plant.observe(basis, u, 0, 1 + j))
    L_true = plant.true_influence(basis, 0)
    err = _rel(batch_init(probes).L0_hat, L_true)
    elapsed = time.perf_counter() - t0
    verdict(3, f"rel Frobenius error {err:.2e}, {elapsed:.2f} s")
    assert err <= 1e-8 and elapsed < 30


def test_criterion_04_bvls_enumeration(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(404)
    worst_b = worst_feas = worst_kkt = 0.0
    for _ in range(1000):
        m = int(rng.integers(1, 4))
        n = int(rng.integers(m, 9))  # n >= m keeps the minimizer unique
        L = rng.standard_normal((n, m))
        z = 2 * rng.standard_normal(n)
        sol = bvls.solve(L, z, bvls.BoxBounds.unit(m), tol=1e-10)
        ref, _ = enumerate_bvls(L, z, np.zeros(m), np.ones(m))
        worst_b = max(worst_b, np.abs(sol.b_star - ref).max())
        worst_feas = max(worst_feas, np.maximum(-sol.b_star, 0).max(), np.maximum(sol.b_star - 1, 0).max())
        if sol.converged:
            worst_kkt = max(worst_kkt, sol.kkt_residual)
    elapsed = time.perf_counter() - t0
    verdict(4, f"max |b - b_enum| {worst_b:.2e}, infeasibility {worst_feas:.1e}, KKT {worst_kkt:.1e}, {elapsed:.2f} s")
    assert worst_b <= 1e-9 and worst_feas <= 1e-12 and worst_kkt <= 1e-10
    assert elapsed < 30


def test_criterion_05_one_step_correction(verdict):
    from adaptdm.control import LoopConfig, TargetShape, run
    from adaptdm.plant import ActuatorLayout

    t0 = time.perf_counter()
    rng = np.random.default_rng(505)
    # linear plant: matched exponent, no coupling, no noise; exact model
    small_grid = ApertureGrid(32, 32, 30, pixel_pitch_um=100.0)
    basis = build_basis(small_grid, 45)
    plant, L = _exact_setup(basis, ActuatorLayout(6, 6, pitch_um=500.0))
    desired = plant.actuate(rng.uniform(0.3, 0.9, plant.m), 0)
    target = TargetShape(fit_surface(basis, desired), "reachable", surface=desired)
    cfg = LoopConfig(iterations=1)
    state, b0 = _start(L, target.z_D, cfg)
    measured = run(plant, basis, target, state, b0, cfg, 1.742).records[0].rms_central

    desk_basis = build_basis(ApertureGrid(64, 64, 62, pixel_pitch_um=75.0), 66)
    plant, L = _exact_setup(desk_basis, ActuatorLayout())
    target = TargetShape(L @ rng.uniform(0.2, 0.8, plant.m), "reachable")
    cfg = LoopConfig(iterations=1, metric_surface="fitted")
    state, b0 = _start(L, target.z_D, cfg)
    fitted = run(plant, desk_basis, target, state, b0, cfg, 1.742).records[0].rms_central
    elapsed = time.perf_counter() - t0
    verdict(5, f"rms_central {measured:.1e} um (measured, n >= m), {fitted:.1e} um (fitted, desk), {elapsed:.2f} s")
    assert measured <= 1e-6 and fitted <= 1e-6 and elapsed < 10


def _mismatch_cfg(out):
    return load_config(DESK).with_overrides(
        **{"theta_assumed": 2.0, "seed": 1, "plant.seed": 1, "loop.iterations": 30, "output_dir": str(out)}
    )


@pytest.fixture(scope="module")
def mismatch_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("mismatch")
    t0 = time.perf_counter()
    cfg = _mismatch_cfg(base / "adaptive")
    prepared = experiments.prepare(cfg)
    adaptive = experiments.cmd_run(cfg, prepared)
    baseline = experiments.cmd_baseline(cfg.with_overrides(output_dir=str(base / "baseline")), prepared)
    elapsed = time.perf_counter() - t0
    return adaptive, baseline, elapsed, base


def test_criterion_06_adaptive_dominance(mismatch_runs, verdict):
    adaptive, baseline, elapsed, _ = mismatch_runs
    a = adaptive.summary["best_rms_central_um"]
    b = baseline.summary["best_rms_central_um"]
    verdict(6, f"best rms_central adaptive {a:.4f} um vs baseline {b:.4f} um (ratio {a / b:.3f}), {elapsed:.1f} s")
    assert a <= b
    assert a <= DOMINANCE_RATIO * b
    assert a == pytest.approx(FROZEN_ADAPTIVE_BEST, rel=1e-6)
    assert b == pytest.approx(FROZEN_BASELINE_BEST, rel=1e-6)
    assert elapsed < 120


DRIFT_ONSET = 15
DRIFT_WINDOW = 10
DRIFT_BOUND = 1.5


def _drift_ratio(out, beta):
    cfg = load_config(DESK).with_overrides(
        **{
            "seed": 1,
            "plant.seed": 1,
            "loop.iterations": DRIFT_ONSET + DRIFT_WINDOW + 1,
            "loop.beta": beta,
            "plant.drift": {"onset": DRIFT_ONSET, "gain": 1.1, "block": {"rows": [4, 7], "cols": [4, 7]}},
            "output_dir": str(out),
        }
    )
    eps = np.array([r.epsilon_norm for r in experiments.cmd_run(cfg).result.records])
    pre = eps[DRIFT_ONSET - 5 : DRIFT_ONSET].mean()
    post = eps[DRIFT_ONSET + 1 : DRIFT_ONSET + 1 + DRIFT_WINDOW]
    return post.min() / pre


def test_criterion_07_drift_tracking(tmp_path, verdict):
    t0 = time.perf_counter()
    forgetting = _drift_ratio(tmp_path / "b098", 0.98)
    plain = _drift_ratio(tmp_path / "b100", 1.0)
    elapsed = time.perf_counter() - t0
    verdict(
        7,
        f"min post-drift eps / pre-drift level: beta 0.98 -> {forgetting:.1f}, beta 1 -> {plain:.1f} "
        f"(bound {DRIFT_BOUND}), {elapsed:.1f} s",
    )
    assert forgetting <= DRIFT_BOUND
    assert plain > DRIFT_BOUND
    assert elapsed < 120


SWEEP_N = (15, 28, 45, 66, 91, 120)


def test_criterion_08_n_sweep_saturates(tmp_path, verdict):
    t0 = time.perf_counter()
    base = load_config(DESK).with_overrides(
        **{"plant.layout.grid_rows": 8, "plant.layout.grid_cols": 8, "grid.pixel_pitch_um": 50.0}
    )
    table = []
    for seed in (1, 2, 3):
        cfg = base.with_overrides(seed=seed, **{"plant.seed": seed, "output_dir": str(tmp_path / f"s{seed}")})
        rows = experiments.cmd_sweep_n(cfg, SWEEP_N)
        assert all(r["status"] == "ok" for r in rows)
        table.append([r["best_rms_central_um"] for r in rows])
    table = np.array(table)
    mean, std = table.mean(axis=0), table.std(axis=0, ddof=1)
    monotone = all(mean[i] <= mean[i - 1] + 2 * std[i] for i in range(1, len(SWEEP_N)))
    last_gap = abs(mean[-1] - mean[-2]) / mean[-2]
    elapsed = time.perf_counter() - t0
    curve = ", ".join(f"{n}:{v:.4f}" for n, v in zip(SWEEP_N, mean))
    verdict(8, f"mean best rms_central {curve}; last-two gap {100 * last_gap:.2f}%, {elapsed:.1f} s")
    assert monotone and last_gap < 0.10 and elapsed < 600


def test_criterion_09_zernike_suite(verdict):
    t0 = time.perf_counter()
    grid = ApertureGrid(64, 64, 62, pixel_pitch_um=75.0)
    basis = build_basis(grid, 66)
    rng = np.random.default_rng(909)
    worst_rt = worst_lin = worst_mode = 0.0
    for _ in range(50):
        c = rng.standard_normal(66)
        worst_rt = max(worst_rt, _rel(fit_surface(basis, synthesize(basis, c)), c))
        s1 = SurfaceMap(rng.standard_normal(grid.shape), grid.mask)
        s2 = SurfaceMap(rng.standard_normal(grid.shape), grid.mask)
        a = rng.uniform(-5, 5)
        lhs = fit_surface(basis, SurfaceMap(a * s1.heights_um + s2.heights_um, grid.mask))
        rhs = a * fit_surface(basis, s1) + fit_surface(basis, s2)
        worst_lin = max(worst_lin, _rel(lhs, rhs))
    for j in range(66):
        e = np.zeros(66)
        e[j] = 1.0
        worst_mode = max(worst_mode, np.abs(fit_surface(basis, synthesize(basis, e)) - e).max())
    elapsed = time.perf_counter() - t0
    verdict(9, f"round trip {worst_rt:.1e}, linearity {worst_lin:.1e}, mode recovery {worst_mode:.1e}, {elapsed:.2f} s")
    assert max(worst_rt, worst_lin, worst_mode) <= 1e-9 and elapsed < 5


def test_criterion_10_determinism(mismatch_runs, verdict):
    adaptive, _, _, base = mismatch_runs
    again = experiments.cmd_run(_mismatch_cfg(base / "adaptive_again"))
    first = (adaptive.output_dir / "iterations.csv").read_bytes()
    second = (again.output_dir / "iterations.csv").read_bytes()
    verdict(10, f"iterations.csv {'byte-identical' if first == second else 'differs'} across two executions")
    assert first == second
