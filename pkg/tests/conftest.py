import numpy as np
import pytest

from adaptdm.plant import ActuatorLayout, DMPlant, PlantConfig
from adaptdm.zernike import ApertureGrid, build_basis


@pytest.fixture(scope="session")
def small_grid():
    return ApertureGrid(32, 32, 30, pixel_pitch_um=100.0)


@pytest.fixture(scope="session")
def small_basis(small_grid):
    return build_basis(small_grid, 21)


@pytest.fixture(scope="session")
def desk_grid():
    return ApertureGrid(64, 64, 62, pixel_pitch_um=75.0)


@pytest.fixture(scope="session")
def desk_basis(desk_grid):
    return build_basis(desk_grid, 66)


@pytest.fixture
def small_layout():
    # 6 x 6 mirror without corners, m = 32
    return ActuatorLayout(6, 6, pitch_um=500.0)


@pytest.fixture
def linear_plant(small_grid, small_layout):
    cfg = PlantConfig(layout=small_layout, theta_true=1.742, noise_sigma_um=0.0, seed=3)
    return DMPlant(cfg, small_grid)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", []))
            if rep.when == "call" and "criterion" in props:
                lines.append((props["criterion"], "PASS" if outcome == "passed" else "FAIL", props["detail"]))
    if lines:
        terminalreporter.section("acceptance criteria")
        for crit, status, detail in sorted(lines):
            terminalreporter.write_line(f"criterion {crit:2d}: {status}  {detail}")
