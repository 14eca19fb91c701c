"""Synthetic MEMS deformable mirror.

Each active actuator ``i`` pushes a unit-peak Gaussian bump ``g_i`` with
amplitude::

    p_i = stroke * gain_i(k) * v_i * (1 + coupling * sum_{j in N4(i)} v_j),
    v = u ** theta_true

and the sensor adds i.i.d. Gaussian pixel noise. With ``coupling_gamma = 0``
and no drift the surface is exactly linear in ``v``.

Noise for measurement ``(k, tag)`` comes from a Philox stream keyed by
``(seed, tag, k)`` so it does not depend on call order. The control loop
measures with ``tag = 0``; identification probes use ``tag = 1 + probe index``
so they never reuse loop noise.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .zernike import ApertureGrid, SurfaceMap, ZernikeBasis, fit_surface

__all__ = [
    "ActuatorLayout",
    "ControlInput",
    "DMPlant",
    "DriftConfig",
    "PlantConfig",
    "block_actuators",
    "lift",
]

DEFAULT_THETA = 1.742


def _corners(rows: int, cols: int) -> frozenset[tuple[int, int]]:
    return frozenset({(0, 0), (0, cols - 1), (rows - 1, 0), (rows - 1, cols - 1)})


@dataclass(frozen=True)
class ActuatorLayout:
    """Rectangular actuator grid with some positions left unpopulated.

    Active actuators are numbered row-major, skipping inactive positions.
    The default is a 12 x 12 grid at 400 um pitch without its corners (m = 140).
    """

    grid_rows: int = 12
    grid_cols: int = 12
    inactive: frozenset[tuple[int, int]] | None = None
    pitch_um: float = 400.0

    def __post_init__(self):
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise ValueError("actuator grid must have at least one row and column")
        if not self.pitch_um > 0:
            raise ValueError("pitch_um must be positive")
        inactive = (
            _corners(self.grid_rows, self.grid_cols)
            if self.inactive is None
            else frozenset(tuple(int(v) for v in rc) for rc in self.inactive)
        )
        for r, c in inactive:
            if not (0 <= r < self.grid_rows and 0 <= c < self.grid_cols):
                raise ValueError(f"inactive position {(r, c)} outside the grid")
        object.__setattr__(self, "inactive", inactive)
        if self.m < 1:
            raise ValueError("layout has no active actuators")

    @cached_property
    def positions(self) -> tuple[tuple[int, int], ...]:
        """Grid ``(row, col)`` of every active actuator, in actuator order."""
        return tuple(
            (r, c)
            for r in range(self.grid_rows)
            for c in range(self.grid_cols)
            if (r, c) not in self.inactive
        )

    @property
    def m(self) -> int:
        return self.grid_rows * self.grid_cols - len(self.inactive)

    def index_of(self, row: int, col: int) -> int:
        return self.positions.index((row, col))

    def centers_um(self) -> tuple[np.ndarray, np.ndarray]:
        """Actuator centres relative to the centre of the actuator grid."""
        rc = np.array(self.positions, dtype=float)
        x = (rc[:, 1] - (self.grid_cols - 1) / 2.0) * self.pitch_um
        y = (rc[:, 0] - (self.grid_rows - 1) / 2.0) * self.pitch_um
        return x, y

    def neighbor_matrix(self) -> np.ndarray:
        """m x m 0/1 matrix of 4-neighbour adjacency between active actuators."""
        lookup = {rc: i for i, rc in enumerate(self.positions)}
        adj = np.zeros((self.m, self.m))
        for i, (r, c) in enumerate(self.positions):
            for nb in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                j = lookup.get(nb)
                if j is not None:
                    adj[i, j] = 1.0
        return adj


def block_actuators(layout: ActuatorLayout, rows: tuple[int, int], cols: tuple[int, int]):
    """Indices of active actuators in the inclusive block ``rows`` x ``cols``."""
    return tuple(
        i
        for i, (r, c) in enumerate(layout.positions)
        if rows[0] <= r <= rows[1] and cols[0] <= c <= cols[1]
    )


@dataclass(frozen=True)
class DriftConfig:
    """Step change of actuator gains: ``gain`` applies to ``actuators`` for k >= onset."""

    onset: int
    gain: float
    actuators: tuple[int, ...]

    def __post_init__(self):
        if self.onset < 0:
            raise ValueError("drift onset must be non-negative")
        if not self.gain > 0:
            raise ValueError("drift gain must be positive")
        object.__setattr__(self, "actuators", tuple(int(i) for i in self.actuators))

    def multipliers(self, m: int, k: int) -> np.ndarray:
        gains = np.ones(m)
        if k >= self.onset:
            gains[list(self.actuators)] = self.gain
        return gains


@dataclass(frozen=True)
class PlantConfig:
    layout: ActuatorLayout = field(default_factory=ActuatorLayout)
    theta_true: float = DEFAULT_THETA
    stroke_um: float = 2.0
    influence_sigma_um: float | None = None  # defaults to 0.85 * pitch
    coupling_gamma: float = 0.0
    noise_sigma_um: float = 5e-3
    drift: DriftConfig | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.theta_true > 0:
            raise ValueError("theta_true must be positive")
        if not self.stroke_um > 0:
            raise ValueError("stroke_um must be positive")
        if self.influence_sigma_um is None:
            object.__setattr__(self, "influence_sigma_um", 0.85 * self.layout.pitch_um)
        if not self.influence_sigma_um > 0:
            raise ValueError("influence_sigma_um must be positive")
        if self.coupling_gamma < 0:
            raise ValueError("coupling_gamma must be >= 0")
        if self.noise_sigma_um < 0:
            raise ValueError("noise_sigma_um must be >= 0")
        if self.drift is not None:
            bad = [i for i in self.drift.actuators if not 0 <= i < self.layout.m]
            if bad:
                raise ValueError(f"drift actuators out of range: {bad}")


def lift(u: np.ndarray, theta: float) -> np.ndarray:
    """Element-wise ``u ** theta``: the voltage-to-deformation nonlinearity."""
    return np.asarray(u, dtype=float) ** theta


@dataclass(frozen=True)
class ControlInput:
    """Voltages in [0, 1] together with the controller's assumed exponent."""

    u: np.ndarray
    theta_assumed: float = DEFAULT_THETA

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        if np.any(u < 0) or np.any(u > 1) or not np.all(np.isfinite(u)):
            raise ValueError("control voltages must lie in [0, 1]")
        object.__setattr__(self, "u", u)

    @property
    def b(self) -> np.ndarray:
        return lift(self.u, self.theta_assumed)


class DMPlant:
    """A :class:`PlantConfig` rendered on an :class:`ApertureGrid`.

    The actuator grid is centred on the aperture centre. Influence bumps are
    precomputed on the aperture pixels.
    """

    def __init__(self, config: PlantConfig, grid: ApertureGrid):
        self.config = config
        self.grid = grid
        ax, ay = config.layout.centers_um()
        px, py = grid.positions_um()
        d2 = (px[:, None] - ax[None, :]) ** 2 + (py[:, None] - ay[None, :]) ** 2
        self._bumps = np.exp(-d2 / (2.0 * config.influence_sigma_um**2))
        self._bumps.setflags(write=False)
        self._neighbors = config.layout.neighbor_matrix()

    @property
    def m(self) -> int:
        return self.config.layout.m

    @property
    def influence_functions(self) -> np.ndarray:
        """(n_pixels, m) unit-peak bumps sampled on the aperture."""
        return self._bumps

    def gains(self, k: int) -> np.ndarray:
        if self.config.drift is None:
            return np.ones(self.m)
        return self.config.drift.multipliers(self.m, k)

    def amplitudes(self, u: np.ndarray, k: int) -> np.ndarray:
        """Peak deflection commanded for each actuator (micrometers)."""
        u = self._check_input(u, k)
        v = lift(u, self.config.theta_true)
        cfg = self.config
        p = cfg.stroke_um * self.gains(k) * v
        if cfg.coupling_gamma:
            p = p * (1.0 + cfg.coupling_gamma * (self._neighbors @ v))
        return p

    def _check_input(self, u, k) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.m,):
            raise ValueError(f"expected {self.m} voltages, got shape {u.shape}")
        if not np.all(np.isfinite(u)) or np.any(u < 0) or np.any(u > 1):
            raise ValueError("voltages outside [0, 1]")
        if k < 0:
            raise ValueError("iteration index k must be non-negative")
        return u

    def noise(self, k: int, tag: int = 0) -> np.ndarray:
        sigma = self.config.noise_sigma_um
        if sigma == 0:
            return np.zeros(self.grid.n_pixels)
        seq = np.random.SeedSequence([self.config.seed, tag, k])
        rng = np.random.Generator(np.random.Philox(seq))
        return sigma * rng.standard_normal(self.grid.n_pixels)

    def actuate(self, u: np.ndarray, k: int, tag: int = 0) -> SurfaceMap:
        """Measured surface after applying voltages ``u`` at iteration ``k``."""
        values = self._bumps @ self.amplitudes(u, k) + self.noise(k, tag)
        return SurfaceMap.from_values(values, self.grid.mask)

    def observe(self, basis: ZernikeBasis, u: np.ndarray, k: int, tag: int = 0) -> np.ndarray:
        """Zernike coefficients of the measured surface."""
        return fit_surface(basis, self.actuate(u, k, tag))

    def true_influence(self, basis: ZernikeBasis, k: int) -> np.ndarray:
        """Exact n x m influence matrix at iteration ``k`` (decoupled plant only)."""
        if self.config.coupling_gamma != 0:
            raise ValueError("true_influence is only defined for coupling_gamma = 0")
        if k < 0:
            raise ValueError("iteration index k must be non-negative")
        if basis.grid != self.grid:
            raise ValueError("basis grid does not match the plant grid")
        scale = self.config.stroke_um * self.gains(k)
        return basis.fit_values(self._bumps * scale[None, :])
