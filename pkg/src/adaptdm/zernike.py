"""Zernike bases on a pixelated circular aperture.

Modes follow the Noll sequential ordering (j = 1 is piston) and are normalized
to unit RMS over the continuous unit disc. Because the modes are not exactly
orthogonal on a pixel grid, coefficients are always obtained by a least-squares
fit through a thin QR factorization that is computed once per basis.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg
from scipy.special import eval_jacobi

__all__ = [
    "ApertureGrid",
    "BasisError",
    "SurfaceMap",
    "ZernikeBasis",
    "build_basis",
    "fit_surface",
    "mode_index",
    "noll_to_nm",
    "nm_to_noll",
    "parse_mode_name",
    "peak_to_valley",
    "radial_polynomial",
    "synthesize",
    "zernike_values",
]

#: basis is rejected above this 2-norm condition number of the sample matrix
MAX_BASIS_CONDITION = 1e10


class BasisError(ValueError):
    """Raised when a basis cannot be built or does not match a surface."""


@dataclass(frozen=True)
class ApertureGrid:
    """Pixel grid with a circular observation aperture.

    Pixel ``(row, col)`` sits at ``x = col``, ``y = row``. The aperture holds
    every pixel whose distance from ``center_px`` is at most ``diameter_px / 2``.
    ``center_px`` defaults to the geometric centre of the grid.
    """

    width_px: int
    height_px: int
    diameter_px: float
    pixel_pitch_um: float = 1.0
    center_px: tuple[float, float] | None = None

    def __post_init__(self):
        if self.width_px < 1 or self.height_px < 1:
            raise ValueError("grid dimensions must be positive")
        if not self.diameter_px > 0:
            raise ValueError("diameter_px must be positive")
        if self.diameter_px > min(self.width_px, self.height_px):
            raise ValueError(
                f"diameter_px={self.diameter_px} exceeds min(width, height)="
                f"{min(self.width_px, self.height_px)}"
            )
        if not self.pixel_pitch_um > 0:
            raise ValueError("pixel_pitch_um must be positive")
        if self.center_px is None:
            object.__setattr__(
                self, "center_px", ((self.width_px - 1) / 2.0, (self.height_px - 1) / 2.0)
            )
        else:
            object.__setattr__(self, "center_px", tuple(float(c) for c in self.center_px))
        if not self.mask.any():
            raise ValueError("aperture mask is empty")

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape ``(height_px, width_px)`` of surfaces on this grid."""
        return (self.height_px, self.width_px)

    @property
    def radius_px(self) -> float:
        return self.diameter_px / 2.0

    @cached_property
    def _polar(self):
        cx, cy = self.center_px
        yy, xx = np.mgrid[0 : self.height_px, 0 : self.width_px].astype(float)
        dx, dy = xx - cx, yy - cy
        return np.hypot(dx, dy), np.arctan2(dy, dx)

    @property
    def distance_px(self) -> np.ndarray:
        """Distance of every pixel centre from the aperture centre."""
        return self._polar[0]

    @cached_property
    def mask(self) -> np.ndarray:
        m = self.distance_px <= self.radius_px
        m.setflags(write=False)
        return m

    @property
    def n_pixels(self) -> int:
        return int(self.mask.sum())

    def polar_coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Normalized radius and azimuth of the aperture pixels, in mask order."""
        r, phi = self._polar
        return r[self.mask] / self.radius_px, phi[self.mask]

    def positions_um(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical ``(x, y)`` of the aperture pixels relative to the centre."""
        cx, cy = self.center_px
        rows, cols = np.nonzero(self.mask)
        return (cols - cx) * self.pixel_pitch_um, (rows - cy) * self.pixel_pitch_um

    def central_mask(self, crop_fraction: float) -> np.ndarray:
        """Aperture pixels within ``crop_fraction`` of the aperture radius."""
        if not 0 < crop_fraction <= 1:
            raise ValueError("crop_fraction must lie in (0, 1]")
        return self.mask & (self.distance_px <= crop_fraction * self.radius_px)


@dataclass
class SurfaceMap:
    """Height field in micrometers; values outside ``mask`` carry no meaning."""

    heights_um: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.heights_um = np.asarray(self.heights_um, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.heights_um.shape != self.mask.shape:
            raise ValueError(
                f"heights shape {self.heights_um.shape} != mask shape {self.mask.shape}"
            )

    @classmethod
    def from_values(cls, values: np.ndarray, mask: np.ndarray) -> "SurfaceMap":
        """Scatter a vector of aperture-pixel values onto the grid (zero outside)."""
        heights = np.zeros(mask.shape)
        heights[mask] = values
        return cls(heights, mask)

    @property
    def values(self) -> np.ndarray:
        """Heights at the aperture pixels, in row-major mask order."""
        return self.heights_um[self.mask]

    def __sub__(self, other: "SurfaceMap") -> "SurfaceMap":
        if not np.array_equal(self.mask, other.mask):
            raise ValueError("surfaces live on different apertures")
        return SurfaceMap.from_values(self.values - other.values, self.mask)


# --- indexing -------------------------------------------------------------


def noll_to_nm(j: int) -> tuple[int, int]:
    """Map Noll index ``j >= 1`` to (radial degree n, signed azimuthal m).

    Even ``j`` carries the cosine term (m > 0), odd ``j`` the sine term (m < 0).

    >>> [noll_to_nm(j) for j in (1, 2, 3, 4, 12, 13)]
    [(0, 0), (1, 1), (1, -1), (2, 0), (4, 2), (4, -2)]
    """
    if j < 1:
        raise ValueError("Noll index starts at 1")
    n = 0
    while j > (n + 1) * (n + 2) // 2:
        n += 1
    p = j - n * (n + 1) // 2 - 1
    if n % 2 == 0:
        m = 2 * ((p + 1) // 2)
    else:
        m = 2 * (p // 2) + 1
    if m != 0 and j % 2 == 1:
        m = -m
    return n, m


def nm_to_noll(n: int, m: int) -> int:
    """Inverse of :func:`noll_to_nm`."""
    if n < 0 or abs(m) > n or (n - abs(m)) % 2:
        raise ValueError(f"no Zernike mode with n={n}, m={m}")
    start = n * (n + 1) // 2 + 1
    for j in range(start, start + n + 1):
        if noll_to_nm(j) == (n, m):
            return j
    raise AssertionError("unreachable")


_MODE_RE = re.compile(r"^\s*Z\s*_?\s*(\d+)\s*\^\s*\{?\s*([+-]?\d+)\s*\}?\s*$", re.IGNORECASE)


def parse_mode_name(name: str) -> tuple[int, int]:
    """Parse names like ``"Z4^2"`` or ``"Z6^-2"`` into ``(n, m)``.

    A bare ``"j12"`` selects Noll index 12 directly.
    """
    s = name.strip()
    if s[:1] in "jJ" and s[1:].isdigit():
        return noll_to_nm(int(s[1:]))
    match = _MODE_RE.match(s)
    if not match:
        raise ValueError(f"unrecognized Zernike mode name {name!r}")
    n, m = int(match.group(1)), int(match.group(2))
    nm_to_noll(n, m)  # validates
    return n, m


def mode_index(name: str) -> int:
    """Zero-based column of the named mode in a Noll-ordered basis."""
    return nm_to_noll(*parse_mode_name(name)) - 1


# --- evaluation -----------------------------------------------------------


def radial_polynomial(n: int, m: int, rho: np.ndarray) -> np.ndarray:
    """Zernike radial polynomial R_n^|m| evaluated through a Jacobi recurrence."""
    m = abs(m)
    k = (n - m) // 2
    sign = -1.0 if k % 2 else 1.0
    return sign * rho**m * eval_jacobi(k, m, 0, 1.0 - 2.0 * rho**2)


def zernike_values(j: int, rho: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Unit-RMS Zernike mode with Noll index ``j`` at polar points."""
    n, m = noll_to_nm(j)
    if m == 0:
        return np.sqrt(n + 1.0) * radial_polynomial(n, 0, rho)
    norm = np.sqrt(2.0 * (n + 1))
    radial = radial_polynomial(n, m, rho)
    if m > 0:
        return norm * radial * np.cos(m * phi)
    return norm * radial * np.sin(-m * phi)


@dataclass(frozen=True, eq=False)
class ZernikeBasis:
    """Noll-ordered Zernike modes sampled on the aperture pixels of a grid."""

    grid: ApertureGrid
    n_modes: int
    sample_matrix: np.ndarray = field(repr=False)
    indexing: tuple[tuple[int, int], ...] = field(repr=False)
    _q: np.ndarray = field(repr=False)
    _r: np.ndarray = field(repr=False)

    def fit_values(self, values: np.ndarray) -> np.ndarray:
        """Least-squares coefficients for aperture-pixel values.

        ``values`` has shape ``(n_pixels,)`` or ``(n_pixels, k)`` for ``k``
        surfaces fitted at once.
        """
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self._q.shape[0]:
            raise BasisError(
                f"expected {self._q.shape[0]} aperture values, got {values.shape[0]}"
            )
        return linalg.solve_triangular(self._r, self._q.T @ values, check_finite=False)

    def residual_norm(self, values: np.ndarray) -> float:
        """2-norm of the part of ``values`` outside the span of the basis."""
        values = np.asarray(values, dtype=float)
        return float(np.linalg.norm(values - self._q @ (self._q.T @ values)))


def build_basis(grid: ApertureGrid, n_modes: int) -> ZernikeBasis:
    """Sample the first ``n_modes`` Noll modes on ``grid`` and factor them.

    Raises
    ------
    BasisError
        If the aperture has fewer pixels than modes or the sampled modes are
        numerically dependent.
    """
    if n_modes < 1:
        raise BasisError("n_modes must be at least 1")
    if grid.n_pixels < n_modes:
        raise BasisError(
            f"aperture has {grid.n_pixels} pixels, fewer than n_modes={n_modes}"
        )
    rho, phi = grid.polar_coordinates()
    sample = np.empty((rho.size, n_modes))
    for j in range(1, n_modes + 1):
        sample[:, j - 1] = zernike_values(j, rho, phi)
    q, r = linalg.qr(sample, mode="economic", check_finite=False)
    sv = linalg.svdvals(r)
    if sv[-1] == 0 or sv[0] / sv[-1] > MAX_BASIS_CONDITION:
        raise BasisError(
            f"sampled basis is rank deficient (condition {sv[0] / max(sv[-1], 1e-300):.3g}); "
            f"aperture too small for n_modes={n_modes}"
        )
    sample.setflags(write=False)
    indexing = tuple(noll_to_nm(j) for j in range(1, n_modes + 1))
    return ZernikeBasis(grid, n_modes, sample, indexing, q, r)


def _check_grid(basis: ZernikeBasis, surface: SurfaceMap) -> None:
    if surface.mask.shape != basis.grid.shape or not np.array_equal(
        surface.mask, basis.grid.mask
    ):
        raise BasisError("surface grid does not match the basis grid")


def fit_surface(basis: ZernikeBasis, surface: SurfaceMap) -> np.ndarray:
    """Zernike coefficients (micrometers) minimizing the aperture residual."""
    _check_grid(basis, surface)
    return basis.fit_values(surface.values)


def synthesize(basis: ZernikeBasis, coeffs: np.ndarray) -> SurfaceMap:
    """Surface described by ``coeffs``; zero outside the aperture."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (basis.n_modes,):
        raise BasisError(f"expected {basis.n_modes} coefficients, got shape {coeffs.shape}")
    return SurfaceMap.from_values(basis.sample_matrix @ coeffs, basis.grid.mask)


def peak_to_valley(surface: SurfaceMap) -> float:
    values = surface.values
    if values.size == 0:
        raise ValueError("surface has an empty aperture")
    return float(values.max() - values.min())
