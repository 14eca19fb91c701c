from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from adaptdm.control import make_target
from adaptdm.zernike import (
    ApertureGrid,
    BasisError,
    SurfaceMap,
    build_basis,
    fit_surface,
    mode_index,
    nm_to_noll,
    noll_to_nm,
    parse_mode_name,
    peak_to_valley,
    radial_polynomial,
    synthesize,
)

NOLL_TABLE = [
    (0, 0), (1, 1), (1, -1), (2, 0), (2, -2), (2, 2), (3, -1), (3, 1), (3, -3), (3, 3),
    (4, 0), (4, 2), (4, -2), (4, 4), (4, -4), (5, 1), (5, -1), (5, 3), (5, -3), (5, 5),
    (5, -5), (6, 0),
]


def explicit_zernike(n, m, rho, phi):
    """Unit-RMS Zernike from the factorial series (independent of the library path)."""
    am = abs(m)
    radial = sum(
        (-1) ** k * factorial(n - k) / (factorial(k) * factorial((n + am) // 2 - k) * factorial((n - am) // 2 - k))
        * rho ** (n - 2 * k)
        for k in range((n - am) // 2 + 1)
    )
    if m == 0:
        return np.sqrt(n + 1) * radial
    trig = np.cos(am * phi) if m > 0 else np.sin(am * phi)
    return np.sqrt(2 * (n + 1)) * radial * trig


def test_noll_table():
    assert [noll_to_nm(j) for j in range(1, 23)] == NOLL_TABLE
    for j in range(1, 500):
        assert nm_to_noll(*noll_to_nm(j)) == j


def test_mode_names():
    assert parse_mode_name("Z4^2") == (4, 2)
    assert parse_mode_name("Z_6^{-2}") == (6, -2)
    assert parse_mode_name("j12") == (4, 2)
    assert mode_index("Z4^2") == 11
    assert mode_index("Z6^2") == 23
    with pytest.raises(ValueError):
        parse_mode_name("Z4^3")
    with pytest.raises(ValueError):
        parse_mode_name("astig")


@pytest.mark.parametrize("n,m", [(n, m) for n in range(0, 13) for m in range(n % 2, n + 1, 2)])
def test_radial_matches_factorial_series(n, m):
    rho = np.linspace(0, 1, 41)
    expected = explicit_zernike(n, m, rho, 0.0) / (np.sqrt(n + 1) if m == 0 else np.sqrt(2 * (n + 1)))
    np.testing.assert_allclose(radial_polynomial(n, m, rho), expected, atol=1e-11)


@pytest.mark.parametrize("j", [1, 2, 4, 5, 8, 11, 12, 24])
def test_unit_rms_on_continuous_disc(j):
    n, m = noll_to_nm(j)
    val, _ = integrate.dblquad(
        lambda r, p: explicit_zernike(n, m, r, p) ** 2 * r, 0, 2 * np.pi, 0, 1, epsabs=1e-11
    )
    assert val / np.pi == pytest.approx(1.0, rel=1e-8)


def test_grid_invariants():
    with pytest.raises(ValueError):
        ApertureGrid(10, 10, 11)
    g = ApertureGrid(10, 8, 8)
    assert g.center_px == (4.5, 3.5)
    assert g.mask.shape == (8, 10)
    assert g.central_mask(1.0).sum() == g.n_pixels


@pytest.mark.slow
def test_full_sized_basis_has_498_columns():
    grid = ApertureGrid(400, 400, 398)
    basis = build_basis(grid, 498)
    assert basis.sample_matrix.shape == (grid.n_pixels, 498)
    assert basis.indexing[-1] == noll_to_nm(498)


def test_piston_only_basis(small_grid):
    basis = build_basis(small_grid, 1)
    np.testing.assert_array_equal(basis.sample_matrix, np.ones((small_grid.n_pixels, 1)))


def test_discrete_gram_close_to_identity():
    grid = ApertureGrid(64, 64, 60)
    basis = build_basis(grid, 36)
    # independent discrete inner products, pixel by pixel
    cx, cy = grid.center_px
    rows, cols = np.nonzero(grid.mask)
    rho = np.hypot(cols - cx, rows - cy) / grid.radius_px
    phi = np.arctan2(rows - cy, cols - cx)
    vals = np.column_stack([explicit_zernike(*noll_to_nm(j), rho, phi) for j in range(1, 37)])
    gram_oracle = vals.T @ vals / grid.n_pixels
    gram = basis.sample_matrix.T @ basis.sample_matrix / grid.n_pixels
    np.testing.assert_allclose(gram, gram_oracle, atol=1e-10)
    off = gram - np.diag(np.diag(gram))
    assert np.abs(off).max() / np.diag(gram).min() < 0.05


def test_rank_deficient_basis_rejected():
    with pytest.raises(BasisError):
        build_basis(ApertureGrid(4, 4, 4), 15)  # 12 pixels < 15 modes
    with pytest.raises(BasisError):
        build_basis(ApertureGrid(3, 3, 3), 9)  # 9 pixels, symmetric: dependent columns


def test_fit_unit_vectors(small_basis):
    for j in range(small_basis.n_modes):
        surf = SurfaceMap.from_values(small_basis.sample_matrix[:, j], small_basis.grid.mask)
        e = np.zeros(small_basis.n_modes)
        e[j] = 1.0
        np.testing.assert_allclose(fit_surface(small_basis, surf), e, atol=1e-10)


def test_fit_zero_and_synthesize_basics(small_basis):
    grid = small_basis.grid
    zero = SurfaceMap(np.zeros(grid.shape), grid.mask)
    np.testing.assert_array_equal(fit_surface(small_basis, zero), np.zeros(small_basis.n_modes))
    assert np.all(synthesize(small_basis, np.zeros(small_basis.n_modes)).heights_um == 0)
    e1 = np.zeros(small_basis.n_modes)
    e1[0] = 1.0
    np.testing.assert_allclose(synthesize(small_basis, e1).values, 1.0)


def test_dimension_mismatch(small_basis, desk_grid):
    with pytest.raises(BasisError):
        synthesize(small_basis, np.zeros(3))
    with pytest.raises(BasisError):
        fit_surface(small_basis, SurfaceMap(np.zeros(desk_grid.shape), desk_grid.mask))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_round_trip(small_basis, seed, scale):
    c = scale * np.random.default_rng(seed).standard_normal(small_basis.n_modes)
    back = fit_surface(small_basis, synthesize(small_basis, c))
    assert np.linalg.norm(back - c) <= 1e-10 * np.linalg.norm(c)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-10, 10))
def test_fit_linearity(small_basis, seed, alpha):
    rng = np.random.default_rng(seed)
    mask = small_basis.grid.mask
    s1 = SurfaceMap(rng.standard_normal(mask.shape), mask)
    s2 = SurfaceMap(rng.standard_normal(mask.shape), mask)
    combo = SurfaceMap(alpha * s1.heights_um + s2.heights_um, mask)
    lhs = fit_surface(small_basis, combo)
    rhs = alpha * fit_surface(small_basis, s1) + fit_surface(small_basis, s2)
    assert np.linalg.norm(lhs - rhs) <= 1e-9 * max(np.linalg.norm(rhs), 1e-300) + 1e-14


def test_heights_outside_mask_ignored(small_basis, rng):
    mask = small_basis.grid.mask
    h = rng.standard_normal(mask.shape)
    h2 = h.copy()
    h2[~mask] = 1e6
    assert np.array_equal(
        fit_surface(small_basis, SurfaceMap(h, mask)), fit_surface(small_basis, SurfaceMap(h2, mask))
    )


def test_determinism(small_grid, rng):
    b1, b2 = build_basis(small_grid, 21), build_basis(small_grid, 21)
    assert np.array_equal(b1.sample_matrix, b2.sample_matrix)
    surf = SurfaceMap(rng.standard_normal(small_grid.shape), small_grid.mask)
    assert np.array_equal(fit_surface(b1, surf), fit_surface(b2, surf))


def test_nested_residual_non_increasing(desk_grid, rng):
    values = rng.standard_normal(desk_grid.n_pixels)
    residuals = [build_basis(desk_grid, n).residual_norm(values) for n in (1, 3, 6, 10, 15, 21, 28, 36)]
    assert all(b <= a + 1e-12 for a, b in zip(residuals, residuals[1:]))


def test_peak_to_valley(small_grid):
    mask = small_grid.mask
    assert peak_to_valley(SurfaceMap(np.zeros(mask.shape), mask)) == 0.0
    h = np.zeros(mask.shape)
    rows, cols = np.nonzero(mask)
    h[rows[0], cols[0]] = -0.5
    h[rows[-1], cols[-1]] = 0.7
    h[0, 0] = 50.0  # outside the aperture
    assert not mask[0, 0]
    assert peak_to_valley(SurfaceMap(h, mask)) == pytest.approx(1.2)
    with pytest.raises(ValueError):
        peak_to_valley(SurfaceMap(np.zeros((2, 2)), np.zeros((2, 2), bool)))


def test_scaled_target_pv(desk_basis):
    target = make_target(desk_basis, "Z4^2", 1.1829, piston_um=2.0)
    assert peak_to_valley(synthesize(desk_basis, target.z_D)) == pytest.approx(1.1829, rel=1e-12)
    assert target.z_D[mode_index("Z4^2")] > 0
