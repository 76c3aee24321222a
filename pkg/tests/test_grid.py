import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sicvae.grid import (
    EARTH_RADIUS_KM,
    FoldedField,
    PolarGrid,
    area_weighted_mean,
    fold_polar,
    make_land_mask,
    unfold_polar,
)


def fold_by_loops(field):
    """Independent index mapping: west half as is, east half flipped in latitude on top."""
    n_lat, n_lon = field.shape
    half = n_lon // 2
    out = np.empty((2 * n_lat, half), dtype=field.dtype)
    for i in range(n_lat):
        for j in range(half):
            out[i, j] = field[i, j]
            out[n_lat + i, j] = field[n_lat - 1 - i, half + j]
    return out


def test_fold_paper_shape():
    grid = PolarGrid(50, 360)
    folded = fold_polar(np.zeros(grid.shape), grid)
    assert folded.values.shape == (100, 180)
    assert grid.folded_shape == (100, 180)


def test_fold_4x8_index_mapping():
    grid = PolarGrid(4, 8)
    field = np.arange(1, 33, dtype=float).reshape(4, 8)
    folded = fold_polar(field, grid).values
    assert folded.shape == (8, 4)
    np.testing.assert_array_equal(folded, fold_by_loops(field))
    np.testing.assert_array_equal(folded[4:], field[::-1, 4:8])
    np.testing.assert_array_equal(folded[:4], field[:, :4])


def test_unfold_4x8_back():
    grid = PolarGrid(4, 8)
    field = np.arange(1, 33, dtype=float).reshape(4, 8)
    np.testing.assert_array_equal(unfold_polar(fold_by_loops(field), grid), field)


def test_fold_valid_mask_is_folded_ocean():
    land = make_land_mask(8, 16, 0.2, pole_hole_rows=1, seed=3)
    grid = PolarGrid(8, 16, land_mask=land)
    folded = fold_polar(np.ones(grid.shape), grid)
    np.testing.assert_array_equal(folded.valid_mask, fold_by_loops(~land))


def test_fold_is_bijection():
    grid = PolarGrid(6, 10)
    idx = np.arange(60).reshape(6, 10)
    folded = fold_polar(idx, grid).values
    assert sorted(folded.ravel().tolist()) == list(range(60))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**31 - 1))
def test_round_trip_random(n_lat, half, seed):
    grid = PolarGrid(n_lat, 2 * half)
    field = np.random.default_rng(seed).standard_normal(grid.shape)
    back = unfold_polar(fold_polar(field, grid), grid)
    assert back.tobytes() == field.tobytes()


def test_constant_field_unfolds_to_constant():
    grid = PolarGrid(5, 12)
    folded = FoldedField(np.full(grid.folded_shape, 0.37), np.ones(grid.folded_shape, bool))
    assert np.all(unfold_polar(folded, grid) == 0.37)


def test_fold_errors():
    with pytest.raises(ValueError):
        PolarGrid(4, 7)
    grid = PolarGrid(4, 8)
    with pytest.raises(ValueError):
        fold_polar(np.zeros((4, 6)), grid)
    with pytest.raises(ValueError):
        unfold_polar(np.zeros((4, 8)), grid)


def test_cell_area_geometry():
    grid = PolarGrid(50, 360)
    area = grid.cell_area
    assert np.all(area > 0)
    assert np.all(np.diff(area[:, 0]) < 0)
    ratio = area[:, 0] / np.cos(np.deg2rad(grid.lat_centers))
    np.testing.assert_allclose(ratio, ratio[0], rtol=1e-12)
    # the cap north of 50N: 2πR²(1 - sin 50°); midpoint rule is accurate to well below 0.1%
    cap = 2 * np.pi * EARTH_RADIUS_KM**2 * (1 - np.sin(np.deg2rad(50.0)))
    assert area.sum() == pytest.approx(cap, rel=1e-3)


def test_area_weighted_mean_examples():
    assert area_weighted_mean(np.array([[0.0, 1.0]]), np.array([[1.0, 3.0]])) == pytest.approx(0.75)
    w = np.random.default_rng(0).random((3, 4)) + 0.1
    assert area_weighted_mean(np.full((3, 4), 2.5), w) == pytest.approx(2.5)
    f = np.array([[5.0, 0.0], [7.0, 0.0]])
    mask = np.array([[False, True], [False, True]])
    assert area_weighted_mean(f, np.ones((2, 2)), mask) == 0.0


def test_area_weighted_mean_all_masked():
    with pytest.raises(ValueError):
        area_weighted_mean(np.ones((2, 2)), np.ones((2, 2)), np.zeros((2, 2), bool))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_area_weighted_mean_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    f, w = rng.random((4, 5)), rng.random((4, 5)) + 0.01
    m = rng.random((4, 5)) > 0.3
    m[0, 0] = True
    perm = rng.permutation(20)

    def p(a):
        return a.ravel()[perm].reshape(4, 5)

    assert area_weighted_mean(p(f), p(w), p(m)) == pytest.approx(area_weighted_mean(f, w, m), rel=1e-12)


def test_grid_dict_round_trip():
    grid = PolarGrid(8, 16, land_mask=make_land_mask(8, 16, 0.2, 1, seed=5))
    back = PolarGrid.from_dict(grid.to_dict())
    assert back.same_geometry(grid)
