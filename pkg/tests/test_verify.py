import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sicvae.grid import PolarGrid, make_land_mask
from sicvae.verify import (
    MetricReport,
    RankHistogram,
    ZeroVarianceError,
    compute_report,
    iiee,
    marginal_ice_mask,
    observation_ranks,
    pattern_correlation,
    qq_quantiles,
    rank_histogram_cdf,
    rmse_and_spread,
    sia,
    sie,
    soe,
)

from . import oracles
from .conftest import random_ensemble


@pytest.fixture
def grid8():
    return PolarGrid(8, 8, land_mask=make_land_mask(8, 8, 0.2, 0, seed=4))


def test_marginal_mask_bounds():
    obs = np.array([[0.5, 0.95, 0.15, 0.90, 0.149, np.nan]])
    np.testing.assert_array_equal(marginal_ice_mask(obs), [[True, False, True, True, False, False]])
    land = np.array([[True, False, False, False, False, False]])
    assert not marginal_ice_mask(obs, land)[0, 0]


# ---------------------------------------------------------------- rank histogram


def test_rank_all_below():
    ens = np.ones((3, 4, 2, 2))
    obs = np.zeros((3, 2, 2))
    h = rank_histogram_cdf(ens, obs, np.ones((2, 2), bool))
    assert h.counts[0] == 12 and np.all(h.cdf == 1.0)


def test_rank_counts_match_loop(grid8):
    rng = np.random.default_rng(0)
    ens, obs = random_ensemble(rng, 5, 6, grid8.shape)
    mask = rng.random((5, *grid8.shape)) > 0.4
    got = rank_histogram_cdf(ens, obs, mask).counts
    np.testing.assert_array_equal(got, oracles.rank_counts_loop(ens, obs, mask))


def test_rank_single_member_counting():
    rng = np.random.default_rng(1)
    ens = rng.random((200, 1, 3, 3))
    obs = rng.random((200, 3, 3))
    h = rank_histogram_cdf(ens, obs, np.ones((3, 3), bool))
    assert h.cdf[0] == pytest.approx(np.mean(obs < ens[:, 0]))


def test_rank_uniform_for_exchangeable():
    rng = np.random.default_rng(2)
    ens = rng.normal(size=(1000, 9, 10, 10))
    obs = rng.normal(size=(1000, 10, 10))
    h = rank_histogram_cdf(ens, obs, np.ones((10, 10), bool), seed=0)
    assert np.all(np.abs(h.frequencies - 0.1) < 0.01)
    assert h.max_deviation() < 0.02


def test_rank_ties_spread_evenly():
    ens = np.zeros((20000, 4))
    ranks = observation_ranks(ens, np.zeros(20000), np.random.default_rng(0))
    freq = np.bincount(ranks, minlength=5) / 20000
    assert np.all(np.abs(freq - 0.2) < 0.02)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_rank_cdf_is_a_cdf(seed, n):
    rng = np.random.default_rng(seed)
    ens = np.round(rng.random((4, n, 3, 3)), 1)
    obs = np.round(rng.random((4, 3, 3)), 1)
    cdf = rank_histogram_cdf(ens, obs, np.ones((3, 3), bool), seed=seed).cdf
    assert np.all(np.diff(cdf) >= 0) and cdf[0] >= 0 and cdf[-1] == pytest.approx(1.0)


def test_rank_empty_pool():
    with pytest.raises(ValueError):
        rank_histogram_cdf(np.ones((2, 3, 2, 2)), np.ones((2, 2, 2)), np.zeros((2, 2), bool))


def test_rank_histogram_uniform_deviation_zero():
    assert RankHistogram(np.full(11, 7)).max_deviation() == pytest.approx(0.0, abs=1e-15)


# ---------------------------------------------------------------- SOE, RMSE, spread


def test_soe_matches_loop(grid8):
    rng = np.random.default_rng(3)
    ens, obs = random_ensemble(rng, 6, 5, grid8.shape, grid8.land_mask)
    assert soe(ens, obs, grid8) == pytest.approx(oracles.soe_loop(ens, obs, grid8), rel=1e-10)


def test_rmse_spread_match_loop(grid8):
    rng = np.random.default_rng(4)
    ens, obs = random_ensemble(rng, 6, 5, grid8.shape, grid8.land_mask)
    r, s = rmse_and_spread(ens, obs, grid8)
    ro, so = oracles.rmse_spread_loop(ens, obs, grid8)
    assert r == pytest.approx(ro, rel=1e-10) and s == pytest.approx(so, rel=1e-10)


def test_soe_exchangeable_is_one():
    grid = PolarGrid(4, 4)
    rng = np.random.default_rng(5)
    ens = rng.normal(size=(500, 10, 4, 4))
    obs = rng.normal(size=(500, 4, 4))
    assert 0.95 <= soe(ens, obs, grid) <= 1.05


def test_soe_halves_with_spread():
    grid = PolarGrid(3, 4)
    rng = np.random.default_rng(6)
    ens = rng.normal(size=(50, 6, 3, 4))
    mean = ens.mean(1, keepdims=True)
    obs = rng.normal(size=(50, 3, 4))
    half = mean + 0.5 * (ens - mean)
    assert soe(half, obs, grid) == pytest.approx(0.5 * soe(ens, obs, grid), rel=1e-12)


def test_soe_member_relabeling(grid8):
    rng = np.random.default_rng(7)
    ens, obs = random_ensemble(rng, 5, 6, grid8.shape, grid8.land_mask)
    perm = rng.permutation(6)
    assert soe(ens[:, perm], obs, grid8) == pytest.approx(soe(ens, obs, grid8), rel=1e-13)


def test_soe_degenerate():
    grid = PolarGrid(2, 2)
    ens = np.zeros((3, 4, 2, 2))
    with pytest.raises(ZeroVarianceError):
        soe(ens, np.zeros((3, 2, 2)), grid)
    with pytest.raises(ValueError):
        soe(np.zeros((3, 1, 2, 2)), np.ones((3, 2, 2)), grid)


def test_rmse_spread_trivial():
    grid = PolarGrid(2, 4)
    ens = np.full((3, 5, 2, 4), 0.4)
    r, s = rmse_and_spread(ens, np.full((3, 2, 4), 0.4), grid)
    assert r == 0.0 and s == 0.0


# ---------------------------------------------------------------- QQ


def test_qq_examples():
    pool = np.random.default_rng(0).random(300)
    q = qq_quantiles(pool, pool)
    np.testing.assert_array_equal(q[:, 0], q[:, 1])
    assert qq_quantiles([0.0, 1.0], [0.0, 1.0], [0.5])[0, 0] == 0.5
    q = qq_quantiles(pool, pool + 0.1, [0.25, 0.5, 0.75])
    np.testing.assert_allclose(q[:, 1] - q[:, 0], 0.1, atol=1e-12)
    with pytest.raises(ValueError):
        qq_quantiles([], [1.0])


# ---------------------------------------------------------------- integrated measures


def test_sia_sie_iiee_examples():
    grid = PolarGrid(4, 4, land_mask=make_land_mask(4, 4, 0.25, 0, seed=1))
    ocean_area = grid.cell_area[grid.ocean].sum()
    assert sia(np.where(grid.ocean, 1.0, np.nan), grid) == pytest.approx(ocean_area)
    assert sia(np.zeros(grid.shape), grid) == 0.0
    assert sie(np.full(grid.shape, 0.15), grid) == 0.0
    one = np.zeros(grid.shape)
    i, j = np.argwhere(grid.ocean)[0]
    one[i, j] = 0.2
    assert sie(one, grid) == pytest.approx(grid.cell_area[i, j])
    f = np.zeros(grid.shape)
    f[i, j] = 0.5
    assert iiee(f, np.zeros(grid.shape), grid) == pytest.approx(grid.cell_area[i, j])
    assert iiee(f, f, grid) == 0.0


def test_sia_checkerboard_uniform_area():
    grid = PolarGrid(4, 4)
    grid._area = np.ones(grid.shape)  # uniform-area toy grid
    board = (np.add.outer(np.arange(4), np.arange(4)) % 2).astype(float)
    assert sia(board, grid) == 8.0


def test_integrated_measures_match_loops(grid8):
    rng = np.random.default_rng(8)
    a, b = rng.random(grid8.shape), rng.random(grid8.shape)
    assert sia(a, grid8) == pytest.approx(oracles.sia_loop(a, grid8), rel=1e-12)
    assert sie(a, grid8) == pytest.approx(oracles.sie_loop(a, grid8), rel=1e-12)
    assert iiee(a, b, grid8) == pytest.approx(oracles.iiee_loop(a, b, grid8), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_iiee_symmetric_triangle_and_sie_bound(seed):
    grid = PolarGrid(5, 6)
    rng = np.random.default_rng(seed)
    a, b, c = rng.random((3, *grid.shape))
    assert iiee(a, b, grid) == iiee(b, a, grid)
    assert iiee(a, c, grid) <= iiee(a, b, grid) + iiee(b, c, grid) + 1e-6
    assert sie(a, grid) >= sia(a, grid) - 0.15 * grid.cell_area.sum() - 1e-6


def test_integrated_measures_scale_with_area():
    grid = PolarGrid(3, 4)
    rng = np.random.default_rng(9)
    a, b = rng.random((2, *grid.shape))
    base = (sia(a, grid), sie(a, grid), iiee(a, b, grid))
    grid._area = grid.cell_area * 3.0
    for got, want in zip((sia(a, grid), sie(a, grid), iiee(a, b, grid)), base):
        assert got == pytest.approx(3 * want, rel=1e-12)


def test_pattern_correlation_examples():
    grid = PolarGrid(4, 6)
    obs = np.random.default_rng(10).random(grid.shape)
    assert pattern_correlation(obs, obs, grid) == pytest.approx(1.0)
    assert pattern_correlation(0.7 - obs, obs, grid) == pytest.approx(-1.0)
    assert pattern_correlation(2.5 * obs + 0.3, obs, grid) == pytest.approx(1.0)
    with pytest.raises(ZeroVarianceError):
        pattern_correlation(np.ones(grid.shape), obs, grid)


# ---------------------------------------------------------------- report


def test_report_round_trip(tmp_path, cube_pair):
    hc, ob, _ = cube_pair
    pairs = np.array([[t, l] for t in range(len(hc.inits) - 12) for l in (1, 2)])
    rep = compute_report(hc, ob, pairs)
    assert list(rep.leads) == [1, 2]
    rep.write(tmp_path, "raw", "config=abc seed=0")
    back = MetricReport.from_files(tmp_path, "raw")
    np.testing.assert_allclose(back.column("soe"), rep.column("soe"))
    np.testing.assert_allclose(back.rank_cdf_deviation(), rep.rank_cdf_deviation())
    np.testing.assert_allclose(back.qq[1], rep.qq[1])
    assert (tmp_path / "raw_metrics.csv").read_text().startswith("# config=abc seed=0")


def test_report_rejects_missing_members(cube_pair):
    hc, ob, _ = cube_pair
    vals = hc.values.copy()
    vals[0, 0, 0, ~hc.grid.land_mask] = np.nan
    with pytest.raises(ValueError, match="missing"):
        compute_report(hc.with_values(vals), ob, np.array([[0, 1], [1, 1]]))


def test_report_metric_values_consistent(cube_pair):
    hc, ob, _ = cube_pair
    pairs = np.array([[t, 3] for t in range(10)])
    rep = compute_report(hc, ob, pairs)
    ens = hc.values[:10, 2]
    obs = np.stack([ob.month(int(hc.inits[t]) + 3) for t in range(10)])
    assert rep.table[0]["soe"] == pytest.approx(soe(ens, obs, hc.grid))
    assert rep.table[0]["n_init"] == 10
