"""Probabilistic and deterministic verification of corrected ensembles.

Array conventions for single-lead metrics: ensembles are (T, N, lat, lon),
observations (T, lat, lon), single maps (lat, lon).  Land cells are NaN and
are excluded through the grid's land mask.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import PolarGrid, area_weighted_mean

EDGE_THRESHOLD = 0.15
MARGINAL_LOW, MARGINAL_HIGH = 0.15, 0.90
DEFAULT_QQ_LEVELS = np.linspace(0.01, 0.99, 99)


class ZeroVarianceError(ValueError):
    pass


def marginal_ice_mask(obs_field, land_mask=None):
    """True where 0.15 <= obs <= 0.90 (both inclusive) on ocean."""
    obs_field = np.asarray(obs_field)
    with np.errstate(invalid="ignore"):
        sel = (obs_field >= MARGINAL_LOW) & (obs_field <= MARGINAL_HIGH)
    if land_mask is not None:
        sel &= ~np.broadcast_to(land_mask, sel.shape)
    return sel


@dataclass
class RankHistogram:
    counts: np.ndarray

    @property
    def n_members(self) -> int:
        return len(self.counts) - 1

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.counts.sum()

    @property
    def cdf(self) -> np.ndarray:
        return np.cumsum(self.counts) / self.counts.sum()

    def max_deviation(self) -> float:
        """Largest gap between the CDF and the uniform CDF (k+1)/(N+1)."""
        n = len(self.counts)
        return float(np.max(np.abs(self.cdf - np.arange(1, n + 1) / n)))


def observation_ranks(ensemble, obs, rng):
    """Rank of each observation among its members; ties placed uniformly at random.

    ``ensemble`` is (..., N) and ``obs`` (...,); returns integer ranks in 0..N.
    """
    below = (ensemble < obs[..., None]).sum(-1)
    ties = (ensemble == obs[..., None]).sum(-1)
    return below + np.floor(rng.random(below.shape) * (ties + 1)).astype(np.int64)


def rank_histogram_cdf(ensemble, obs, mask, seed=0) -> RankHistogram:
    """Pooled rank histogram over masked cells and initializations at one lead.

    Parameters
    ----------
    ensemble : ndarray (T, N, lat, lon)
    obs : ndarray (T, lat, lon)
    mask : ndarray of bool (T, lat, lon) or (lat, lon)
    """
    ensemble = np.asarray(ensemble)
    obs = np.asarray(obs)
    n = ensemble.shape[1]
    if n < 1:
        raise ValueError("ensemble needs at least one member")
    mask = np.broadcast_to(mask, obs.shape)
    members = np.moveaxis(ensemble, 1, -1)[mask]
    pooled = obs[mask]
    if pooled.size == 0:
        raise ValueError("rank histogram pool is empty")
    ranks = observation_ranks(members, pooled, np.random.default_rng(seed))
    return RankHistogram(np.bincount(ranks, minlength=n + 1))


def _ocean_cells(grid, *arrays):
    ok = grid.ocean.copy()
    for a in arrays:
        ok &= np.all(np.isfinite(a.reshape(-1, *grid.shape)), axis=0)
    return ok


def soe(ensemble, obs, grid: PolarGrid) -> float:
    """Spread over error at one lead.

    Time-mean member variance (ddof=1) and time-mean squared error of the
    ensemble mean are area-averaged separately; the result is
    sqrt((N+1)/N * var / mse).
    """
    ensemble = np.asarray(ensemble, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    t, n = ensemble.shape[:2]
    if t < 2 or n < 2:
        raise ValueError(f"SOE needs >= 2 initializations and >= 2 members, got T={t}, N={n}")
    cells = _ocean_cells(grid, ensemble, obs)
    var = np.where(cells, ensemble.var(axis=1, ddof=1).mean(axis=0), 0.0)
    mse = np.where(cells, ((ensemble.mean(axis=1) - obs) ** 2).mean(axis=0), 0.0)
    mse_bar = area_weighted_mean(mse, grid.cell_area, cells)
    if mse_bar == 0:
        raise ZeroVarianceError("ensemble mean matches observations everywhere; SOE undefined")
    var_bar = area_weighted_mean(var, grid.cell_area, cells)
    return float(np.sqrt((n + 1) / n * var_bar / mse_bar))


def rmse_and_spread(ensemble, obs, grid: PolarGrid) -> tuple[float, float]:
    """Area-mean of per-cell RMSE (ensemble mean vs obs, over time) and of time-mean member std."""
    ensemble = np.asarray(ensemble, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    n = ensemble.shape[1]
    cells = _ocean_cells(grid, ensemble, obs)
    rmse = np.sqrt(((ensemble.mean(axis=1) - obs) ** 2).mean(axis=0))
    std = ensemble.std(axis=1, ddof=1) if n > 1 else np.zeros_like(obs)
    spread = std.mean(axis=0)
    return (
        float(area_weighted_mean(np.where(cells, rmse, 0.0), grid.cell_area, cells)),
        float(area_weighted_mean(np.where(cells, spread, 0.0), grid.cell_area, cells)),
    )


def qq_quantiles(ens_pool, obs_pool, levels=DEFAULT_QQ_LEVELS) -> np.ndarray:
    """Paired empirical quantiles (linear interpolation between order statistics).

    Returns an array (len(levels), 2): ensemble quantile, observed quantile.
    """
    ens_pool = np.asarray(ens_pool, dtype=np.float64).ravel()
    obs_pool = np.asarray(obs_pool, dtype=np.float64).ravel()
    if ens_pool.size == 0 or obs_pool.size == 0:
        raise ValueError("QQ pools must be non-empty")
    return np.stack([np.quantile(ens_pool, levels), np.quantile(obs_pool, levels)], axis=1)


def _ocean_sum(values, grid):
    area = np.where(grid.ocean, grid.cell_area, 0.0)
    return np.nansum(np.where(grid.ocean, values, 0.0) * area, axis=(-2, -1))


def sia(field, grid: PolarGrid):
    """Sea ice area: sum of SIC times cell area over ocean (km²)."""
    return _ocean_sum(np.asarray(field, dtype=np.float64), grid)


def sie(field, grid: PolarGrid):
    """Sea ice extent: area of ocean cells with SIC > 0.15 (km²)."""
    with np.errstate(invalid="ignore"):
        return _ocean_sum((np.asarray(field) > EDGE_THRESHOLD).astype(np.float64), grid)


def iiee(forecast_mean, obs, grid: PolarGrid):
    """Integrated ice edge error: area where exactly one field exceeds 0.15 (km²)."""
    with np.errstate(invalid="ignore"):
        a = np.asarray(forecast_mean) > EDGE_THRESHOLD
        b = np.asarray(obs) > EDGE_THRESHOLD
    return _ocean_sum((a != b).astype(np.float64), grid)


def pattern_correlation(forecast_mean, obs, grid: PolarGrid) -> float:
    """Area-weighted centered correlation between two maps."""
    f = np.asarray(forecast_mean, dtype=np.float64)
    o = np.asarray(obs, dtype=np.float64)
    cells = grid.ocean & np.isfinite(f) & np.isfinite(o)
    if cells.sum() < 2:
        raise ValueError("pattern correlation needs at least two ocean cells")
    w = grid.cell_area[cells] / grid.cell_area[cells].sum()
    fa = f[cells] - w @ f[cells]
    oa = o[cells] - w @ o[cells]
    vf, vo = w @ (fa * fa), w @ (oa * oa)
    if vf <= 0 or vo <= 0:
        raise ZeroVarianceError("zero variance map in pattern correlation")
    return float((w @ (fa * oa)) / np.sqrt(vf * vo))


# ------------------------------------------------------------------ report

TABLE_FIELDS = ["lead", "n_init", "soe", "rmse_grid", "spread", "rmse_sia", "rmse_sie", "mean_iiee", "pattern_corr"]


@dataclass
class MetricReport:
    """Per-lead verification tables, rank CDFs and QQ quantile pairs."""

    table: list
    rank_cdfs: dict
    qq: dict
    n_members: int
    flags: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def column(self, name) -> np.ndarray:
        return np.array([row[name] for row in self.table], dtype=np.float64)

    @property
    def leads(self) -> np.ndarray:
        return self.column("lead").astype(int)

    def rank_cdf_deviation(self) -> np.ndarray:
        out = []
        for lead in self.leads:
            cdf = np.asarray(self.rank_cdfs[int(lead)])
            out.append(np.max(np.abs(cdf - np.arange(1, len(cdf) + 1) / len(cdf))))
        return np.array(out)

    def summary(self) -> dict:
        soe_v = self.column("soe")
        return {
            "n_members": self.n_members,
            "leads": self.leads.tolist(),
            "mean_abs_soe_minus_1": float(np.nanmean(np.abs(soe_v - 1.0))),
            "mean_rmse_grid": float(np.nanmean(self.column("rmse_grid"))),
            "mean_spread": float(np.nanmean(self.column("spread"))),
            "mean_rmse_sia": float(np.nanmean(self.column("rmse_sia"))),
            "mean_rmse_sie": float(np.nanmean(self.column("rmse_sie"))),
            "mean_iiee": float(np.nanmean(self.column("mean_iiee"))),
            "mean_pattern_corr": float(np.nanmean(self.column("pattern_corr"))),
            "max_rank_cdf_deviation": self.rank_cdf_deviation().tolist(),
            "flags": self.flags,
            **self.meta,
        }

    def write(self, out_dir, prefix, provenance: str = "") -> dict:
        """Write the CSV table, the JSON summary and two-column curve files."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {}
        p = out / f"{prefix}_metrics.csv"
        with open(p, "w", newline="") as fh:
            if provenance:
                fh.write(f"# {provenance}\n")
            wr = csv.DictWriter(fh, fieldnames=TABLE_FIELDS)
            wr.writeheader()
            for row in self.table:
                wr.writerow({k: row[k] for k in TABLE_FIELDS})
        paths["table"] = p
        p = out / f"{prefix}_summary.json"
        p.write_text(json.dumps({**self.summary(), "provenance": provenance}, indent=2, sort_keys=True))
        paths["summary"] = p
        for lead in self.leads:
            cdf = np.asarray(self.rank_cdfs[int(lead)])
            ranks = np.arange(len(cdf)) / (len(cdf) - 1) if len(cdf) > 1 else np.zeros(1)
            paths[f"cdf_{lead}"] = write_two_column(
                out / f"{prefix}_rank_cdf_lead{lead:02d}.txt", ranks, cdf, "normalized_rank", "cdf", provenance
            )
            qq = np.asarray(self.qq[int(lead)])
            paths[f"qq_{lead}"] = write_two_column(
                out / f"{prefix}_qq_lead{lead:02d}.txt", qq[:, 1], qq[:, 0], "obs_quantile", "ens_quantile", provenance
            )
        return paths

    @classmethod
    def from_files(cls, out_dir, prefix) -> "MetricReport":
        out = Path(out_dir)
        with open(out / f"{prefix}_metrics.csv") as fh:
            rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
        table = [{k: (int(v) if k in ("lead", "n_init") else float(v)) for k, v in r.items()} for r in rows]
        summ = json.loads((out / f"{prefix}_summary.json").read_text())
        cdfs, qq = {}, {}
        for row in table:
            lead = row["lead"]
            cdfs[lead] = read_two_column(out / f"{prefix}_rank_cdf_lead{lead:02d}.txt")[:, 1]
            q = read_two_column(out / f"{prefix}_qq_lead{lead:02d}.txt")
            qq[lead] = q[:, ::-1]
        return cls(table, cdfs, qq, int(summ["n_members"]), summ.get("flags", []))


def write_two_column(path, x, y, xname, yname, provenance=""):
    path = Path(path)
    with open(path, "w") as fh:
        if provenance:
            fh.write(f"# {provenance}\n")
        fh.write(f"# {xname} {yname}\n")
        for a, b in zip(x, y):
            fh.write(f"{float(a)!r} {float(b)!r}\n")
    return path


def read_two_column(path) -> np.ndarray:
    return np.loadtxt(path, comments="#", ndmin=2)


def lead_slices(cube_values, obs, inits, pairs, lead):
    """Ensemble (T, N, lat, lon) and obs (T, lat, lon) for the pairs at ``lead``."""
    ti = pairs[pairs[:, 1] == lead, 0]
    ens = cube_values[ti, lead - 1]
    ob = np.stack([obs.month(int(inits[t]) + lead) for t in ti]) if len(ti) else np.empty((0, *obs.grid.shape))
    return ens, ob


def compute_report(cube, obs, pairs, levels=DEFAULT_QQ_LEVELS, seed=0) -> MetricReport:
    """Verify an ensemble cube against observations on a set of (init, lead) pairs."""
    grid = cube.grid
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    table, cdfs, qq, flags = [], {}, {}, []
    for lead in np.unique(pairs[:, 1]):
        lead = int(lead)
        ens, ob = lead_slices(cube.values, obs, cube.inits, pairs, lead)
        if np.isnan(ens[..., grid.ocean]).any():
            raise ValueError(f"ensemble has missing ocean values at lead {lead}")
        mean = ens.mean(axis=1, dtype=np.float64)
        row = {"lead": lead, "n_init": len(ob)}
        try:
            row["soe"] = soe(ens, ob, grid)
        except ValueError as exc:
            row["soe"] = float("nan")
            flags.append(f"lead {lead}: soe {exc}")
        row["rmse_grid"], row["spread"] = rmse_and_spread(ens, ob, grid)
        row["rmse_sia"] = float(np.sqrt(np.mean((sia(mean, grid) - sia(ob, grid)) ** 2)))
        row["rmse_sie"] = float(np.sqrt(np.mean((sie(mean, grid) - sie(ob, grid)) ** 2)))
        row["mean_iiee"] = float(np.mean(iiee(mean, ob, grid)))
        corrs = []
        for k in range(len(ob)):
            try:
                corrs.append(pattern_correlation(mean[k], ob[k], grid))
            except ZeroVarianceError:
                flags.append(f"lead {lead}: zero-variance map at pair {k}")
        row["pattern_corr"] = float(np.mean(corrs)) if corrs else float("nan")
        table.append(row)

        mim = marginal_ice_mask(ob, grid.land_mask)
        if mim.any():
            cdfs[lead] = rank_histogram_cdf(ens, ob, mim, seed=seed + lead).cdf
            qq[lead] = qq_quantiles(np.moveaxis(ens, 1, -1)[mim], ob[mim], levels)
        else:
            flags.append(f"lead {lead}: no marginal ice cells")
            cdfs[lead] = np.full(ens.shape[1] + 1, np.nan)
            qq[lead] = np.full((len(levels), 2), np.nan)
    return MetricReport(table, cdfs, qq, cube.n_member, flags)
