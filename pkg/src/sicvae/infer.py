"""Prior-scaled ensemble generation and spread-over-error scale calibration."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .data.cubes import HindcastCube, ObsCube
from .grid import unfold_array
from .model import CVAE, reparameterize
from .train import prepare_pairs
from .verify import compute_report

DEFAULT_SCALES = (1.0, 1.5, 2.0, 2.5, 3.0, 4.0)


def latent_noise(seed, init_month, lead, n_members, latent_dim):
    """Standard normal draws for one (init, lead); member k always gets row k."""
    rng = np.random.default_rng([int(seed), int(init_month), int(lead)])
    return rng.standard_normal((n_members, latent_dim)).astype(np.float32)


class _Prepared:
    """Deterministic first guess, features and prior computed once per pair."""

    def __init__(self, model: CVAE, hindcast, pairs, xbar=None):
        self.model = model
        self.data = prepare_pairs(hindcast, None, pairs, xbar=xbar)
        self.grid = hindcast.grid
        self.inits = hindcast.inits

    def pair_state(self, k):
        _, xbar, cond, mask = self.data.batch(torch.tensor([k]))
        with torch.no_grad():
            ytilde, feat = self.model.deterministic(xbar, cond, mask)
            prior = self.model.prior(ytilde, xbar, cond, mask)
        return feat, prior, mask

    def decode(self, feat, prior, mask, eps, scale, chunk=64):
        outs = []
        with torch.no_grad():
            for s in range(0, eps.shape[0], chunk):
                e = torch.from_numpy(eps[s : s + chunk])
                z = reparameterize(prior, e, scale) if scale > 0 else prior.mean.expand(len(e), -1)
                f = feat.expand(len(e), -1, -1, -1)
                outs.append(self.model.decode(z, f, mask)[:, 0].numpy())
        fields = unfold_array(np.concatenate(outs))
        fields = np.clip(fields, 0.0, 1.0)
        fields[:, self.grid.land_mask] = np.nan
        return fields.astype(np.float32)


def sample_ensemble(model: CVAE, hindcast: HindcastCube, t_index: int, lead: int, n_members: int = 100, scale: float = 1.0, seed: int = 0):
    """Corrected members (n_members, lat, lon) for one initialization and lead.

    Latent draws are z = μ_prior + scale * σ_prior * ε; members are decoder
    means, clipped to [0, 1] and NaN on land. ``scale=0`` decodes the prior mean.
    """
    if n_members < 1:
        raise ValueError("n_members must be >= 1")
    if scale < 0:
        raise ValueError("scale must be >= 0")
    _check_model_grid(model, hindcast)
    prep = _Prepared(model, hindcast, [[t_index, lead]])
    feat, prior, mask = prep.pair_state(0)
    eps = latent_noise(seed, hindcast.inits[t_index], lead, n_members, model.cfg.latent_dim)
    return prep.decode(feat, prior, mask, eps, scale)


def _check_model_grid(model, hindcast):
    if tuple(model.cfg.grid_shape) != hindcast.grid.folded_shape:
        raise ValueError(
            f"checkpoint expects folded grid {model.cfg.grid_shape}, cube folds to {hindcast.grid.folded_shape}"
        )


def generate_ensembles(model: CVAE, hindcast: HindcastCube, pairs, n_members=100, scales=(1.0,), seed=0):
    """Corrected cubes for several prior scales sharing the same latent draws.

    Returns ``({scale: HindcastCube}, local_pairs)``. The cubes hold only the
    initializations named in ``pairs``; ``local_pairs`` indexes into them.
    Leads not requested for an initialization are NaN.
    """
    _check_model_grid(model, hindcast)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    used = np.unique(pairs[:, 0])
    local = np.stack([np.searchsorted(used, pairs[:, 0]), pairs[:, 1]], axis=1)
    grid = hindcast.grid
    shape = (len(used), hindcast.n_lead, n_members, *grid.shape)
    out = {float(s): np.full(shape, np.nan, dtype=np.float32) for s in scales}
    prep = _Prepared(model, hindcast, pairs)
    for k, ((t, lead), (u, _)) in enumerate(zip(pairs, local)):
        feat, prior, mask = prep.pair_state(k)
        eps = latent_noise(seed, hindcast.inits[t], lead, n_members, model.cfg.latent_dim)
        for s in out:
            out[s][u, lead - 1] = prep.decode(feat, prior, mask, eps, s)
    cubes = {
        s: HindcastCube(hindcast.inits[used], v, grid, {**hindcast.meta, "kind": "nadj", "scale": s, "n_members": n_members})
        for s, v in out.items()
    }
    return cubes, local


@dataclass
class CalibrationResult:
    scale: float
    table: list

    def write_csv(self, path, provenance=""):
        path = Path(path)
        fields = ["scale", "candidate", "mean_soe", "mean_abs_soe_minus_1", "mean_rmse", "mean_spread", "qq_deviation", "rmse_ok", "selected"]
        with open(path, "w", newline="") as fh:
            if provenance:
                fh.write(f"# {provenance}\n")
            wr = csv.DictWriter(fh, fieldnames=fields)
            wr.writeheader()
            for row in self.table:
                wr.writerow({k: row[k] for k in fields})
        return path


def _qq_deviation(report):
    devs = [np.nanmean(np.abs(q[:, 0] - q[:, 1])) for q in report.qq.values()]
    return float(np.nanmean(devs)) if devs else float("nan")


def calibrate_scale(model: CVAE, hindcast: HindcastCube, obs: ObsCube, val_pairs, candidate_scales=DEFAULT_SCALES, n_members=100, rmse_tolerance=0.05, seed=0) -> CalibrationResult:
    """Pick the prior scale whose lead-mean |SOE - 1| is smallest on validation pairs.

    Candidates whose lead-mean RMSE exceeds the scale-1 RMSE by more than
    ``rmse_tolerance`` (relative) are rejected. Scale 1 is always evaluated as
    the reference even when not a candidate.
    """
    candidates = [float(s) for s in candidate_scales]
    if not candidates:
        raise ValueError("no candidate scales given")
    if any(s <= 0 for s in candidates):
        raise ValueError("candidate scales must be > 0")
    scales = sorted(set(candidates) | {1.0})
    cubes, local = generate_ensembles(model, hindcast, val_pairs, n_members, scales, seed)
    rows = []
    for s in scales:
        rep = compute_report(cubes[s], obs, local, seed=seed)
        soe_v = rep.column("soe")
        rows.append(
            {
                "scale": s,
                "candidate": s in candidates,
                "mean_soe": float(np.nanmean(soe_v)),
                "mean_abs_soe_minus_1": float(np.nanmean(np.abs(soe_v - 1.0))),
                "mean_rmse": float(np.mean(rep.column("rmse_grid"))),
                "mean_spread": float(np.mean(rep.column("spread"))),
                "qq_deviation": _qq_deviation(rep),
            }
        )
    ref = next(r for r in rows if r["scale"] == 1.0)["mean_rmse"]
    for r in rows:
        r["rmse_ok"] = r["mean_rmse"] <= ref * (1.0 + rmse_tolerance)
    eligible = [r for r in rows if r["candidate"] and r["rmse_ok"]]
    if not eligible:
        eligible = [r for r in rows if r["candidate"]]
    best = min(eligible, key=lambda r: (r["mean_abs_soe_minus_1"], r["scale"]))
    for r in rows:
        r["selected"] = r is best
    return CalibrationResult(best["scale"], rows)


def ensemble_spread(members) -> float:
    """Mean over ocean cells of the member standard deviation."""
    members = np.asarray(members, dtype=np.float64)
    return float(np.nanmean(members.std(axis=0)))


__all__ = [
    "DEFAULT_SCALES",
    "CalibrationResult",
    "calibrate_scale",
    "ensemble_spread",
    "generate_ensembles",
    "latent_noise",
    "sample_ensemble",
]
