"""Synthetic hindcast/observation pairs with a known injected bias.

All smooth random fields are generated in an unbounded "pre-squash" space
and mapped to concentrations with a logistic squash, so cells away from
the ice edge saturate at exactly 0 or 1 and the marginal ice zone stays
populated.  Model members carry, on top of the truth:

* an additive bias ``b(month, lead)`` modulated by a fixed spatial pattern
  (returned for ground-truth checks),
* a state-dependent edge displacement (``state_bias``), nonlinear in SIC,
* anomalies amplified by ``anomaly_gain`` (a conditional bias that a
  climatological mean shift cannot remove),
* a lead-growing forecast error shared by all members,
* small per-member noise.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from ..grid import PolarGrid
from .cubes import HindcastCube, ObsCube


@dataclass
class SyntheticConfig:
    seed: int = 0
    trend_per_year: float = -0.01
    seasonal_amplitude: float = 0.25
    bias_amplitude: float = 0.08
    bias_lead_growth: float = 0.004
    member_noise_sd: float = 0.03
    obs_noise_sd: float = 0.05
    red_noise_ar1: float = 0.7
    anomaly_sd: float = 0.12
    forecast_error_sd: float = 0.15
    state_bias: float = 0.12
    anomaly_gain: float = 1.5
    spatial_contrast: float = 1.0
    noise_length_scale: float = 3.0
    saturation_margin: float = 0.15
    n_member: int = 10
    n_lead: int = 12

    def validate(self):
        for name in ("member_noise_sd", "obs_noise_sd", "anomaly_sd", "forecast_error_sd"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.red_noise_ar1 < 1.0:
            raise ValueError("red_noise_ar1 must lie in [0, 1)")
        if self.anomaly_gain < 0:
            raise ValueError("anomaly_gain must be >= 0")
        if self.noise_length_scale < 0 or self.saturation_margin < 0:
            raise ValueError("noise_length_scale and saturation_margin must be >= 0")
        if self.n_member < 1 or self.n_lead < 1:
            raise ValueError("n_member and n_lead must be >= 1")
        return self

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass(eq=False)
class SyntheticTruth:
    """Ground truth accompanying a synthetic dataset.

    ``bias[moy, lead - 1]`` is the additive bias injected into every member
    verifying in calendar month ``moy`` (0 = January) at that lead.
    """

    months: np.ndarray
    truth: np.ndarray
    bias: np.ndarray

    def bias_at(self, target_month: int, lead: int) -> np.ndarray:
        return self.bias[target_month % 12, lead - 1]


def squash(s, margin):
    """Logistic map to [0, 1], stretched by ``margin`` so the tails saturate."""
    return np.clip((1.0 + 2.0 * margin) / (1.0 + np.exp(-4.0 * s)) - margin, 0.0, 1.0)


class _SmoothNoise:
    """Unit-variance spatially smooth Gaussian fields, periodic in longitude."""

    def __init__(self, shape, length_scale):
        self.sigma = float(length_scale)
        self.shape = tuple(shape)
        if self.sigma > 0:
            delta = np.zeros(self.shape)
            delta[self.shape[0] // 2, self.shape[1] // 2] = 1.0
            k = ndimage.gaussian_filter(delta, self.sigma, mode=("nearest", "wrap"))
            self.norm = 1.0 / np.sqrt((k**2).sum())
        else:
            self.norm = 1.0

    def draw(self, rng, lead_shape=()):
        white = rng.standard_normal((*lead_shape, *self.shape))
        if self.sigma <= 0:
            return white
        sig = (0,) * len(lead_shape) + (self.sigma, self.sigma)
        mode = ("nearest",) * len(lead_shape) + ("nearest", "wrap")
        return ndimage.gaussian_filter(white, sig, mode=mode) * self.norm


def _climatology_base(grid: PolarGrid) -> np.ndarray:
    lat = (np.arange(grid.n_lat) + 0.5) / grid.n_lat
    lam = np.deg2rad(grid.lon_centers)
    edge = 0.45 + 0.12 * np.sin(2.0 * lam) + 0.08 * np.cos(3.0 * lam + 1.0)
    return lat[:, None] - edge[None, :]


def _bias_pattern(grid: PolarGrid) -> np.ndarray:
    lat = (np.arange(grid.n_lat) + 0.5) / grid.n_lat
    lam = np.deg2rad(grid.lon_centers)
    return 0.6 + 0.4 * np.sin(lam + 0.5)[None, :] * lat[:, None]


def injected_bias(config: SyntheticConfig, grid: PolarGrid) -> np.ndarray:
    """Additive bias array indexed [calendar month, lead - 1, lat, lon]."""
    moy = np.arange(12)
    leads = np.arange(1, config.n_lead + 1)
    seasonal = np.cos(2.0 * np.pi * (moy - 8) / 12.0)
    amp = config.bias_amplitude * seasonal[:, None] + config.bias_lead_growth * leads[None, :]
    return amp[:, :, None, None] * _bias_pattern(grid)[None, None]


def _state_shift(config: SyntheticConfig, moy, lead):
    seasonal = 0.5 + 0.5 * np.cos(2.0 * np.pi * (moy - 8) / 12.0)
    return config.state_bias * (seasonal + 0.5 * lead / 12.0)


def synthetic_generate(config: SyntheticConfig, grid: PolarGrid, months: range, obs_start: int | None = None):
    """Generate a (HindcastCube, ObsCube, SyntheticTruth) triple.

    Parameters
    ----------
    config : SyntheticConfig
    grid : PolarGrid
    months : range
        Initialization months (consecutive months since the epoch).
    obs_start : int, optional
        First month of the observational record. Earlier targets have no
        observation, mirroring a record that starts after the first hindcast.
    """
    config.validate()
    inits = np.asarray(months, dtype=np.int64)
    if inits.size == 0:
        raise ValueError("need at least one initialization month")
    if np.any(np.diff(inits) != 1):
        raise ValueError("initialization months must be consecutive")
    n_lead = config.n_lead
    first, last = int(inits[0]) + 1, int(inits[-1]) + n_lead
    record = np.arange(first, last + 1)
    n_rec = record.size

    ss = np.random.SeedSequence(config.seed)
    rng_anom, rng_obs, rng_err, rng_mem = (np.random.default_rng(s) for s in ss.spawn(4))
    noise = _SmoothNoise(grid.shape, config.noise_length_scale)

    # truth in pre-squash space, monthly
    anom = np.empty((n_rec, *grid.shape))
    innov = noise.draw(rng_anom, (n_rec,))
    rho = config.red_noise_ar1
    anom[0] = config.anomaly_sd * innov[0]
    for k in range(1, n_rec):
        anom[k] = rho * anom[k - 1] + np.sqrt(1.0 - rho**2) * config.anomaly_sd * innov[k]
    moy = record % 12
    seasonal = config.seasonal_amplitude * np.cos(2.0 * np.pi * (moy - 2) / 12.0)
    years = (record - record.mean()) / 12.0
    clim = config.spatial_contrast * _climatology_base(grid)[None] + (seasonal + config.trend_per_year * years)[:, None, None]
    pre = clim + anom
    model_pre = clim + config.anomaly_gain * anom
    margin = config.saturation_margin
    truth = squash(pre, margin)
    obs_pre = pre + config.obs_noise_sd * noise.draw(rng_obs, (n_rec,))
    obs_monthly = squash(obs_pre, margin)

    bias = injected_bias(config, grid)
    land = grid.land_mask
    n_mem = config.n_member
    values = np.empty((inits.size, n_lead, n_mem, *grid.shape), dtype=np.float32)
    leads = np.arange(1, n_lead + 1)
    for ti, t in enumerate(inits):
        rows = t + leads - first
        target_moy = (t + leads) % 12
        err = config.forecast_error_sd * np.sqrt(leads / n_lead)[:, None, None] * noise.draw(rng_err, (n_lead,))
        shift = _state_shift(config, target_moy, leads)[:, None, None]
        base = model_pre[rows] + err + shift
        mem = base[:, None] + config.member_noise_sd * noise.draw(rng_mem, (n_lead, n_mem))
        fc = squash(mem, margin) + bias[target_moy, leads - 1][:, None]
        fc = np.clip(fc, 0.0, 1.0)
        fc[..., land] = np.nan
        values[ti] = fc

    truth[:, land] = np.nan
    obs_monthly[:, land] = np.nan
    meta = {"source": "synthetic", "seed": config.seed, "config_hash": config.digest()}
    hindcast = HindcastCube(inits, values, grid, dict(meta, kind="hindcast"))
    keep = record >= (obs_start if obs_start is not None else first)
    obs = ObsCube(inits, record[keep], obs_monthly[keep], grid, n_lead=n_lead, meta=dict(meta, kind="obs"))
    return hindcast, obs, SyntheticTruth(record, truth.astype(np.float32), bias)
