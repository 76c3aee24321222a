"""Loss functions and the end-to-end training loop."""

from __future__ import annotations

import copy
import csv
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .data.cubes import HindcastCube, ObsCube
from .grid import fold_array
from .model import CVAE, LatentGaussian, NetConfig, conditioning_channels

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 100
    scheduler_epochs: int = 50
    early_stop_patience: int = 10
    early_stop_activation_epoch: int = 85
    max_epochs: int = 300
    beta: float = 0.1
    det_loss_weight: float = 1.0
    grad_clip_norm: float = 0.0  # 0 disables clipping
    seed: int = 0

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "scheduler_epochs", "max_epochs"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")
        if self.beta < 0 or self.det_loss_weight < 0:
            raise ValueError("loss weights must be >= 0")
        if self.grad_clip_norm < 0:
            raise ValueError("grad_clip_norm must be >= 0")


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch, batch, values):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}: {values}")
        self.epoch = epoch
        self.batch = batch


def kl_gaussian(q: LatentGaussian, p: LatentGaussian) -> torch.Tensor:
    """KL(q || p) between diagonal Gaussians, summed over the last axis."""
    if q.mean.shape != p.mean.shape or q.log_var.shape != p.log_var.shape:
        raise ValueError(f"dimension mismatch: {tuple(q.mean.shape)} vs {tuple(p.mean.shape)}")
    var_ratio = torch.exp(q.log_var - p.log_var)
    mahal = (q.mean - p.mean).pow(2) * torch.exp(-p.log_var)
    return 0.5 * (p.log_var - q.log_var + var_ratio + mahal - 1.0).sum(-1)


def masked_mse(a, b, mask):
    """Mean squared difference over valid cells, averaged over the batch."""
    valid = mask.expand_as(a).sum()
    if valid == 0:
        raise ValueError("no valid cells to compare")
    return ((a - b).pow(2) * mask).sum() / valid


def elbo_loss(y, decoder_mean, ytilde, q, p, mask, net_cfg: NetConfig, det_loss_weight=1.0, beta=None):
    """Normalized negative lower bound plus the deterministic auxiliary term.

    ``recon`` is the masked MSE divided by the decoder noise variance, ``kl``
    the closed-form KL divided by the latent size (batch mean) and ``det``
    the masked MSE of the first guess. ``beta`` defaults to ``net_cfg.kl_weight``.
    """
    if beta is None:
        beta = net_cfg.kl_weight
    recon = masked_mse(decoder_mean, y, mask) / net_cfg.decoder_noise_var
    kl = kl_gaussian(q, p).mean() / q.mean.shape[-1]
    det = masked_mse(ytilde, y, mask)
    total = recon + beta * kl + det_loss_weight * det
    return {"total": total, "recon": recon, "kl": kl, "det": det}


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Linear decay from the base rate towards 0 over ``scheduler_epochs``, then restart.

    ``epoch`` is 0-based.
    """
    frac = (epoch % cfg.scheduler_epochs) / cfg.scheduler_epochs
    return cfg.learning_rate * (1.0 - frac)


@dataclass
class PairTensors:
    """Folded network inputs for a set of (init, lead) pairs."""

    y: torch.Tensor
    xbar: torch.Tensor
    cond: torch.Tensor
    mask: torch.Tensor
    pairs: np.ndarray

    def __len__(self):
        return self.xbar.shape[0]

    def batch(self, idx):
        h, w = self.xbar.shape[-2:]
        cond = self.cond[idx][:, :, None, None].expand(-1, -1, h, w)
        y = self.y[idx] if self.y is not None else None
        return y, self.xbar[idx], cond, self.mask


def to_channels_last(t):
    return t.contiguous(memory_format=torch.channels_last)


def prepare_pairs(hindcast: HindcastCube, obs: ObsCube | None, pairs, xbar=None) -> PairTensors:
    """Fold ensemble means (and observations) for ``pairs``; land is zero-filled."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    ti, li = pairs[:, 0], pairs[:, 1]
    if xbar is None:
        xbar = hindcast.values[ti, li - 1].mean(axis=1, dtype=np.float64)
    else:
        xbar = xbar[ti, li - 1]
    ocean = hindcast.grid.ocean
    xb = np.nan_to_num(fold_array(np.where(ocean, xbar, 0.0)), nan=0.0).astype(np.float32)
    y_t = None
    if obs is not None:
        ys = np.stack([obs.month(int(hindcast.inits[t]) + int(l)) for t, l in pairs])
        ys = np.nan_to_num(fold_array(np.where(ocean, ys, 0.0)), nan=0.0).astype(np.float32)
        y_t = to_channels_last(torch.from_numpy(ys)[:, None])
    cond = conditioning_channels(hindcast.inits[ti], li).astype(np.float32)
    mask = torch.from_numpy(fold_array(ocean).astype(np.float32))[None, None]
    return PairTensors(
        y=y_t,
        xbar=to_channels_last(torch.from_numpy(xb)[:, None]),
        cond=torch.from_numpy(cond),
        mask=to_channels_last(mask),
        pairs=pairs,
    )


def batch_loss(model: CVAE, data: PairTensors, idx, eps, det_loss_weight):
    y, xbar, cond, mask = data.batch(idx)
    decoded, ytilde, q, p = model(y, xbar, cond, mask, eps)
    return elbo_loss(y, decoded, ytilde, q, p, mask, model.cfg, det_loss_weight)


@dataclass
class TrainResult:
    model: CVAE
    log: list
    best_epoch: int
    stopped_early: bool


def _evaluate(model, data, cfg, gen):
    model.eval()
    sums = {"total": 0.0, "recon": 0.0, "kl": 0.0, "det": 0.0}
    n = len(data)
    with torch.no_grad():
        for start in range(0, n, cfg.batch_size):
            idx = torch.arange(start, min(start + cfg.batch_size, n))
            eps = torch.randn(len(idx), model.cfg.latent_dim, generator=gen)
            parts = batch_loss(model, data, idx, eps, cfg.det_loss_weight)
            for k in sums:
                sums[k] += parts[k].item() * len(idx)
    return {k: v / n for k, v in sums.items()}


def train(train_data: PairTensors, val_data: PairTensors, net_cfg: NetConfig, cfg: TrainConfig, progress=None) -> TrainResult:
    """Train encoder, prior, decoder and deterministic branch jointly with Adam.

    Validation loss is computed every epoch; early stopping only starts
    counting at ``early_stop_activation_epoch``. The best-validation weights
    are returned. ``cfg.beta`` overrides ``net_cfg.kl_weight``.
    """
    if len(train_data) == 0 or len(val_data) == 0:
        raise ValueError("training and validation sets must be non-empty")
    net_cfg = replace(net_cfg, kl_weight=cfg.beta)
    torch.manual_seed(cfg.seed)
    model = CVAE(net_cfg).to(memory_format=torch.channels_last)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    shuffle_gen = torch.Generator().manual_seed(cfg.seed + 1)
    eps_gen = torch.Generator().manual_seed(cfg.seed + 2)

    rows = []
    best_val, best_state, best_epoch = float("inf"), None, -1
    since_best = 0
    stopped_early = False
    n = len(train_data)
    for epoch in range(cfg.max_epochs):
        lr = lr_at(epoch, cfg)
        for group in opt.param_groups:
            group["lr"] = lr
        model.train()
        perm = torch.randperm(n, generator=shuffle_gen)
        sums = {"total": 0.0, "recon": 0.0, "kl": 0.0, "det": 0.0}
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start : start + cfg.batch_size]
            eps = torch.randn(len(idx), net_cfg.latent_dim, generator=eps_gen)
            parts = batch_loss(model, train_data, idx, eps, cfg.det_loss_weight)
            if not torch.isfinite(parts["total"]):
                raise TrainingDivergedError(epoch, b, {k: v.item() for k, v in parts.items()})
            opt.zero_grad(set_to_none=True)
            parts["total"].backward()
            if cfg.grad_clip_norm > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip_norm)
            opt.step()
            for k in sums:
                sums[k] += parts[k].item() * len(idx)
        train_parts = {k: v / n for k, v in sums.items()}
        val_parts = _evaluate(model, val_data, cfg, torch.Generator().manual_seed(cfg.seed + 3))
        row = {"epoch": epoch, "lr": lr}
        row.update({f"train_{k}": v for k, v in train_parts.items()})
        row.update({f"val_{k}": v for k, v in val_parts.items()})
        rows.append(row)
        if progress is not None:
            progress(row)
        log.info("epoch %d lr %.2e train %.5f val %.5f", epoch, lr, train_parts["total"], val_parts["total"])

        if val_parts["total"] < best_val:
            best_val, best_epoch = val_parts["total"], epoch
            best_state = copy.deepcopy(model.state_dict())
            since_best = 0
        else:
            since_best += 1
        if epoch >= cfg.early_stop_activation_epoch and since_best >= cfg.early_stop_patience:
            stopped_early = True
            break

    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model, rows, best_epoch, stopped_early)


LOG_FIELDS = [
    "epoch", "lr",
    "train_total", "train_recon", "train_kl", "train_det",
    "val_total", "val_recon", "val_kl", "val_det",
]


def write_log(rows, path, header_comment=None) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(row[k]) if isinstance(row[k], float) else row[k]) for k in LOG_FIELDS})
    return path


def config_dict(net_cfg: NetConfig, cfg: TrainConfig) -> dict:
    return {"net": net_cfg.to_dict(), "train": asdict(cfg)}
