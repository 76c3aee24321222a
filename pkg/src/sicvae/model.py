"""Conditional VAE for probabilistic sea-ice bias correction.

Networks operate on folded fields shaped (batch, channel, 2*n_lat, n_lon/2).
Validity masks are (batch or 1, 1, H, W) float tensors with 1 = ocean.
Every convolution is a partial convolution so land never leaks into ocean
outputs.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

N_POOL = 4


@dataclass
class NetConfig:
    latent_dim: int = 1000
    stage_channels: tuple = (16, 32, 64, 128, 256, 256)
    decoder_noise_var: float = 1.0
    kl_weight: float = 0.1
    grid_shape: tuple = (64, 32)
    expansion: int = 4
    kernel_size: int = 7

    def __post_init__(self):
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        self.grid_shape = tuple(int(s) for s in self.grid_shape)
        if len(self.stage_channels) != 6:
            raise ValueError("stage_channels needs 6 entries (stem, 4 pooled stages, bottleneck)")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        h, w = self.grid_shape
        if h % 2**N_POOL or w % 2**N_POOL:
            raise ValueError(f"folded grid {h}x{w} must be divisible by {2**N_POOL}")

    @property
    def bottleneck_shape(self) -> tuple:
        h, w = self.grid_shape
        return (h // 2**N_POOL, w // 2**N_POOL)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_channels"] = list(self.stage_channels)
        d["grid_shape"] = list(self.grid_shape)
        return d


@dataclass
class LatentGaussian:
    mean: torch.Tensor
    log_var: torch.Tensor

    @property
    def std(self) -> torch.Tensor:
        return torch.exp(0.5 * self.log_var)


def partial_conv2d(x, mask, weight, bias=None, padding=0, groups=1):
    """Convolution over valid cells only, renormalized by window coverage.

    Returns ``(out, new_mask)``. ``out = conv(x*mask) * (kh*kw / n_valid) + bias``
    where at least one window cell is valid, and 0 elsewhere.
    """
    kh, kw = weight.shape[-2:]
    raw = F.conv2d(x * mask, weight, None, padding=padding, groups=groups)
    with torch.no_grad():
        ones = torch.ones(1, 1, kh, kw, dtype=mask.dtype, device=mask.device)
        count = F.conv2d(mask, ones, padding=padding)
        new_mask = (count > 0).to(mask.dtype)
        ratio = (kh * kw) / count.clamp(min=1.0) * new_mask
    out = raw * ratio
    if bias is not None:
        out = out + bias.view(1, -1, 1, 1)
    return out * new_mask, new_mask


class PartialConv2d(nn.Conv2d):
    def __init__(self, in_ch, out_ch, kernel_size, groups=1, bias=True):
        super().__init__(in_ch, out_ch, kernel_size, padding=kernel_size // 2, groups=groups, bias=bias)

    def forward(self, x, mask):
        if self.kernel_size == (1, 1):
            # window of one cell: ratio is the mask itself
            return F.conv2d(x * mask, self.weight, self.bias, groups=self.groups) * mask, mask
        return partial_conv2d(x, mask, self.weight, self.bias, self.padding, self.groups)


class ChannelLayerNorm(nn.Module):
    """Layer norm over channels at each spatial position."""

    def __init__(self, channels, eps=1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x):
        h = F.layer_norm(x.permute(0, 2, 3, 1), (x.shape[1],), self.weight, self.bias, self.eps)
        return h.permute(0, 3, 1, 2)


class ConvNeXtBlock(nn.Module):
    """Depthwise partial conv, layer norm, x4 pointwise expansion, GELU, projection, residual."""

    def __init__(self, ch, kernel_size=7, expansion=4):
        super().__init__()
        self.dw = PartialConv2d(ch, ch, kernel_size, groups=ch)
        self.norm = ChannelLayerNorm(ch)
        self.pw1 = PartialConv2d(ch, expansion * ch, 1)
        self.pw2 = PartialConv2d(expansion * ch, ch, 1)

    def forward(self, x, mask):
        h, m = self.dw(x, mask)
        h = self.norm(h) * m
        # 1x1 partial convs on a masked input reduce to plain convs plus one final masking
        h = F.gelu(F.conv2d(h, self.pw1.weight, self.pw1.bias))
        h = F.conv2d(h, self.pw2.weight, self.pw2.bias)
        return (x + h) * m, m


class DoubleConvNeXt(nn.Module):
    def __init__(self, in_ch, out_ch, kernel_size=7, expansion=4):
        super().__init__()
        self.proj = PartialConv2d(in_ch, out_ch, 1)
        self.block1 = ConvNeXtBlock(out_ch, kernel_size, expansion)
        self.block2 = ConvNeXtBlock(out_ch, kernel_size, expansion)

    def forward(self, x, mask):
        x, mask = self.proj(x, mask)
        x, mask = self.block1(x, mask)
        return self.block2(x, mask)


def masked_maxpool(x, mask):
    pooled = F.max_pool2d(x.masked_fill(mask == 0, float("-inf")), 2)
    new_mask = F.max_pool2d(mask, 2)
    return torch.where(new_mask > 0, pooled, torch.zeros_like(pooled)), new_mask


class Upsample(nn.Module):
    """Bilinear x2 interpolation followed by a 3x3 partial conv smoothing."""

    def __init__(self, ch):
        super().__init__()
        self.conv = PartialConv2d(ch, ch, 3)

    def forward(self, x, mask):
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        out, _ = self.conv(x, mask)
        return out * mask


class EncoderTrunk(nn.Module):
    """Stem partial conv, layer norm, then [DoubleConvNeXt, MaxPool] x4 and a final DoubleConvNeXt."""

    def __init__(self, in_ch, cfg: NetConfig):
        super().__init__()
        c = cfg.stage_channels
        k, e = cfg.kernel_size, cfg.expansion
        self.stem = PartialConv2d(in_ch, c[0], 3)
        self.stem_norm = ChannelLayerNorm(c[0])
        self.stages = nn.ModuleList(DoubleConvNeXt(c[i], c[i + 1], k, e) for i in range(N_POOL))
        self.last = DoubleConvNeXt(c[N_POOL], c[N_POOL + 1], k, e)

    def forward(self, x, mask):
        x, mask = self.stem(x, mask)
        x = self.stem_norm(x) * mask
        for stage in self.stages:
            x, mask = stage(x, mask)
            x, mask = masked_maxpool(x, mask)
        return self.last(x, mask)


class DecoderTrunk(nn.Module):
    """[Upsample, DoubleConvNeXt] x4 walking the channel ladder back down to the stem width.

    Uses the static land-mask pyramid (``masks[k]`` at resolution 1/2^k).
    """

    def __init__(self, cfg: NetConfig):
        super().__init__()
        c = cfg.stage_channels
        k, e = cfg.kernel_size, cfg.expansion
        ins = [c[N_POOL + 1]] + [c[i] for i in range(N_POOL - 1, 0, -1)]
        outs = [c[i] for i in range(N_POOL - 1, -1, -1)]
        self.ups = nn.ModuleList(Upsample(ci) for ci in ins)
        self.blocks = nn.ModuleList(DoubleConvNeXt(ci, co, k, e) for ci, co in zip(ins, outs))

    def forward(self, x, masks):
        for i, (up, block) in enumerate(zip(self.ups, self.blocks)):
            m = masks[N_POOL - 1 - i]
            x = up(x, m)
            x, _ = block(x, m)
            x = x * m
        return x


class OutputBlock(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.norm = ChannelLayerNorm(ch)
        self.conv = PartialConv2d(ch, 1, 1)

    def forward(self, x, mask):
        out, _ = self.conv(F.relu(self.norm(x)), mask)
        return out * mask


class GaussianEncoder(nn.Module):
    """Trunk, layer norm and a dense head giving (mean, log_var)."""

    def __init__(self, in_ch, cfg: NetConfig):
        super().__init__()
        self.trunk = EncoderTrunk(in_ch, cfg)
        top = cfg.stage_channels[-1]
        self.norm = ChannelLayerNorm(top)
        h, w = cfg.bottleneck_shape
        self.dense = nn.Linear(top * h * w, 2 * cfg.latent_dim)
        self.latent_dim = cfg.latent_dim

    def forward(self, x, mask):
        feat, m = self.trunk(x, mask)
        feat = self.norm(feat) * m
        out = self.dense(feat.flatten(1))
        return LatentGaussian(out[:, : self.latent_dim], out[:, self.latent_dim :])


def mask_pyramid(mask):
    masks = [mask]
    for _ in range(N_POOL):
        masks.append(F.max_pool2d(masks[-1], 2))
    return masks


def conditioning_channels(t, lead, shape=None):
    """Three constant planes sin(2π(t+l)/12), cos(2π(t+l)/12), l/12.

    Scalars give a length-3 array (or (3, *shape) planes); arrays of equal
    length give one row per element.
    """
    t = np.asarray(t)
    lead = np.asarray(lead)
    if np.any(lead < 1) or np.any(lead > 12):
        raise ValueError(f"lead must lie in 1..12, got {lead}")
    phase = 2.0 * np.pi * ((t + lead) % 12) / 12.0
    vals = np.stack([np.sin(phase), np.cos(phase), lead / 12.0], axis=-1)
    vals[np.isclose(vals, 0.0, atol=1e-12)] = 0.0
    if shape is None:
        return vals
    return np.broadcast_to(vals[..., None, None], (*vals.shape, *shape)).copy()


def reparameterize(g: LatentGaussian, eps, scale=1.0):
    """z = mean + scale * exp(log_var / 2) * eps."""
    if not scale > 0:
        raise ValueError("scale must be > 0")
    return g.mean + scale * g.std * eps


class CVAE(nn.Module):
    """Encoder q(z|y, x̄), conditional prior p(z|ỹ, x̄), decoder and deterministic branch.

    The output block is the only module shared between the decoder and the
    deterministic branch.
    """

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        top = cfg.stage_channels[-1]
        h, w = cfg.bottleneck_shape
        self.encoder = GaussianEncoder(5, cfg)
        self.prior_net = GaussianEncoder(5, cfg)
        self.det_encoder = EncoderTrunk(4, cfg)
        self.det_decoder = DecoderTrunk(cfg)
        self.dec_dense = nn.Linear(cfg.latent_dim, top * h * w)
        self.decoder = DecoderTrunk(cfg)
        self.output_block = OutputBlock(cfg.stage_channels[0])

    def _check(self, x):
        if x.shape[-2:] != self.cfg.grid_shape:
            raise ValueError(f"input spatial shape {tuple(x.shape[-2:])} != {self.cfg.grid_shape}")

    def deterministic(self, xbar, cond, mask):
        """First-guess ỹ and the 16-channel (stem width) features from one pass."""
        self._check(xbar)
        masks = mask_pyramid(mask)
        feat, _ = self.det_encoder(torch.cat([xbar, cond], 1), mask)
        feat = self.det_decoder(feat, masks)
        return self.output_block(feat, mask), feat

    def encode(self, y, xbar, cond, mask) -> LatentGaussian:
        self._check(y)
        return self.encoder(torch.cat([y, xbar, cond], 1), mask)

    def prior(self, ytilde, xbar, cond, mask) -> LatentGaussian:
        self._check(ytilde)
        return self.prior_net(torch.cat([ytilde, xbar, cond], 1), mask)

    def decode(self, z, det_features, mask):
        if z.shape[-1] != self.cfg.latent_dim:
            raise ValueError(f"latent length {z.shape[-1]} != {self.cfg.latent_dim}")
        h, w = self.cfg.bottleneck_shape
        masks = mask_pyramid(mask)
        x = self.dec_dense(z).view(z.shape[0], -1, h, w) * masks[-1]
        x = self.decoder(x, masks)
        return self.output_block(x + det_features, mask)

    def forward(self, y, xbar, cond, mask, eps):
        """Training pass: returns decoder mean, ỹ, posterior q and prior p."""
        ytilde, feat = self.deterministic(xbar, cond, mask)
        q = self.encode(y, xbar, cond, mask)
        p = self.prior(ytilde, xbar, cond, mask)
        z = reparameterize(q, eps)
        return self.decode(z, feat, mask), ytilde, q, p


# ---------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"SICVAECK"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: CVAE, path, extra: dict | None = None) -> Path:
    """Header (NetConfig JSON + tensor index) and little-endian float32 tensors.

    The header carries a SHA-256 of the tensor payload.
    """
    path = Path(path)
    state = model.state_dict()
    index, chunks, offset = [], [], 0
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        chunks.append(arr.tobytes(order="C"))
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.nbytes
    payload = b"".join(chunks)
    head = {
        "version": CKPT_VERSION,
        "net_config": model.cfg.to_dict(),
        "tensors": index,
        "sha256": hashlib.sha256(payload).hexdigest(),
        "extra": extra or {},
    }
    blob = json.dumps(head, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<Q", len(blob)) + blob + payload)
    return path


def load_checkpoint(path) -> tuple[CVAE, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<Q", raw[8:16])
    try:
        head = json.loads(raw[16 : 16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    if head.get("version") != CKPT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {head.get('version')} unsupported")
    payload = raw[16 + n :]
    if hashlib.sha256(payload).hexdigest() != head["sha256"]:
        raise CheckpointError(f"{path}: checksum mismatch")
    model = CVAE(NetConfig(**head["net_config"]))
    state = {}
    for item in head["tensors"]:
        count = math.prod(item["shape"])
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=item["offset"])
        state[item["name"]] = torch.from_numpy(arr.reshape(item["shape"]).copy())
    model.load_state_dict(state)
    model.eval()
    return model, head.get("extra", {})
