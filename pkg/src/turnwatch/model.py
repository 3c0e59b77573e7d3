"""Sequence-to-sequence interaction classifier.

Two per-frame CNNs (occupancy and motion streams) feed a temporal stack.
The generative variant learns a Gaussian latent code from the features and
the embedded sequence label, regularized toward a standard-normal prior,
and decodes frame-wise class probabilities conditioned on the features and
a latent sample. The deterministic variant reuses the feature encoder and
decoder without the latent path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, DimensionError, NumericError

PROB_EPS = 1e-7


@dataclass
class ModelConfig:
    frame_size: tuple[int, int] = (128, 96)       # (W, H)
    conv_kernels: tuple[int, ...] = (8, 4, 2)
    conv_stride: int = 2
    conv_filters: tuple[int, ...] = (16, 32, 64)
    pool_size: int = 2
    label_embed_dim: int = 32
    fusion_dim: int = 64
    recurrent_hidden: tuple[int, int] = (64, 32)
    head_hidden: int = 16
    latent_dim: int = 64
    attention: bool = True
    use_object: bool = True
    use_flow: bool = True
    variant: str = "cvae"                          # "cvae" or "s2s"
    kl_weight: float = 1.0

    def validate(self):
        if self.variant not in ("cvae", "s2s"):
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        if not (self.use_object or self.use_flow):
            raise ConfigurationError("at least one input modality must be enabled")
        if self.variant == "cvae" and self.latent_dim < 1:
            raise ConfigurationError("latent_dim must be positive")
        if len(self.conv_kernels) != len(self.conv_filters):
            raise ConfigurationError("conv_kernels and conv_filters must have equal length")
        self.conv_output_size()

    def conv_output_size(self) -> tuple[int, int]:
        """Spatial size after the conv/pool stack; fails if a dim collapses."""
        w, h = self.frame_size
        for k in self.conv_kernels:
            w = -(-w // self.conv_stride)   # same-padded strided conv: ceil
            h = -(-h // self.conv_stride)
            w //= self.pool_size            # floor pooling
            h //= self.pool_size
            if w < 1 or h < 1:
                raise ConfigurationError(
                    f"frame {self.frame_size} collapses in the conv stack; "
                    f"use a larger frame or fewer stages"
                )
        return w, h

    @property
    def feature_dim(self) -> int:
        """Flattened per-frame feature width of one modality."""
        w, h = self.conv_output_size()
        return w * h * self.conv_filters[-1]

    @property
    def combined_dim(self) -> int:
        return self.feature_dim * (int(self.use_object) + int(self.use_flow))

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        cfg = cls(**data)
        cfg.frame_size = tuple(cfg.frame_size)
        cfg.conv_kernels = tuple(cfg.conv_kernels)
        cfg.conv_filters = tuple(cfg.conv_filters)
        cfg.recurrent_hidden = tuple(cfg.recurrent_hidden)
        return cfg


@dataclass
class GaussianLatent:
    """Diagonal Gaussian over the latent code, one row per sequence/window."""

    mean: torch.Tensor
    log_variance: torch.Tensor

    def __post_init__(self):
        if self.mean.shape != self.log_variance.shape:
            raise DimensionError("mean/log_variance shape mismatch")


def sample_latent(g: GaussianLatent, noise: torch.Tensor) -> torch.Tensor:
    """Reparameterized draw: mean + exp(log_variance / 2) * noise."""
    return g.mean + torch.exp(0.5 * g.log_variance) * noise


class SameConv2d(nn.Module):
    """Strided conv with TF-style 'same' padding: output = ceil(in / stride)."""

    def __init__(self, cin: int, cout: int, kernel: int, stride: int):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, kernel, stride=stride)
        self.kernel = kernel
        self.stride = stride

    def forward(self, x):
        pads = []
        for size in (x.shape[-1], x.shape[-2]):  # F.pad order: last dim first
            out = -(-size // self.stride)
            total = max((out - 1) * self.stride + self.kernel - size, 0)
            pads += [total // 2, total - total // 2]
        return self.conv(F.pad(x, pads))


class FrameEncoder(nn.Module):
    """Per-frame CNN: stacked conv / max-pool / batch-norm stages, flattened."""

    def __init__(self, in_channels: int, cfg: ModelConfig):
        super().__init__()
        layers = []
        cin = in_channels
        for cout, kernel in zip(cfg.conv_filters, cfg.conv_kernels):
            layers += [
                SameConv2d(cin, cout, kernel, cfg.conv_stride),
                nn.MaxPool2d(cfg.pool_size),
                nn.BatchNorm2d(cout),
                nn.ReLU(),
            ]
            cin = cout
        self.stages = nn.Sequential(*layers)

    def forward(self, frames):  # (B*T, C, H, W) -> (B*T, feature_dim)
        return self.stages(frames).flatten(1)


class SelfAttention(nn.Module):
    """Single-head scaled dot-product self-attention over the time axis."""

    def __init__(self, dim: int):
        super().__init__()
        self.query = nn.Linear(dim, dim)
        self.key = nn.Linear(dim, dim)
        self.value = nn.Linear(dim, dim)
        self.scale = 1.0 / math.sqrt(dim)

    def forward(self, x, key_valid=None, return_weights=False):
        # x: (B, T, D); key_valid: (B, T) bool, padded steps excluded as keys
        scores = torch.bmm(self.query(x), self.key(x).transpose(1, 2)) * self.scale
        if key_valid is not None:
            scores = scores.masked_fill(~key_valid[:, None, :], float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        out = torch.bmm(weights, self.value(x))
        if return_weights:
            return out, weights
        return out


class TemporalStack(nn.Module):
    """Fuse per-step inputs, optionally attend over time, then run the two
    stacked recurrent layers."""

    def __init__(self, in_dim: int, cfg: ModelConfig):
        super().__init__()
        self.fuse = nn.Linear(in_dim, cfg.fusion_dim)
        self.attention = SelfAttention(cfg.fusion_dim) if cfg.attention else None
        h1, h2 = cfg.recurrent_hidden
        self.rnn1 = nn.LSTM(cfg.fusion_dim, h1, batch_first=True)
        self.rnn2 = nn.LSTM(h1, h2, batch_first=True)

    def forward(self, x, valid=None):  # (B, T, in_dim) -> (B, T, h2)
        x = self.fuse(x)
        if self.attention is not None:
            x = self.attention(x, key_valid=valid)
        x, _ = self.rnn1(x)
        x, _ = self.rnn2(x)
        return x


class InteractionModel(nn.Module):
    """Full detector: feature CNNs, label branch, latent head, decoder."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        if cfg.use_object:
            self.object_encoder = FrameEncoder(4, cfg)
        if cfg.use_flow:
            self.flow_encoder = FrameEncoder(3, cfg)
        if cfg.variant == "cvae":
            self.label_embed = nn.Linear(2, cfg.label_embed_dim)
            self.recognition = TemporalStack(cfg.combined_dim + cfg.label_embed_dim, cfg)
            h2 = cfg.recurrent_hidden[1]
            self.latent_fuse = nn.Linear(h2, cfg.fusion_dim)
            self.latent_mean = nn.Linear(cfg.fusion_dim, cfg.latent_dim)
            self.latent_logvar = nn.Linear(cfg.fusion_dim, cfg.latent_dim)
        z_dim = cfg.latent_dim if cfg.variant == "cvae" else 0
        self.decoder_stack = TemporalStack(cfg.combined_dim + z_dim, cfg)
        self.head_reduce = nn.Linear(cfg.recurrent_hidden[1], cfg.head_hidden)
        self.head_out = nn.Linear(cfg.head_hidden, 2)

    # -- feature branch ----------------------------------------------------

    def x_encode(self, object_seq, flow_seq) -> torch.Tensor:
        """Per-step features, (B, T, combined_dim); each step sees only its
        own frames."""
        parts = []
        steps = None
        for enabled, frames, encoder_name in (
            (self.cfg.use_object, object_seq, "object_encoder"),
            (self.cfg.use_flow, flow_seq, "flow_encoder"),
        ):
            if not enabled:
                continue
            if frames is None:
                raise DimensionError("enabled modality is missing its frames")
            x = _to_nchw(frames, self.cfg.frame_size)
            x = x.to(next(self.parameters()).dtype)
            b, t = x.shape[0], x.shape[1]
            if steps is None:
                steps = (b, t)
            elif steps != (b, t):
                raise DimensionError("modalities disagree on batch/step counts")
            feats = getattr(self, encoder_name)(x.reshape(b * t, *x.shape[2:]))
            parts.append(feats.reshape(b, t, -1))
        return torch.cat(parts, dim=-1) if len(parts) > 1 else parts[0]

    # -- label branch --------------------------------------------------------

    def y_encode(self, label_onehot, steps: int) -> torch.Tensor:
        """Embed the sequence label and replicate it at every step."""
        if steps < 1:
            raise ConfigurationError("steps must be >= 1")
        emb = self.label_embed(label_onehot.to(self.label_embed.weight.dtype))
        return emb[:, None, :].expand(-1, steps, -1)

    # -- latent branch -------------------------------------------------------

    def encode_latent(self, features, label_seq, valid=None) -> GaussianLatent:
        """Gaussian posterior parameters from the attended recurrent pass,
        read at the last valid step."""
        if features.shape[1] != label_seq.shape[1]:
            raise DimensionError(
                f"feature steps {features.shape[1]} != label steps {label_seq.shape[1]}"
            )
        x = torch.cat([features, label_seq], dim=-1)
        out = self.recognition(x, valid=valid)
        h = _last_valid(out, valid)
        h = self.latent_fuse(h)
        return GaussianLatent(self.latent_mean(h), self.latent_logvar(h))

    # -- decoder ---------------------------------------------------------------

    def decode(self, features, z=None, valid=None) -> torch.Tensor:
        """Frame-wise class probabilities; z is broadcast along time."""
        if self.cfg.variant == "cvae":
            if z is None:
                raise DimensionError("cvae decoding requires a latent sample")
            if z.shape[-1] != self.cfg.latent_dim:
                raise DimensionError(
                    f"latent size {z.shape[-1]} != configured {self.cfg.latent_dim}"
                )
            zt = z[:, None, :].expand(-1, features.shape[1], -1)
            x = torch.cat([features, zt], dim=-1)
        else:
            x = features
        out = self.decoder_stack(x, valid=valid)
        logits = self.head_out(torch.relu(self.head_reduce(out)))
        return torch.softmax(logits, dim=-1)

    def forward(self, object_seq, flow_seq, targets=None, valid=None, noise=None):
        """Training path. Returns (probs, GaussianLatent or None)."""
        features = self.x_encode(object_seq, flow_seq)
        if self.cfg.variant == "s2s":
            return self.decode(features, valid=valid), None
        if targets is None:
            raise DimensionError("cvae training requires per-frame targets")
        label_onehot = _sequence_label(targets, valid)
        label_seq = self.y_encode(label_onehot, features.shape[1])
        g = self.encode_latent(features, label_seq, valid=valid)
        if noise is None:
            noise = torch.randn_like(g.mean)
        z = sample_latent(g, noise)
        return self.decode(features, z, valid=valid), g


def _sequence_label(targets: torch.Tensor, valid) -> torch.Tensor:
    """Recover the per-sequence one-hot label from duplicated frame targets."""
    if valid is None:
        return targets[:, 0, :]
    weights = valid.to(targets.dtype)
    summed = (targets * weights[:, :, None]).sum(1)
    return summed / weights.sum(1).clamp(min=1.0)[:, None]


def _last_valid(out: torch.Tensor, valid) -> torch.Tensor:
    if valid is None:
        return out[:, -1]
    lengths = valid.to(torch.int64).sum(1).clamp(min=1)
    idx = (lengths - 1)[:, None, None].expand(-1, 1, out.shape[-1])
    return out.gather(1, idx).squeeze(1)


def _to_nchw(frames, frame_size) -> torch.Tensor:
    """(B, T, W, H, C) array or tensor -> (B, T, C, H, W) float tensor."""
    if isinstance(frames, np.ndarray):
        frames = torch.from_numpy(np.ascontiguousarray(frames))
    if frames.ndim != 5:
        raise DimensionError(f"expected (B, T, W, H, C) frames, got {tuple(frames.shape)}")
    w, h = frame_size
    if frames.shape[2] != w or frames.shape[3] != h:
        raise DimensionError(
            f"frame size {tuple(frames.shape[2:4])} != configured {(w, h)}"
        )
    return frames.permute(0, 1, 4, 3, 2).contiguous()


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def kl_standard_normal(g: GaussianLatent) -> torch.Tensor:
    """Closed-form KL(q || N(0, I)) per row, summed over latent dims."""
    return 0.5 * (torch.exp(g.log_variance) + g.mean ** 2 - 1.0 - g.log_variance).sum(-1)


def elbo_loss(
    targets: torch.Tensor,
    probs: torch.Tensor,
    g: GaussianLatent | None,
    valid_mask: torch.Tensor | None = None,
    kl_weight: float = 1.0,
):
    """(total, kl, recon): masked-mean binary cross-entropy on the interaction
    probability plus the standard-normal KL regularizer (batch mean)."""
    y = targets[..., 1]
    p = probs[..., 1]
    if not torch.isfinite(p).all():
        raise NumericError("non-finite probabilities in the prediction")
    p = p.clamp(PROB_EPS, 1.0 - PROB_EPS)
    bce = -(y * torch.log(p) + (1.0 - y) * torch.log(1.0 - p))
    if valid_mask is not None:
        m = valid_mask.to(bce.dtype)
        recon = (bce * m).sum() / m.sum().clamp(min=1.0)
    else:
        recon = bce.mean()
    if g is not None:
        kl = kl_standard_normal(g).mean()
    else:
        kl = torch.zeros((), dtype=recon.dtype)
    total = recon + kl_weight * kl
    return total, kl, recon
