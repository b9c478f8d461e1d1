"""Event encoder: causal 3D conv pyramid producing per-block injections.

The histogram clip is spatially patchified, passed through a causal stem
convolution, downsampled to the latent grid by ResNet-style 3D blocks,
then refined by one mid block per transformer block; each mid block's
features map through a zero-initialized 1x1x1 projection to the backbone
width and are flattened in the backbone's token order. Fresh encoders
therefore inject exact zeros, leaving the backbone untouched until
training moves the projections.

Causality: temporal convolutions left-pad by replicating the first frame,
so features at time t never depend on inputs after t * (cumulative
temporal stride).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange

from .codec import CodecSpec


@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int = 5
    spatial_patch: int = 1
    stem_channels: int = 16
    channel_schedule: tuple[int, ...] = (16, 32, 64)
    spatial_strides: tuple[int, ...] = (2, 2, 2)
    temporal_strides: tuple[int, ...] = (1, 2, 2)
    n_mid: int = 4
    target_hidden: int = 128
    injection_set: frozenset[int] = field(default_factory=lambda: frozenset())
    # empty injection_set means "all blocks"

    def __post_init__(self):
        n = len(self.channel_schedule)
        if len(self.spatial_strides) != n or len(self.temporal_strides) != n:
            raise ValueError("channel_schedule, spatial_strides, temporal_strides must align")
        bad = [j for j in self.injection_set if not 1 <= j <= self.n_mid]
        if bad:
            raise ValueError(f"injection_set entries {bad} outside 1..{self.n_mid}")

    @property
    def total_spatial_down(self) -> int:
        out = self.spatial_patch
        for s in self.spatial_strides:
            out *= s
        return out

    @property
    def total_temporal_down(self) -> int:
        out = 1
        for s in self.temporal_strides:
            out *= s
        return out

    def active_blocks(self) -> frozenset[int]:
        return self.injection_set or frozenset(range(1, self.n_mid + 1))


class CausalConv3d(nn.Module):
    """3D convolution, same-padded spatially, left-padded temporally by
    replicating the first frame; output time t sees inputs [t*s - k + 1, t*s]."""

    def __init__(self, c_in, c_out, kernel=3, stride=(1, 1, 1)):
        super().__init__()
        k_t = kernel if isinstance(kernel, int) else kernel[0]
        k_s = kernel if isinstance(kernel, int) else kernel[1]
        self.k_t = k_t
        self.conv = nn.Conv3d(
            c_in, c_out, (k_t, k_s, k_s), stride=stride, padding=(0, k_s // 2, k_s // 2)
        )

    def forward(self, x):
        if self.k_t > 1:
            x = torch.cat([x[:, :, :1].expand(-1, -1, self.k_t - 1, -1, -1), x], dim=2)
        return self.conv(x)


def causal_conv3d(x: torch.Tensor, weight: torch.Tensor, bias=None, stride=(1, 1, 1)) -> torch.Tensor:
    """Functional causal 3D convolution (replicate left pad in time)."""
    k_t, k_h, k_w = weight.shape[2:]
    if k_t > 1:
        x = torch.cat([x[:, :, :1].expand(-1, -1, k_t - 1, -1, -1), x], dim=2)
    return F.conv3d(x, weight, bias, stride=stride, padding=(0, k_h // 2, k_w // 2))


class RMSNorm3d(nn.Module):
    """RMS normalization over the channel axis of [B, C, T, H, W] features."""

    def __init__(self, channels, eps=1e-6):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))

    def forward(self, x):
        rms = torch.rsqrt(x.pow(2).mean(dim=1, keepdim=True) + self.eps)
        return x * rms * self.weight[None, :, None, None, None]


class ResBlock3d(nn.Module):
    def __init__(self, c_in, c_out):
        super().__init__()
        self.norm1 = RMSNorm3d(c_in)
        self.conv1 = CausalConv3d(c_in, c_out)
        self.norm2 = RMSNorm3d(c_out)
        self.conv2 = CausalConv3d(c_out, c_out)
        self.skip = nn.Conv3d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x):
        h = self.conv1(F.gelu(self.norm1(x)))
        h = self.conv2(F.gelu(self.norm2(h)))
        return self.skip(x) + h


class DownBlock(nn.Module):
    """Strided causal downsampling conv followed by one residual layer."""

    def __init__(self, c_in, c_out, spatial_stride, temporal_stride):
        super().__init__()
        self.down = CausalConv3d(c_in, c_out, stride=(temporal_stride, spatial_stride, spatial_stride))
        self.res = ResBlock3d(c_out, c_out)

    def forward(self, x):
        return self.res(self.down(x))


class EventEncoder(nn.Module):
    """Histogram clip [B, T, C, H, W] -> one injection tensor per backbone block."""

    def __init__(self, cfg: EncoderConfig, codec: CodecSpec):
        super().__init__()
        if cfg.total_spatial_down != codec.p_s or cfg.total_temporal_down != codec.p_t:
            raise ValueError(
                f"encoder downsampling ({cfg.total_spatial_down}x spatial, "
                f"{cfg.total_temporal_down}x temporal) misaligned with codec "
                f"grid (p_s={codec.p_s}, p_t={codec.p_t})"
            )
        self.cfg = cfg
        self.codec = codec
        c_in = cfg.in_channels * cfg.spatial_patch**2
        self.stem = CausalConv3d(c_in, cfg.stem_channels, kernel=3)
        downs = []
        c_prev = cfg.stem_channels
        for c_out, s_s, s_t in zip(cfg.channel_schedule, cfg.spatial_strides, cfg.temporal_strides):
            downs.append(DownBlock(c_prev, c_out, s_s, s_t))
            c_prev = c_out
        self.downs = nn.ModuleList(downs)
        self.mids = nn.ModuleList(ResBlock3d(c_prev, c_prev) for _ in range(cfg.n_mid))
        self.projs = nn.ModuleList(nn.Conv3d(c_prev, cfg.target_hidden, 1) for _ in range(cfg.n_mid))
        for proj in self.projs:
            nn.init.zeros_(proj.weight)
            nn.init.zeros_(proj.bias)

    def features(self, hist: torch.Tensor) -> list[torch.Tensor]:
        """Mid-block feature chain g^(1..D), each [B, C, T', H', W']."""
        x = rearrange(
            hist,
            "b t c (h ph) (w pw) -> b (c ph pw) t h w",
            ph=self.cfg.spatial_patch, pw=self.cfg.spatial_patch,
        )
        x = self.stem(x)
        for down in self.downs:
            x = down(x)
        feats = []
        for mid in self.mids:
            x = mid(x)
            feats.append(x)
        return feats

    def forward(self, hist: torch.Tensor) -> list[torch.Tensor]:
        """Returns the injection bundle: n_mid tensors [B, L, hidden]; blocks
        outside the injection set get exact zeros regardless of weights."""
        t_in = hist.shape[1]
        expected_t = 1 + (t_in - 1) // self.codec.p_t
        feats = self.features(hist)
        active = self.cfg.active_blocks()
        bundle = []
        for j, (feat, proj) in enumerate(zip(feats, self.projs), start=1):
            if feat.shape[2] != expected_t:
                raise ValueError(
                    f"temporal misalignment: encoder produced {feat.shape[2]} steps "
                    f"for {t_in} input frames, latent grid expects {expected_t}"
                )
            if j in active:
                z = rearrange(proj(feat), "b c t h w -> b (t h w) c")
            else:
                z = feat.new_zeros(
                    feat.shape[0], feat.shape[2] * feat.shape[3] * feat.shape[4], self.cfg.target_hidden
                )
            bundle.append(z)
        return bundle
