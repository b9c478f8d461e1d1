"""Exactly invertible video <-> latent codec.

A space-to-depth / time-to-depth transform that defines the latent grid
the transformer operates on: spatial patches of size p_s, temporal patches
of size p_t, with frame 0 kept as its own latent step (its channel plane is
zero-padded to the full latent width) so first-frame conditioning is
expressible exactly at latent granularity. Pure reshaping; decode(encode(x))
is bit-identical to x. A trainable autoencoder may replace this behind the
same encode/decode contract; tests that assume exact invertibility are
codec-only.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from einops import rearrange


@dataclass(frozen=True)
class CodecSpec:
    """Spatial/temporal patch sizes (powers of two) and input channel count."""

    p_s: int = 8
    p_t: int = 4
    in_channels: int = 3

    def __post_init__(self):
        for name, v in (("p_s", self.p_s), ("p_t", self.p_t)):
            if v < 1 or (v & (v - 1)):
                raise ValueError(f"{name} must be a power of two, got {v}")

    @property
    def latent_channels(self) -> int:
        return self.in_channels * self.p_s * self.p_s * self.p_t

    def latent_shape(self, t: int, h: int, w: int) -> tuple[int, int, int, int]:
        """(T', C', H', W') for a [T, C, H, W] video; raises if not divisible."""
        self.check_divisibility(t, h, w)
        return (1 + (t - 1) // self.p_t, self.latent_channels, h // self.p_s, w // self.p_s)

    def video_length(self, t_latent: int) -> int:
        return 1 + (t_latent - 1) * self.p_t

    def check_divisibility(self, t: int, h: int, w: int) -> None:
        problems = []
        if (t - 1) % self.p_t:
            pad = self.p_t - (t - 1) % self.p_t
            problems.append(f"T-1 = {t - 1} not divisible by p_t = {self.p_t} (pad {pad} frames)")
        if h % self.p_s:
            problems.append(f"H = {h} not divisible by p_s = {self.p_s} (pad {self.p_s - h % self.p_s} rows)")
        if w % self.p_s:
            problems.append(f"W = {w} not divisible by p_s = {self.p_s} (pad {self.p_s - w % self.p_s} cols)")
        if problems:
            raise ValueError("codec divisibility violated: " + "; ".join(problems))


def encode(video: torch.Tensor, spec: CodecSpec) -> torch.Tensor:
    """[B, T, C, H, W] (or unbatched [T, C, H, W]) -> [B, T', C', H', W'].

    Frame 0 maps alone to latent step 0 with C * p_s^2 real channels
    (zero-padded to C'); frames 1..T-1 map in groups of p_t.
    """
    unbatched = video.ndim == 4
    if unbatched:
        video = video.unsqueeze(0)
    b, t, c, h, w = video.shape
    spec.check_divisibility(t, h, w)

    first = rearrange(video[:, 0], "b c (h ph) (w pw) -> b (c ph pw) h w", ph=spec.p_s, pw=spec.p_s)
    pad = first.new_zeros(b, spec.latent_channels - first.shape[1], *first.shape[2:])
    first = torch.cat([first, pad], dim=1).unsqueeze(1)

    rest = rearrange(
        video[:, 1:],
        "b (t pt) c (h ph) (w pw) -> b t (c pt ph pw) h w",
        pt=spec.p_t, ph=spec.p_s, pw=spec.p_s,
    )
    latent = torch.cat([first, rest], dim=1)
    return latent.squeeze(0) if unbatched else latent


def decode(latent: torch.Tensor, spec: CodecSpec) -> torch.Tensor:
    """Exact inverse of encode."""
    unbatched = latent.ndim == 4
    if unbatched:
        latent = latent.unsqueeze(0)
    b, t_lat, c_lat, h_lat, w_lat = latent.shape
    if c_lat != spec.latent_channels:
        raise ValueError(f"latent has {c_lat} channels, codec expects {spec.latent_channels}")

    n_first = spec.in_channels * spec.p_s * spec.p_s
    first = rearrange(
        latent[:, 0, :n_first],
        "b (c ph pw) h w -> b c (h ph) (w pw)",
        c=spec.in_channels, ph=spec.p_s, pw=spec.p_s,
    ).unsqueeze(1)
    rest = rearrange(
        latent[:, 1:],
        "b t (c pt ph pw) h w -> b (t pt) c (h ph) (w pw)",
        c=spec.in_channels, pt=spec.p_t, ph=spec.p_s, pw=spec.p_s,
    )
    video = torch.cat([first, rest], dim=1)
    return video.squeeze(0) if unbatched else video


def encode_first_frame(frame: torch.Tensor, spec: CodecSpec) -> torch.Tensor:
    """[B, C, H, W] first frame -> its latent step-0 plane [B, 1, C', H', W']."""
    unbatched = frame.ndim == 3
    if unbatched:
        frame = frame.unsqueeze(0)
    first = rearrange(frame, "b c (h ph) (w pw) -> b (c ph pw) h w", ph=spec.p_s, pw=spec.p_s)
    pad = first.new_zeros(first.shape[0], spec.latent_channels - first.shape[1], *first.shape[2:])
    out = torch.cat([first, pad], dim=1).unsqueeze(1)
    return out.squeeze(0) if unbatched else out
