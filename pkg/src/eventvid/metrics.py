"""Reconstruction metrics and the frame/sequence/dataset aggregation protocol.

PSNR and SSIM are computed on RGB frames in [0, 1]; the perceptual distance
is pluggable, with a multi-scale L1 pyramid as the desk-scale default
standing in for a learned metric behind the same interface. Per-frame
values average into a per-sequence scalar, and per-sequence scalars
average into the dataset value. The conditioning frame is given, not
generated, and is excluded from aggregation; reports record this.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import torch
import torch.nn.functional as F

GRAY_WEIGHTS_601 = (0.299, 0.587, 0.114)
PSNR_CAP_DB = 100.0


def psnr(pred: torch.Tensor, gt: torch.Tensor, peak: float = 1.0) -> float:
    """10 * log10(peak^2 / MSE), capped at 100 dB for (near-)identical inputs."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(gt.shape)}")
    mse = ((pred - gt) ** 2).mean().item()
    if mse == 0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(peak**2 / mse), PSNR_CAP_DB)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> torch.Tensor:
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(coords**2) / (2 * sigma**2))
    g = g / g.sum()
    return g[:, None] * g[None, :]


def rgb_to_gray(frame: torch.Tensor) -> torch.Tensor:
    """[.., 3, H, W] -> [.., 1, H, W] with ITU-R 601 weights."""
    w = torch.tensor(GRAY_WEIGHTS_601, dtype=frame.dtype, device=frame.device)
    return (frame * w.view(3, 1, 1)).sum(dim=-3, keepdim=True)


def ssim(pred: torch.Tensor, gt: torch.Tensor) -> float:
    """Mean local SSIM on the 601-gray images, 11x11 Gaussian window sigma 1.5,
    standard stabilizers C1 = 0.01^2, C2 = 0.03^2 for unit dynamic range."""
    if pred.shape != gt.shape:
        raise ValueError("shape mismatch")
    if pred.shape[-1] < 11 or pred.shape[-2] < 11:
        raise ValueError(f"frames smaller than the 11x11 SSIM window: {tuple(pred.shape)}")
    # float64 internally: the variance terms cancel catastrophically in float32
    x = rgb_to_gray(pred.reshape(-1, *pred.shape[-3:])).double()
    y = rgb_to_gray(gt.reshape(-1, *gt.shape[-3:])).double()
    win = _gaussian_window().to(x.dtype).view(1, 1, 11, 11)
    c1, c2 = 0.01**2, 0.03**2

    mu_x = F.conv2d(x, win)
    mu_y = F.conv2d(y, win)
    var_x = F.conv2d(x * x, win) - mu_x**2
    var_y = F.conv2d(y * y, win) - mu_y**2
    cov = F.conv2d(x * y, win) - mu_x * mu_y
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    )
    return ssim_map.mean().item()


def pyramid_l1(pred: torch.Tensor, gt: torch.Tensor, levels: int = 3) -> torch.Tensor:
    """Multi-scale L1: mean absolute error averaged over an average-pooled
    pyramid (full resolution plus `levels - 1` 2x poolings). Differentiable;
    zero iff the inputs are identical."""
    x = pred.reshape(-1, *pred.shape[-3:])
    y = gt.reshape(-1, *gt.shape[-3:])
    total = (x - y).abs().mean()
    for _ in range(levels - 1):
        x = F.avg_pool2d(x, 2)
        y = F.avg_pool2d(y, 2)
        total = total + (x - y).abs().mean()
    return total / levels


_PERCEPTUAL_BACKENDS: dict[str, Callable[[torch.Tensor, torch.Tensor], torch.Tensor]] = {
    "pyramid_l1": pyramid_l1,
}


def register_perceptual_backend(name: str, fn: Callable) -> None:
    """Hook for plugging in a learned perceptual distance."""
    _PERCEPTUAL_BACKENDS[name] = fn


def perceptual(pred: torch.Tensor, gt: torch.Tensor, backend: str = "pyramid_l1") -> float:
    if backend not in _PERCEPTUAL_BACKENDS:
        raise ValueError(f"unknown perceptual backend {backend!r}; registered: {sorted(_PERCEPTUAL_BACKENDS)}")
    return float(_PERCEPTUAL_BACKENDS[backend](pred, gt).item())


METRIC_FNS: dict[str, Callable[[torch.Tensor, torch.Tensor], float]] = {
    "psnr": psnr,
    "ssim": ssim,
    "perceptual": perceptual,
}


@dataclass
class MetricReport:
    """Per-frame values per sequence, their means, and the dataset mean."""

    metric_name: str
    per_frame: list[list[float]] = field(default_factory=list)
    config_hash: str = ""
    first_frame_excluded: bool = True

    def add_sequence(self, values: list[float]) -> None:
        if not values:
            raise ValueError("a sequence must contribute at least one frame value")
        self.per_frame.append([float(v) for v in values])

    @property
    def per_sequence(self) -> list[float]:
        return [sum(v) / len(v) for v in self.per_frame]

    @property
    def dataset(self) -> float:
        seqs = self.per_sequence
        if not seqs:
            raise ValueError("empty report")
        return sum(seqs) / len(seqs)

    def to_dict(self) -> dict:
        return {
            "metric": self.metric_name,
            "dataset": self.dataset if self.per_frame else None,
            "per_sequence": self.per_sequence,
            "per_frame": self.per_frame,
            "config_hash": self.config_hash,
            "first_frame_excluded": self.first_frame_excluded,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def score_sequence(pred: torch.Tensor, gt: torch.Tensor,
                   metrics: tuple[str, ...] = ("psnr", "ssim", "perceptual")) -> dict[str, list[float]]:
    """Per-frame metric values for generated frames [T, 3, H, W].

    `pred`/`gt` must already exclude the conditioning frame.
    """
    if pred.shape != gt.shape:
        raise ValueError("shape mismatch")
    out: dict[str, list[float]] = {m: [] for m in metrics}
    for t in range(pred.shape[0]):
        for m in metrics:
            out[m].append(float(METRIC_FNS[m](pred[t], gt[t])))
    return out
