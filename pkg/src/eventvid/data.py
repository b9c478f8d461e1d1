"""Dataset loading, clip sampling, and paired RGB/event preprocessing.

Frames and event histograms always receive identical geometry: the same
flips, the same crop, the same resize target. Frames interpolate
bilinearly; histograms are densities, so they resize with area weighting
(sum-preserving up to the scale factor). Frames are normalized to [-1, 1]
at the model boundary; histograms stay as raw counts unless per-channel
standardization is enabled.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .events import BinningSpec, EventStream, build_clip, read_events, read_timestamps
from .simulate import read_raw


@dataclass(frozen=True)
class SamplerSpec:
    clip_len: int
    stride: int = 1
    drop_incomplete: bool = True
    mode: str = "train"

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.clip_len < 2:
            raise ValueError("clip_len must be >= 2")


@dataclass(frozen=True)
class AugmentSpec:
    hflip_prob: float = 0.5
    vflip_prob: float = 0.0
    rrc_scale: tuple[float, float] = (0.2, 1.0)
    target: tuple[int, int] = (32, 32)

    def __post_init__(self):
        lo, hi = self.rrc_scale
        if not 0 < lo <= hi <= 1:
            raise ValueError(f"rrc_scale must satisfy 0 < lo <= hi <= 1, got {self.rrc_scale}")


@dataclass
class ClipSample:
    """Aligned (frames in [-1, 1], event histogram) pair plus provenance."""

    frames: torch.Tensor
    events: torch.Tensor
    id: tuple[str, int] = ("", 0)

    def __post_init__(self):
        if self.frames.shape[0] != self.events.shape[0]:
            raise ValueError("frames and events must share the time axis")
        if self.frames.shape[-2:] != self.events.shape[-2:]:
            raise ValueError("frames and events must share the spatial grid")

    @property
    def first_frame(self) -> torch.Tensor:
        return self.frames[0]


def enumerate_clips(video_len: int, spec: SamplerSpec) -> list[int]:
    """Start indices {0, stride, 2*stride, ...}; with drop_incomplete only
    windows that fit entirely inside the video are kept, otherwise any start
    inside the video counts (trailing windows come up short)."""
    if video_len < 1:
        raise ValueError("video_len must be >= 1")
    if spec.drop_incomplete:
        return list(range(0, max(video_len - spec.clip_len + 1, 0), spec.stride))
    return list(range(0, video_len, spec.stride))


def normalize_frames(frames01: torch.Tensor) -> torch.Tensor:
    return frames01 * 2.0 - 1.0


def denormalize_frames(frames: torch.Tensor) -> torch.Tensor:
    return ((frames + 1.0) / 2.0).clamp(0.0, 1.0)


def standardize_events(events: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Optional per-channel standardization over the clip."""
    mean = events.mean(dim=(0, 2, 3), keepdim=True)
    std = events.std(dim=(0, 2, 3), keepdim=True)
    return (events - mean) / (std + eps)


def _resize(x: torch.Tensor, size: tuple[int, int], mode: str) -> torch.Tensor:
    if x.shape[-2:] == size:
        return x
    if mode == "bilinear":
        return F.interpolate(x, size=size, mode="bilinear", align_corners=False, antialias=False)
    return F.interpolate(x, size=size, mode="area")


def preprocess_eval(
    frames01: torch.Tensor,
    events: torch.Tensor,
    target: tuple[int, int],
    standardize: bool = False,
) -> ClipSample:
    """Deterministic eval preprocessing: resize so the shorter side matches
    the target, center-crop, normalize. Frames bilinear, events area."""
    h, w = frames01.shape[-2:]
    if h < 8 or w < 8:
        raise ValueError(f"source {h}x{w} too small to preprocess")
    th, tw = target
    # shorter side -> target extent on that side, aspect preserved
    if h <= w:
        new_h, new_w = th, max(round(w * th / h), tw)
    else:
        new_h, new_w = max(round(h * tw / w), th), tw
    frames_r = _resize(frames01, (new_h, new_w), "bilinear")
    events_r = _resize(events, (new_h, new_w), "area")
    top = (new_h - th) // 2
    left = (new_w - tw) // 2
    frames_c = frames_r[..., top : top + th, left : left + tw]
    events_c = events_r[..., top : top + th, left : left + tw]
    if standardize:
        events_c = standardize_events(events_c)
    return ClipSample(normalize_frames(frames_c), events_c)


def flip_clip_with_flow(
    frames01: torch.Tensor,
    events: torch.Tensor,
    flow: torch.Tensor,
    rng: np.random.Generator,
    hflip_prob: float = 0.5,
    vflip_prob: float = 0.5,
):
    """Random flips applied jointly to frames, events, and the flow field.

    Mirroring negates the corresponding flow component; event polarities are
    untouched. Used by the recurrent trainer, whose loss consumes flow.
    """
    if rng.random() < hflip_prob:
        frames01 = frames01.flip(-1)
        events = events.flip(-1)
        flow = flow.flip(-1)
        flow = torch.stack([-flow[:, 0], flow[:, 1]], dim=1)
    if rng.random() < vflip_prob:
        frames01 = frames01.flip(-2)
        events = events.flip(-2)
        flow = flow.flip(-2)
        flow = torch.stack([flow[:, 0], -flow[:, 1]], dim=1)
    return frames01, events, flow


def augment_train(
    frames01: torch.Tensor,
    events: torch.Tensor,
    spec: AugmentSpec,
    rng: np.random.Generator,
    standardize: bool = False,
) -> ClipSample:
    """One geometric transform per clip, applied identically to every frame
    and event channel: optional flips plus a random resized crop. If a
    sampled crop exceeds the source after 10 tries, falls back to a
    full-frame resize."""
    h, w = frames01.shape[-2:]
    if rng.random() < spec.hflip_prob:
        frames01 = frames01.flip(-1)
        events = events.flip(-1)
    if rng.random() < spec.vflip_prob:
        frames01 = frames01.flip(-2)
        events = events.flip(-2)

    crop = None
    for _ in range(10):
        scale = rng.uniform(*spec.rrc_scale)
        log_ratio = rng.uniform(np.log(3 / 4), np.log(4 / 3))
        ratio = float(np.exp(log_ratio))
        area = scale * h * w
        ch = round(np.sqrt(area / ratio))
        cw = round(np.sqrt(area * ratio))
        if 1 <= ch <= h and 1 <= cw <= w:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            crop = (top, left, ch, cw)
            break
    if crop is not None:
        top, left, ch, cw = crop
        frames01 = frames01[..., top : top + ch, left : left + cw]
        events = events[..., top : top + ch, left : left + cw]

    frames01 = _resize(frames01, spec.target, "bilinear")
    events = _resize(events, spec.target, "area")
    if standardize:
        events = standardize_events(events)
    return ClipSample(normalize_frames(frames01), events)


class ClipDataset:
    """Reads the on-disk layout written by the simulator."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        manifest_path = self.root / "dataset.json"
        if manifest_path.exists():
            self.manifest = json.loads(manifest_path.read_text())
            self.clip_ids = list(self.manifest["clips"])
        else:
            self.manifest = {}
            self.clip_ids = sorted(p.name for p in self.root.iterdir() if (p / "manifest.json").exists())
        if not self.root.exists():
            raise FileNotFoundError(f"dataset root {self.root} does not exist")

    def __len__(self) -> int:
        return len(self.clip_ids)

    def clip_manifest(self, clip_id: str) -> dict:
        return json.loads((self.root / clip_id / "manifest.json").read_text())

    def load_clip(self, clip_id: str):
        """-> (frames01 [T,3,H,W] float32 np, EventStream, flow [T-1,2,H,W] np, timestamps)."""
        d = self.root / clip_id
        manifest = self.clip_manifest(clip_id)
        frames = read_raw(d / manifest["frames"]["file"], manifest["frames"])
        flow = read_raw(d / manifest["flow"]["file"], manifest["flow"])
        stream = read_events(d / manifest["events"]["file"])
        ts = read_timestamps(d / manifest["events"]["timestamps"])
        return frames, stream, flow, ts

    def n_frames(self, clip_id: str) -> int:
        return int(self.clip_manifest(clip_id)["frames"]["shape"][0])

    def window(
        self,
        clip_id: str,
        start: int,
        clip_len: int,
        binning: BinningSpec,
        rate_multiplier: int = 1,
    ):
        """Slice a frame window and bin its events.

        -> (frames01 [T,3,H,W] torch, hist [T,C,H,W] float torch, flow torch).
        """
        frames, stream, flow, ts = self.load_clip(clip_id)
        if start < 0 or start + clip_len > len(ts):
            raise ValueError(f"window [{start}, {start + clip_len}) outside clip of {len(ts)} frames")
        window_ts = ts[start : start + clip_len]
        hist = build_clip(stream, window_ts, binning)
        return (
            torch.from_numpy(frames[start : start + clip_len]).float(),
            torch.from_numpy(hist.data.astype(np.float32)),
            torch.from_numpy(flow[start : start + clip_len - 1]).float(),
        )


def list_windows(dataset: ClipDataset, spec: SamplerSpec) -> list[tuple[str, int]]:
    out = []
    for clip_id in dataset.clip_ids:
        for start in enumerate_clips(dataset.n_frames(clip_id), spec):
            out.append((clip_id, start))
    return out
