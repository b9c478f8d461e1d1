"""Synthetic scene renderer and contrast-threshold event simulator.

Produces aligned (RGB clip, event stream, ground-truth optical flow)
triples: sprites move along piecewise-linear trajectories over a static
background, rendered at `substeps_per_frame` temporal supersampling; a
per-pixel contrast-threshold sensor model converts the log-intensity
signal into signed events. Everything is deterministic given (spec, seed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .events import EventStream, write_events, write_timestamps

LOG_EPS = 1e-3
GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])  # ITU-R 601 luma

RECT = "rect"
DISK = "disk"
TEXTURED = "textured"


@dataclass
class Sprite:
    """One moving sprite: shape, RGB color, half-extent, and a linear trajectory.

    `position0` is the center (x, y) in pixels at t=0, `velocity` is in
    pixels per frame. With `bounce` the center reflects off the walls
    (inset by the sprite extent) so the sprite stays inside the canvas.
    """

    shape: str = DISK
    color: tuple[float, float, float] = (1.0, 1.0, 1.0)
    size: float = 4.0
    position0: tuple[float, float] = (0.0, 0.0)
    velocity: tuple[float, float] = (0.0, 0.0)
    bounce: bool = True
    texture_seed: int = 0

    def __post_init__(self):
        if self.shape not in (RECT, DISK, TEXTURED):
            raise ValueError(f"unknown sprite shape {self.shape!r}")


@dataclass
class SceneSpec:
    """Canvas geometry, sprites, background, and the render timeline."""

    canvas: tuple[int, int] = (32, 32)
    sprites: list[Sprite] = field(default_factory=list)
    background: tuple[float, float, float] = (0.25, 0.25, 0.25)
    background_texture: bool = False
    duration_us: int = 320_000
    base_fps: int = 25
    substeps_per_frame: int = 8

    def __post_init__(self):
        h, w = self.canvas
        if h < 8 or w < 8:
            raise ValueError(f"degenerate canvas {self.canvas}; need at least 8x8")
        if self.substeps_per_frame < 1:
            raise ValueError("substeps_per_frame must be >= 1")
        if 1_000_000 % self.base_fps:
            raise ValueError("base_fps must divide 1e6 for integer-microsecond frames")

    @property
    def frame_period_us(self) -> int:
        return 1_000_000 // self.base_fps

    @property
    def n_frames(self) -> int:
        return self.duration_us // self.frame_period_us + 1

    def frame_timestamps(self) -> np.ndarray:
        return np.arange(self.n_frames, dtype=np.int64) * self.frame_period_us

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["sprites"] = [Sprite(**{**s, "color": tuple(s["color"]),
                                  "position0": tuple(s["position0"]),
                                  "velocity": tuple(s["velocity"])})
                        for s in d["sprites"]]
        d["canvas"] = tuple(d["canvas"])
        d["background"] = tuple(d["background"])
        return cls(**d)


def _reflect(value: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Reflect coordinates into [lo, hi] (triangle-wave folding)."""
    if hi <= lo:
        return np.full_like(value, (lo + hi) / 2.0)
    span = hi - lo
    phase = np.mod(value - lo, 2 * span)
    return lo + np.where(phase <= span, phase, 2 * span - phase)


def _sprite_center(sprite: Sprite, canvas: tuple[int, int], t_frames: np.ndarray) -> np.ndarray:
    """Center (x, y) at fractional frame times t; shape [len(t), 2]."""
    h, w = canvas
    x = sprite.position0[0] + sprite.velocity[0] * t_frames
    y = sprite.position0[1] + sprite.velocity[1] * t_frames
    if sprite.bounce:
        x = _reflect(x, sprite.size, w - 1 - sprite.size)
        y = _reflect(y, sprite.size, h - 1 - sprite.size)
    return np.stack([x, y], axis=-1)


def _sprite_texture(sprite: Sprite) -> np.ndarray:
    rng = np.random.default_rng(sprite.texture_seed)
    return rng.uniform(0.1, 1.0, size=(16, 16, 3))


def _smooth_field(rng: np.random.Generator, h: int, w: int,
                  lo: float, hi: float, cell: int = 8) -> np.ndarray:
    """Low-frequency random color field: a coarse grid upsampled bilinearly."""
    gh, gw = max(h // cell, 2), max(w // cell, 2)
    coarse = rng.uniform(lo, hi, size=(gh, gw, 3))
    yy = np.linspace(0, gh - 1, h)
    xx = np.linspace(0, gw - 1, w)
    y0 = np.floor(yy).astype(int)
    x0 = np.floor(xx).astype(int)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    fy = (yy - y0)[:, None, None]
    fx = (xx - x0)[None, :, None]
    top = coarse[y0][:, x0] * (1 - fx) + coarse[y0][:, x1] * fx
    bot = coarse[y1][:, x0] * (1 - fx) + coarse[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def _paint(canvas_rgb: np.ndarray, sprite: Sprite, center: np.ndarray) -> np.ndarray:
    """Composite one sprite over the image at the given center (hard edges)."""
    h, w, _ = canvas_rgb.shape
    yy, xx = np.mgrid[0:h, 0:w]
    cx, cy = center
    if sprite.shape == RECT:
        mask = (np.abs(xx - cx) <= sprite.size) & (np.abs(yy - cy) <= sprite.size)
        color = np.asarray(sprite.color)
        canvas_rgb[mask] = color
    elif sprite.shape == DISK:
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= sprite.size**2
        canvas_rgb[mask] = np.asarray(sprite.color)
    else:  # textured: pattern rides along with the sprite
        mask = (np.abs(xx - cx) <= sprite.size) & (np.abs(yy - cy) <= sprite.size)
        tex = _sprite_texture(sprite)
        u = np.mod(np.round(xx - cx).astype(int), tex.shape[1])
        v = np.mod(np.round(yy - cy).astype(int), tex.shape[0])
        canvas_rgb[mask] = tex[v[mask], u[mask]]
    return canvas_rgb


def render(spec: SceneSpec, seed: int = 0):
    """Render a scene to RGB subframes, frame-rate RGB frames, and GT flow.

    Returns (gray_subframes [(T-1)*s + 1, H, W], frames [T, 3, H, W],
    flow [T-1, 2, H, W], subframe_timestamps). Flow at slot i is the
    per-pixel displacement from frame i to frame i+1 (pixels/frame),
    sampled at pixels a sprite covers at frame i; static pixels are zero.
    """
    h, w = spec.canvas
    t_frames = spec.n_frames
    s = spec.substeps_per_frame
    n_sub = (t_frames - 1) * s + 1
    rng = np.random.default_rng(seed)

    if spec.background_texture:
        # smooth and dim: low-frequency so appearance is propagatable, dim so
        # bright sprites keep log-contrast against every background region
        bg = _smooth_field(rng, h, w, 0.08, 0.5)
    else:
        bg = np.broadcast_to(np.asarray(spec.background), (h, w, 3)).copy()

    sub_rgb = np.empty((n_sub, h, w, 3))
    sub_t_frames = np.arange(n_sub) / s
    centers = {id(sp): _sprite_center(sp, spec.canvas, sub_t_frames) for sp in spec.sprites}
    for i in range(n_sub):
        img = bg.copy()
        for sp in spec.sprites:
            img = _paint(img, sp, centers[id(sp)][i])
        sub_rgb[i] = img

    frames = sub_rgb[::s].transpose(0, 3, 1, 2).copy()

    flow = np.zeros((t_frames - 1, 2, h, w))
    yy, xx = np.mgrid[0:h, 0:w]
    for sp in spec.sprites:
        c = centers[id(sp)][::s]  # centers at frame times
        for i in range(t_frames - 1):
            cx, cy = c[i]
            if sp.shape == DISK:
                mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= sp.size**2
            else:
                mask = (np.abs(xx - cx) <= sp.size) & (np.abs(yy - cy) <= sp.size)
            d = c[i + 1] - c[i]
            flow[i, 0][mask] = d[0]
            flow[i, 1][mask] = d[1]

    sub_ts = np.round(np.arange(n_sub) * (spec.frame_period_us / s)).astype(np.int64)
    gray = sub_rgb @ GRAY_WEIGHTS
    return gray, frames, flow, sub_ts


def simulate_events(
    subframes: np.ndarray,
    subframe_timestamps: np.ndarray,
    contrast_threshold: float = 0.2,
    sensor_size: tuple[int, int] | None = None,
) -> EventStream:
    """Contrast-threshold sensor model over gray subframes [N, H, W].

    Per pixel a reference log-intensity L_ref = log(I + 1e-3) is tracked;
    whenever a subframe's log intensity differs from L_ref by >= theta, the
    pixel emits floor(|dL|/theta) events of sign(dL), timestamped at the
    threshold-crossing times of the linear ramp between subframes, and
    L_ref advances by the emitted multiple of theta (sub-threshold residual
    is retained).
    """
    theta = contrast_threshold
    if theta <= 0:
        raise ValueError(f"contrast threshold must be positive, got {theta}")
    if subframes.ndim != 3 or subframes.shape[0] < 2:
        raise ValueError("need at least two subframes [N, H, W]")
    n, h, w = subframes.shape
    log_i = np.log(subframes + LOG_EPS)
    l_ref = log_i[0].copy()
    l_prev = log_i[0]

    xs, ys, ts, ps = [], [], [], []
    for i in range(1, n):
        l_cur = log_i[i]
        delta = l_cur - l_ref
        k = np.floor(np.abs(delta) / theta).astype(np.int64)
        fire = k > 0
        if fire.any():
            y_idx, x_idx = np.nonzero(fire)
            counts = k[fire]
            sign = np.sign(delta[fire]).astype(np.int64)
            total = int(counts.sum())
            # j = 1..count for each firing pixel
            rep = np.repeat(np.arange(len(counts)), counts)
            j = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts) + 1
            level = l_ref[fire][rep] + sign[rep] * j * theta
            ramp = (l_cur - l_prev)[fire][rep]
            frac = np.where(ramp != 0, (level - l_prev[fire][rep]) / np.where(ramp == 0, 1.0, ramp), 1.0)
            frac = np.clip(frac, 0.0, 1.0)
            t0, t1 = int(subframe_timestamps[i - 1]), int(subframe_timestamps[i])
            # keep events strictly inside (t0, t1): a crossing at exactly a
            # frame timestamp must bin into the interval it completes, and
            # frame intervals are half-open at the right.
            t_ev = t0 + np.clip(np.round(frac * (t1 - t0)).astype(np.int64), 1, max(t1 - t0 - 1, 1))
            xs.append(x_idx[rep])
            ys.append(y_idx[rep])
            ts.append(t_ev)
            ps.append(sign[rep])
            l_ref[fire] += sign * counts * theta
        l_prev = l_cur

    if not xs:
        return EventStream.empty(sensor_size or (h, w))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    t = np.concatenate(ts)
    p = np.concatenate(ps)
    order = np.lexsort((p, x, y, t))
    return EventStream(x[order], y[order], t[order], p[order], sensor_size or (h, w))


def simulate_clip(spec: SceneSpec, seed: int, contrast_threshold: float = 0.2):
    """Render a scene and run the sensor model; returns (frames, events, flow, frame_ts)."""
    gray, frames, flow, sub_ts = render(spec, seed)
    events = simulate_events(gray, sub_ts, contrast_threshold, sensor_size=spec.canvas)
    return frames, events, flow, spec.frame_timestamps()


def _write_raw(path: Path, arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    path.write_bytes(arr.tobytes())
    return {"shape": list(arr.shape), "dtype": "<f4"}


def read_raw(path: str | Path, meta: dict) -> np.ndarray:
    data = np.frombuffer(Path(path).read_bytes(), dtype=meta["dtype"])
    return data.reshape(meta["shape"]).copy()


def make_dataset(
    n_clips: int,
    spec_sampler: Callable[[np.random.Generator], SceneSpec],
    seed: int,
    out_dir: str | Path,
    contrast_threshold: float = 0.2,
) -> dict:
    """Generate n_clips scenes to disk. Layout per clip:

        <out_dir>/<clip_id>/{frames.bin, events.evt1, events.json, flow.bin, manifest.json}

    plus a dataset-level manifest <out_dir>/dataset.json. Each clip draws
    its own child generator from (seed, clip index), so content is
    identical regardless of generation order or worker count.
    """
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    clip_ids = []
    for idx in range(n_clips):
        rng = np.random.default_rng([seed, idx])
        spec = spec_sampler(rng)
        clip_seed = int(rng.integers(0, 2**31 - 1))
        clip_id = f"clip_{idx:05d}"
        clip_dir = root / clip_id
        try:
            clip_dir.mkdir(exist_ok=True)
            frames, events, flow, frame_ts = simulate_clip(spec, clip_seed, contrast_threshold)
            frames_meta = _write_raw(clip_dir / "frames.bin", frames)
            flow_meta = _write_raw(clip_dir / "flow.bin", flow)
            write_events(clip_dir / "events.evt1", events)
            write_timestamps(clip_dir / "events.json", frame_ts)
            manifest = {
                "clip_id": clip_id,
                "seed": clip_seed,
                "scene": spec.to_dict(),
                "contrast_threshold": contrast_threshold,
                "fps": spec.base_fps,
                "substeps": spec.substeps_per_frame,
                "n_events": len(events),
                "frames": {"file": "frames.bin", **frames_meta},
                "flow": {"file": "flow.bin", **flow_meta},
                "events": {"file": "events.evt1", "timestamps": "events.json"},
            }
            (clip_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
        except OSError as exc:
            raise OSError(f"failed writing clip {idx} ({clip_id}): {exc}") from exc
        clip_ids.append(clip_id)
    dataset = {
        "seed": seed,
        "n_clips": n_clips,
        "contrast_threshold": contrast_threshold,
        "clips": clip_ids,
    }
    (root / "dataset.json").write_text(json.dumps(dataset, sort_keys=True, indent=1) + "\n")
    return dataset


def varied_scene_sampler(n_frames: int = 9, canvas: int = 32) -> Callable[[np.random.Generator], SceneSpec]:
    """Generic moving-sprite scenes: 1-2 sprites, random color/size/velocity."""
    fps = 25

    def sampler(rng: np.random.Generator) -> SceneSpec:
        h = w = canvas
        sprites = []
        for _ in range(int(rng.integers(1, 3))):
            speed = rng.uniform(0.8, 2.0) * canvas / 32
            angle = rng.uniform(0, 2 * np.pi)
            sprites.append(
                Sprite(
                    shape=str(rng.choice([RECT, DISK, TEXTURED])),
                    color=tuple(float(c) for c in rng.uniform(0.55, 1.0, size=3)),
                    size=float(rng.uniform(3.0, 6.0)) * canvas / 32,
                    position0=(float(rng.uniform(8, w - 8)), float(rng.uniform(8, h - 8))),
                    velocity=(float(speed * np.cos(angle)), float(speed * np.sin(angle))),
                    texture_seed=int(rng.integers(0, 2**31 - 1)),
                )
            )
        return SceneSpec(canvas=(h, w), sprites=sprites,
                         background=tuple(float(c) for c in rng.uniform(0.1, 0.3, size=3)),
                         duration_us=(n_frames - 1) * (1_000_000 // fps),
                         base_fps=fps)

    return sampler


def default_scene_sampler(rng: np.random.Generator) -> SceneSpec:
    return varied_scene_sampler()(rng)


def ambiguous_motion_sampler(
    n_frames: int = 9,
    canvas: int = 32,
    speed: float = 1.8,
    textured_background: bool = False,
) -> Callable[[np.random.Generator], SceneSpec]:
    """Scenes whose motion is determinable only from events.

    A single high-contrast disk always starts at the canvas center and
    moves in a uniformly random direction, so the initial frame carries no
    information about where the sprite will go. With `textured_background`
    the static backdrop is a per-clip random texture, which stresses
    appearance propagation in autoregressive models.
    """

    def sampler(rng: np.random.Generator) -> SceneSpec:
        angle = rng.uniform(0, 2 * np.pi)
        fps = 25
        duration = (n_frames - 1) * (1_000_000 // fps)
        disk = Sprite(
            shape=DISK,
            color=tuple(float(c) for c in rng.uniform(0.75, 1.0, size=3)),
            size=4.5 * canvas / 32,
            position0=(canvas / 2 - 0.5, canvas / 2 - 0.5),
            velocity=(float(speed * np.cos(angle)), float(speed * np.sin(angle))),
            bounce=True,
        )
        return SceneSpec(
            canvas=(canvas, canvas),
            sprites=[disk],
            background=(0.2, 0.2, 0.2),
            background_texture=textured_background,
            duration_us=duration,
            base_fps=fps,
        )

    return sampler
