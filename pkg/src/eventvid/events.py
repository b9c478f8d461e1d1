"""Event-stream data model and temporal histogram binning.

Events are (x, y, t, p) records with integer-microsecond timestamps and
polarity +/-1. A window of events is accumulated into B temporal bins per
frame interval, either with signed accumulation ("difference", B channels)
or with separate positive/negative count blocks ("concatenation", 2B
channels). Accumulation is exact signed 32-bit integer arithmetic; convert
to float only at the model boundary.

Binning convention: bin boundaries are t_b = t_start + b * (t_end - t_start) / B,
intervals are half-open [t_b, t_{b+1}), an event at exactly t_end is
excluded, and ties at internal boundaries go to the later bin.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

EVT1_MAGIC = b"EVT1"
_EVT1_HEADER = struct.Struct("<4sHHQ")
_EVT1_RECORD = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<u8"), ("p", "<i1")])

DIFFERENCE = "difference"
CONCATENATION = "concatenation"


class Event(NamedTuple):
    """One sensor event: pixel column/row, timestamp in microseconds, polarity +/-1."""

    x: int
    y: int
    t: int
    p: int


@dataclass(frozen=True)
class BinningSpec:
    """Number of temporal bins per frame interval and the polarity encoding."""

    n_bins: int = 5
    polarity_mode: str = DIFFERENCE

    def __post_init__(self):
        if self.n_bins < 1:
            raise ValueError(f"n_bins must be >= 1, got {self.n_bins}")
        if self.polarity_mode not in (DIFFERENCE, CONCATENATION):
            raise ValueError(f"unknown polarity_mode {self.polarity_mode!r}")

    @property
    def channels(self) -> int:
        return self.n_bins if self.polarity_mode == DIFFERENCE else 2 * self.n_bins


@dataclass
class EventStream:
    """Time-sorted sparse events plus the sensor geometry.

    Arrays are column-oriented (x, y, t, p) for vectorized binning; `t` is
    non-decreasing and all coordinates lie inside `sensor_size` = (H, W).
    """

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    sensor_size: tuple[int, int]

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.t = np.asarray(self.t, dtype=np.int64)
        self.p = np.asarray(self.p, dtype=np.int64)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event columns must have equal length")
        h, w = self.sensor_size
        if n:
            if self.t.min() < 0:
                raise ValueError("timestamps must be non-negative")
            if np.any(np.diff(self.t) < 0):
                raise ValueError("timestamps must be non-decreasing")
            if np.any((self.x < 0) | (self.x >= w) | (self.y < 0) | (self.y >= h)):
                raise ValueError("event coordinates out of sensor bounds")
            if not np.all(np.abs(self.p) == 1):
                raise ValueError("polarity must be exactly +1 or -1")

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self):
        for x, y, t, p in zip(self.x, self.y, self.t, self.p):
            yield Event(int(x), int(y), int(t), int(p))

    @classmethod
    def empty(cls, sensor_size: tuple[int, int]) -> "EventStream":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, sensor_size)

    @classmethod
    def from_events(cls, events: Sequence[Event], sensor_size: tuple[int, int]) -> "EventStream":
        if not events:
            return cls.empty(sensor_size)
        arr = np.asarray(events, dtype=np.int64)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], sensor_size)


@dataclass
class EventHistogramClip:
    """Per-frame binned event tensor [T, C, H, W] (int32 counts).

    `data[i]` covers the half-open interval [frame_timestamps[i-1],
    frame_timestamps[i]); `data[0]` is all-zeros so the tensor is
    time-aligned with T video frames.
    """

    data: np.ndarray
    frame_timestamps: np.ndarray
    spec: BinningSpec = field(default_factory=BinningSpec)

    def __post_init__(self):
        self.frame_timestamps = np.asarray(self.frame_timestamps, dtype=np.int64)
        if self.data.ndim != 4:
            raise ValueError("histogram clip data must be [T, C, H, W]")
        if self.data.shape[0] != len(self.frame_timestamps):
            raise ValueError("frame count must match timestamp count")
        if self.data.shape[1] != self.spec.channels:
            raise ValueError(
                f"channel count {self.data.shape[1]} inconsistent with spec "
                f"({self.spec.channels} expected)"
            )

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]


def bin_window(
    stream: EventStream,
    t_start: int,
    t_end: int,
    spec: BinningSpec,
    sensor_size: tuple[int, int] | None = None,
) -> np.ndarray:
    """Accumulate events with t in [t_start, t_end) into a [C, H, W] histogram.

    The window is split into `spec.n_bins` equal half-open bins; an event at
    exactly t_end is excluded. Difference mode sums polarities per
    (bin, y, x); concatenation mode counts +1 events into channels [0, B)
    and -1 events into channels [B, 2B).
    """
    if t_start >= t_end:
        raise ValueError(f"t_start ({t_start}) must be < t_end ({t_end})")
    h, w = sensor_size if sensor_size is not None else stream.sensor_size
    if len(stream) and (stream.x.max() >= w or stream.y.max() >= h):
        raise ValueError("event coordinates out of bounds for requested sensor size")

    b = spec.n_bins
    hist = np.zeros((spec.channels, h, w), dtype=np.int32)
    if not len(stream):
        return hist

    lo = np.searchsorted(stream.t, t_start, side="left")
    hi = np.searchsorted(stream.t, t_end, side="left")
    if lo == hi:
        return hist
    t = stream.t[lo:hi]
    x = stream.x[lo:hi]
    y = stream.y[lo:hi]
    p = stream.p[lo:hi]

    # floor((t - t_start) * B / dt) in exact integer arithmetic; equals the
    # index of the half-open bin [t_start + b*dt/B, t_start + (b+1)*dt/B).
    bins = (t - t_start) * b // (t_end - t_start)

    if spec.polarity_mode == DIFFERENCE:
        np.add.at(hist, (bins, y, x), p.astype(np.int32))
    else:
        chan = np.where(p > 0, bins, bins + b)
        np.add.at(hist, (chan, y, x), np.int32(1))
    return hist


def build_clip(
    stream: EventStream,
    frame_timestamps: Sequence[int] | np.ndarray,
    spec: BinningSpec,
) -> EventHistogramClip:
    """Bin a stream into one histogram per inter-frame interval.

    Slot 0 is all-zeros (no interval precedes the first frame); slot i >= 1
    covers [frame_timestamps[i-1], frame_timestamps[i]).
    """
    ts = np.asarray(frame_timestamps, dtype=np.int64)
    if ts.ndim != 1 or len(ts) < 2:
        raise ValueError("need at least two frame timestamps")
    if np.any(np.diff(ts) <= 0):
        raise ValueError("frame timestamps must be strictly increasing")
    h, w = stream.sensor_size
    data = np.zeros((len(ts), spec.channels, h, w), dtype=np.int32)
    for i in range(1, len(ts)):
        data[i] = bin_window(stream, int(ts[i - 1]), int(ts[i]), spec)
    return EventHistogramClip(data, ts, spec)


def subdivide_timestamps(frame_timestamps: Sequence[int] | np.ndarray, rate_multiplier: int) -> np.ndarray:
    """Insert `rate_multiplier - 1` evenly spaced integer timestamps per interval."""
    if rate_multiplier < 1:
        raise ValueError("rate_multiplier must be a positive integer")
    ts = np.asarray(frame_timestamps, dtype=np.int64)
    if np.any(np.diff(ts) < rate_multiplier):
        raise ValueError(
            f"intervals shorter than {rate_multiplier} microseconds cannot be "
            f"subdivided {rate_multiplier}x with integer timestamps"
        )
    out = [ts[0]]
    for i in range(len(ts) - 1):
        delta = int(ts[i + 1] - ts[i])
        for j in range(1, rate_multiplier + 1):
            out.append(int(ts[i]) + delta * j // rate_multiplier)
    return np.asarray(out, dtype=np.int64)


def rebin(
    stream: EventStream,
    frame_timestamps: Sequence[int] | np.ndarray,
    rate_multiplier: int,
    spec: BinningSpec,
) -> EventHistogramClip:
    """Re-bin a stream at `rate_multiplier` times the original frame rate.

    Equivalent to build_clip on the linearly subdivided timeline; the result
    has (T-1)*rate_multiplier + 1 frame slots.
    """
    return build_clip(stream, subdivide_timestamps(frame_timestamps, rate_multiplier), spec)


def difference_from_concat(concat_hist: np.ndarray) -> np.ndarray:
    """Collapse a [2B, H, W] concatenation histogram into [B, H, W] difference form."""
    if concat_hist.shape[0] % 2:
        raise ValueError(f"channel count must be even, got {concat_hist.shape[0]}")
    b = concat_hist.shape[0] // 2
    return concat_hist[:b] - concat_hist[b:]


def write_events(path: str | Path, stream: EventStream) -> None:
    """Write the columnar binary event file (EVT1 header + packed records)."""
    path = Path(path)
    h, w = stream.sensor_size
    records = np.empty(len(stream), dtype=_EVT1_RECORD)
    records["x"] = stream.x
    records["y"] = stream.y
    records["t"] = stream.t
    records["p"] = stream.p
    with open(path, "wb") as f:
        f.write(_EVT1_HEADER.pack(EVT1_MAGIC, h, w, len(stream)))
        f.write(records.tobytes())


def read_events(path: str | Path) -> EventStream:
    """Read an EVT1 event file back into an EventStream."""
    with open(path, "rb") as f:
        header = f.read(_EVT1_HEADER.size)
        magic, h, w, count = _EVT1_HEADER.unpack(header)
        if magic != EVT1_MAGIC:
            raise ValueError(f"{path}: not an EVT1 file (magic {magic!r})")
        records = np.frombuffer(f.read(count * _EVT1_RECORD.itemsize), dtype=_EVT1_RECORD)
    if len(records) != count:
        raise ValueError(f"{path}: truncated event file")
    return EventStream(
        records["x"].astype(np.int64),
        records["y"].astype(np.int64),
        records["t"].astype(np.int64),
        records["p"].astype(np.int64),
        (h, w),
    )


def write_timestamps(path: str | Path, frame_timestamps: Sequence[int] | np.ndarray) -> None:
    """Write the JSON sidecar carrying the frame timestamps (microseconds)."""
    ts = [int(t) for t in np.asarray(frame_timestamps)]
    Path(path).write_text(json.dumps({"frame_timestamps": ts}, sort_keys=True) + "\n")


def read_timestamps(path: str | Path) -> np.ndarray:
    data = json.loads(Path(path).read_text())
    return np.asarray(data["frame_timestamps"], dtype=np.int64)
