#!/usr/bin/env python3
"""Walk through the event representation: raw events, temporal histogram
binning in both polarity encodings, and rate-multiplied rebinning.

Writes figures to runs/demos/01_event_histograms/.
"""

import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from eventvid.events import (
    BinningSpec,
    EventStream,
    bin_window,
    build_clip,
    difference_from_concat,
    rebin,
)

out = Path(os.environ.get("EVENTVID_RUNS", "runs")) / "demos" / "01_event_histograms"
out.mkdir(parents=True, exist_ok=True)

# A tiny hand-made stream: a bright edge sweeping right across a 16x16 sensor.
# Each column x fires 3 positive events as the edge arrives (t = 1000 * x)
# and one negative event shortly after it leaves.
xs, ys, ts, ps = [], [], [], []
for x in range(16):
    for y in range(4, 12):
        for k in range(3):
            xs.append(x), ys.append(y), ts.append(1000 * x + 10 * k), ps.append(1)
        xs.append(x), ys.append(y), ts.append(1000 * x + 500), ps.append(-1)
order = np.argsort(ts, kind="stable")
stream = EventStream(np.array(xs)[order], np.array(ys)[order], np.array(ts)[order],
                     np.array(ps)[order], sensor_size=(16, 16))
print(f"stream: {len(stream)} events over {stream.t.max() - stream.t.min()} microseconds")

# Difference encoding: B signed channels. Concatenation: positive and
# negative counts kept apart in 2B channels.
spec_diff = BinningSpec(5, "difference")
spec_cat = BinningSpec(5, "concatenation")
hist_diff = bin_window(stream, 0, 16_000, spec_diff)
hist_cat = bin_window(stream, 0, 16_000, spec_cat)
print(f"difference histogram {hist_diff.shape}, concatenation {hist_cat.shape}")
assert (difference_from_concat(hist_cat) == hist_diff).all()
print("difference == positive block - negative block, exactly")

fig, axes = plt.subplots(2, 5, figsize=(14, 6))
for b in range(5):
    axes[0, b].imshow(hist_diff[b], cmap="coolwarm", vmin=-3, vmax=3)
    axes[0, b].set_title(f"diff bin {b}")
    axes[1, b].imshow(hist_cat[b], cmap="Reds", vmin=0, vmax=3)
    axes[1, b].set_title(f"+ bin {b}")
for ax in axes.ravel():
    ax.axis("off")
fig.suptitle("sweeping edge: 5-bin histograms (top: difference, bottom: positive counts)")
fig.savefig(out / "histograms.png", dpi=110, bbox_inches="tight")
print(f"wrote {out / 'histograms.png'}")

# Per-frame clips and rebinning: slot 0 is all-zeros by construction so the
# event tensor aligns with the T video frames.
frame_ts = [0, 4000, 8000, 12_000, 16_000]
clip = build_clip(stream, frame_ts, spec_diff)
fine = rebin(stream, frame_ts, 2, spec_diff)
print(f"clip {clip.data.shape} -> rebin x2 {fine.data.shape}")
assert not clip.data[0].any()

# mass is conserved within each original interval
for i in range(1, len(frame_ts)):
    orig = clip.data[i].sum()
    split = fine.data[2 * i - 1 : 2 * i + 1].sum()
    print(f"interval {i}: original mass {orig}, rebinned mass {split}")
    assert orig == split
print("rebinning conserves per-interval event mass exactly")
