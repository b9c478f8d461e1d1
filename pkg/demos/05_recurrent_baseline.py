#!/usr/bin/env python3
"""Train the ConvLSTM autoregressive baseline with its teacher-forcing
curriculum and TBPTT schedule, then roll it out fully autoregressively.

Writes to runs/demos/05_recurrent_baseline/.
"""

import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from eventvid import config as cfgmod
from eventvid.data import ClipDataset
from eventvid.harness import load_checkpoint, simulate_dataset, train_ar
from eventvid.metrics import psnr

out = Path(os.environ.get("EVENTVID_RUNS", "runs")) / "demos" / "05_recurrent_baseline"
out.mkdir(parents=True, exist_ok=True)

print("== simulate: 17-frame clips (the recurrent trainer needs >= loss_every steps)")
simulate_dataset(out / "train_data", 24, seed=31, sampler="ambiguous", n_frames=17, speed=2.5)
simulate_dataset(out / "eval_data", 2, seed=32, sampler="ambiguous", n_frames=9, speed=2.5)

cfg = cfgmod.default_config()
cfg["data.root"] = str(out / "train_data")
cfg["ar.epochs"] = int(os.environ.get("EVENTVID_DEMO_EPOCHS", "8"))
cfg["ar.steps_per_epoch"] = 8
cfg["ar.batch"] = 4

print(f"== train {cfg['ar.epochs']} epochs "
      f"(teacher forcing anneals over the first {cfg['ar.anneal_fraction']:.0%})")
summary = train_ar(cfg, out / "run")
print(f"loss: {summary['losses'][0]:.3f} -> {summary['final_loss']:.3f}; "
      f"final beta {summary['beta_final']}")

cfg_ck, models, _ = load_checkpoint(out / "run" / "checkpoint.pt")
dataset = ClipDataset(out / "eval_data")
frames01, hist, _ = dataset.window("clip_00000", 0, 9, cfgmod.binning_spec(cfg_ck))
preds = models["ar"].rollout(frames01[None, 0], hist[None], beta=1.0)[0]
print(f"autoregressive rollout PSNR vs ground truth: "
      f"{psnr(preds, frames01[1:]):.2f} dB")

fig, axes = plt.subplots(2, 8, figsize=(15, 4))
for t in range(8):
    axes[0, t].imshow(frames01[t + 1].permute(1, 2, 0).numpy())
    axes[1, t].imshow(preds[t].detach().permute(1, 2, 0).numpy())
    axes[0, t].axis("off"), axes[1, t].axis("off")
axes[0, 0].set_title("ground truth")
axes[1, 0].set_title("rollout")
fig.savefig(out / "rollout.png", dpi=110, bbox_inches="tight")
print(f"wrote {out / 'rollout.png'}")
