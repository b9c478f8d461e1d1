"""Command-line entry points.

Verbs: simulate-data, bin-events, train, train-ar, generate, evaluate,
ablate. Exit codes: 0 ok, 2 configuration error, 3 numerical failure.
The default output root is `runs/`, overridable via $EVENTVID_RUNS.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ConfigError
from .events import BinningSpec, build_clip, read_events, read_timestamps
from .flow import NumericalError
from .harness import (
    evaluate_checkpoint,
    generate_to_disk,
    run_ablation,
    simulate_dataset,
    train_ar,
    train_diffusion,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _out_root() -> Path:
    return Path(os.environ.get("EVENTVID_RUNS", "runs"))


def _load_cfg(args) -> dict:
    cfg = cfgmod.load_config(args.config) if args.config else cfgmod.default_config()
    return cfgmod.apply_overrides(cfg, args.set or [])


def _add_config_args(p):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--out", help="run directory (default under $EVENTVID_RUNS)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eventvid",
                                     description="Event-conditioned video reconstruction toolkit")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("simulate-data", help="generate a synthetic event/video dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--clips", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sampler", default="default", choices=["default", "ambiguous"])
    p.add_argument("--frames", type=int, default=9)
    p.add_argument("--canvas", type=int, default=32)
    p.add_argument("--speed", type=float, default=1.8)
    p.add_argument("--theta", type=float, default=0.2)
    p.add_argument("--textured", action="store_true",
                   help="per-clip random static background texture")

    p = sub.add_parser("bin-events", help="bin an event file into a histogram clip")
    p.add_argument("--events", required=True, help="EVT1 event file")
    p.add_argument("--timestamps", required=True, help="JSON sidecar with frame_timestamps")
    p.add_argument("--bins", type=int, default=5)
    p.add_argument("--mode", default="difference", choices=["difference", "concatenation"])
    p.add_argument("--out", required=True, help="output .npz")

    p = sub.add_parser("train", help="train the event-conditioned generative model")
    _add_config_args(p)

    p = sub.add_parser("train-ar", help="train the recurrent baseline")
    _add_config_args(p)

    for verb, blurb in (("generate", "reconstruct a clip from a checkpoint"),
                        ("rollout-ar", "reconstruct a clip with a recurrent checkpoint")):
        p = sub.add_parser(verb, help=blurb)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", help="dataset root (default: the checkpoint's data.root)")
        p.add_argument("--clip", required=True, help="clip id, e.g. clip_00000")
        p.add_argument("--start", type=int, default=0)
        p.add_argument("--length", type=int)
        p.add_argument("--steps", type=int)
        p.add_argument("--conditioning", choices=["uni", "bi"])
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out")

    p = sub.add_parser("evaluate", help="run the metric protocol over a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--lengths", help="comma-separated clip lengths")
    p.add_argument("--stride", type=int)
    p.add_argument("--max-clips", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--baselines", action="store_true", help="also score the static-copy baseline")
    p.add_argument("--zero-events", action="store_true", help="replace event input with zeros")
    p.add_argument("--out")

    p = sub.add_parser("ablate", help="run the ablation grid")
    _add_config_args(p)
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verb == "simulate-data":
        out = simulate_dataset(args.out, args.clips, args.seed, sampler=args.sampler,
                               n_frames=args.frames, canvas=args.canvas, speed=args.speed,
                               theta=args.theta, textured=args.textured)
        print(f"wrote {out['n_clips']} clips to {args.out}")
    elif args.verb == "bin-events":
        stream = read_events(args.events)
        ts = read_timestamps(args.timestamps)
        clip = build_clip(stream, ts, BinningSpec(args.bins, args.mode))
        np.savez(args.out, data=clip.data, frame_timestamps=clip.frame_timestamps,
                 n_bins=args.bins, polarity_mode=args.mode)
        print(f"binned {len(stream)} events into {clip.data.shape} -> {args.out}")
    elif args.verb == "train":
        cfg = _load_cfg(args)
        run_dir = Path(args.out) if args.out else _out_root() / "train"
        summary = train_diffusion(cfg, run_dir)
        print(f"trained {summary['steps']} steps; final loss {summary['final_loss']:.4f}; "
              f"checkpoint {summary['checkpoint_path']}")
    elif args.verb == "train-ar":
        cfg = _load_cfg(args)
        run_dir = Path(args.out) if args.out else _out_root() / "train_ar"
        summary = train_ar(cfg, run_dir)
        print(f"trained {summary['steps']} sequences; final loss {summary['final_loss']:.4f}; "
              f"checkpoint {summary['checkpoint_path']}")
    elif args.verb in ("generate", "rollout-ar"):
        out_dir = Path(args.out) if args.out else _out_root() / args.verb.replace("-", "_")
        manifest = generate_to_disk(args.checkpoint, args.data, args.clip, out_dir,
                                    start=args.start, length=args.length, n_steps=args.steps,
                                    seed=args.seed, conditioning=args.conditioning)
        print(f"wrote {manifest['length']} frames to {out_dir}")
    elif args.verb == "evaluate":
        out_dir = Path(args.out) if args.out else _out_root() / "evaluate"
        lengths = [int(x) for x in args.lengths.split(",")] if args.lengths else None
        result = evaluate_checkpoint(args.checkpoint, out_dir, data_root=args.data,
                                     lengths=lengths, stride=args.stride,
                                     max_clips=args.max_clips, seed=args.seed,
                                     include_baselines=args.baselines,
                                     zero_events=args.zero_events)
        print((Path(result["out_dir"]) / "report.md").read_text())
    elif args.verb == "ablate":
        cfg = _load_cfg(args)
        out_dir = Path(args.out) if args.out else _out_root() / "ablate"
        result = run_ablation(cfg, out_dir)
        failed = [r["cell"] for r in result["rows"] if r["status"] != "ok"]
        print((Path(result["out_dir"]) / "ablation.md").read_text())
        if failed:
            print(f"failed cells: {failed}", file=sys.stderr)
    return EXIT_OK


def main(argv=None) -> int:
    try:
        code = run(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return code


if __name__ == "__main__":
    sys.exit(main())
