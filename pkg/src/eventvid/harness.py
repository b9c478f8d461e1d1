"""Training, generation, evaluation, and the ablation grid runner.

Every run directory is self-describing: a manifest lists the config, its
hash, and every file the run produced. Given (config, seed) all artifact
bytes are reproducible except for nothing at all -- manifests carry no
timestamps.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np
import torch

from . import config as cfgmod
from .backbone import VideoFlowTransformer, adapter_parameter_count, apply_lora
from .codec import decode, encode, encode_first_frame
from .config import ConfigError
from .data import (
    ClipDataset,
    SamplerSpec,
    augment_train,
    denormalize_frames,
    flip_clip_with_flow,
    list_windows,
    normalize_frames,
    preprocess_eval,
    standardize_events,
)
from .encoder import EventEncoder
from .flow import NumericalError, euler_sample, make_sample, rf_loss
from .metrics import MetricReport, score_sequence
from .recurrent import RecurrentReconstructor, tbptt_train_epoch
from .simulate import ambiguous_motion_sampler, make_dataset, varied_scene_sampler

METRICS = ("psnr", "ssim", "perceptual")


# ---- construction ----

def build_diffusion_models(cfg: dict):
    backbone = VideoFlowTransformer(cfgmod.backbone_config(cfg), cfgmod.codec_spec(cfg).latent_channels)
    apply_lora(backbone, cfgmod.lora_config(cfg))
    encoder = EventEncoder(cfgmod.encoder_config(cfg), cfgmod.codec_spec(cfg))
    return backbone, encoder


def diffusion_trainable_parameters(backbone, encoder, freeze_base: bool):
    if not freeze_base:
        return [p for p in list(backbone.parameters()) + list(encoder.parameters()) if p.requires_grad]
    params = list(encoder.parameters())
    for name, p in backbone.named_parameters():
        if "lora_" in name:
            params.append(p)
        else:
            p.requires_grad_(False)
    return params


# ---- checkpoints ----

def save_checkpoint(path: Path, cfg: dict, step: int, states: dict) -> Path:
    path = Path(path)
    payload = {
        "config": cfg,
        "step": step,
        "states": {k: v for k, v in states.items()},
        "torch_rng": torch.get_rng_state(),
    }
    torch.save(payload, path)
    manifest = {
        "config": cfg,
        "config_hash": cfgmod.config_hash(cfg),
        "step": step,
        "rng_state_sha": hashlib.sha256(bytes(torch.get_rng_state().tolist())).hexdigest()[:16],
        "archive": path.name,
    }
    manifest_path = path.with_suffix(".json")
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return path


def load_checkpoint(path: str | Path):
    """-> (cfg, models dict, step). Models are rebuilt from the stored config."""
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    cfg = payload["config"]
    cfgmod.validate(cfg)
    models: dict[str, torch.nn.Module] = {}
    if cfg["model"] == "diffusion":
        backbone, encoder = build_diffusion_models(cfg)
        backbone.load_state_dict(payload["states"]["backbone"])
        encoder.load_state_dict(payload["states"]["encoder"])
        models = {"backbone": backbone.eval(), "encoder": encoder.eval()}
    else:
        ar = RecurrentReconstructor(cfgmod.ar_config(cfg))
        ar.load_state_dict(payload["states"]["ar"])
        models = {"ar": ar.eval()}
    return cfg, models, payload["step"]


# ---- batch assembly ----

def _load_training_batch(dataset: ClipDataset, windows, picks, cfg: dict, rng: np.random.Generator,
                         clip_len: int):
    binning = cfgmod.binning_spec(cfg)
    aug = cfgmod.augment_spec(cfg)
    standardize = bool(cfg["data.normalize_events"])
    frames_list, events_list, flow_list = [], [], []
    ids = []
    for i in picks:
        clip_id, start = windows[i]
        frames01, hist, flow = dataset.window(clip_id, start, clip_len, binning)
        if cfg["aug.enabled"]:
            sample = augment_train(frames01, hist, aug, rng, standardize=standardize)
        else:
            sample = preprocess_eval(frames01, hist, aug.target, standardize=standardize)
        sample.id = (clip_id, start)
        frames_list.append(sample.frames)
        events_list.append(sample.events)
        flow_list.append(flow)
        ids.append((clip_id, start))
    return torch.stack(frames_list), torch.stack(events_list), torch.stack(flow_list), ids


# ---- diffusion training ----

def train_diffusion(cfg: dict, run_dir: str | Path) -> dict:
    cfgmod.validate(cfg)
    if cfg["model"] != "diffusion":
        raise ConfigError("train_diffusion requires model = diffusion")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    seed = int(cfg["train.seed"])
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    noise_gen = torch.Generator().manual_seed(seed + 1)

    dataset = ClipDataset(cfg["data.root"])
    windows = list_windows(dataset, cfgmod.train_sampler_spec(cfg))
    if not windows:
        raise ConfigError(f"no training windows of length {cfg['data.clip_len']} in {cfg['data.root']}")

    backbone, encoder = build_diffusion_models(cfg)
    params = diffusion_trainable_parameters(backbone, encoder, bool(cfg["train.freeze_base"]))
    opt = torch.optim.AdamW(params, lr=float(cfg["train.lr"]), weight_decay=0.0)
    codec = cfgmod.codec_spec(cfg)
    mode = "uni" if cfg["flow.conditioning"] == "uni" else "bi"

    steps = int(cfg["train.steps"])
    batch = int(cfg["train.batch"])
    ckpt_every = int(cfg["train.checkpoint_every"])
    losses: list[float] = []
    files = ["train_log.csv", "checkpoint.pt", "checkpoint.json", "manifest.json"]

    for step in range(steps):
        picks = rng.integers(0, len(windows), size=batch)
        frames, events, _, ids = _load_training_batch(dataset, windows, picks, cfg, rng,
                                                      int(cfg["data.clip_len"]))
        x0 = encode(frames, codec)
        injections = encoder(events)
        sample = make_sample(x0, noise_gen, mode)
        v = backbone(sample.x_sigma, sample.sigma, injections)
        loss = rf_loss(v, sample)
        if not torch.isfinite(loss):
            grad_norms = {n: float(p.grad.norm()) for n, p in backbone.named_parameters()
                          if p.grad is not None}
            raise NumericalError(
                f"non-finite loss at step {step}; batch {ids}; "
                f"last grad norms {dict(list(grad_norms.items())[:5])}"
            )
        opt.zero_grad()
        loss.backward()
        if cfg["train.grad_clip"]:
            torch.nn.utils.clip_grad_norm_(params, float(cfg["train.grad_clip"]))
        opt.step()
        losses.append(float(loss.detach()))
        if ckpt_every and (step + 1) % ckpt_every == 0 and step + 1 < steps:
            name = f"checkpoint_{step + 1:06d}.pt"
            save_checkpoint(run_dir / name, cfg, step + 1,
                            {"backbone": backbone.state_dict(), "encoder": encoder.state_dict()})
            files += [name, name.replace(".pt", ".json")]

    ckpt = save_checkpoint(run_dir / "checkpoint.pt", cfg, steps,
                           {"backbone": backbone.state_dict(), "encoder": encoder.state_dict()})
    with open(run_dir / "train_log.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "loss"])
        writer.writerows([i, f"{l:.6f}"] for i, l in enumerate(losses))
    tail = max(1, len(losses) // 10) if losses else 1
    summary = {
        "kind": "train-diffusion",
        "config": cfg,
        "config_hash": cfgmod.config_hash(cfg),
        "steps": steps,
        "final_loss": float(np.mean(losses[-tail:])) if losses else None,
        "first_loss": losses[0] if losses else None,
        "adapter_parameters": adapter_parameter_count(backbone),
        "event_channels": cfgmod.binning_spec(cfg).channels,
        "checkpoint": "checkpoint.pt",
        "files": files,
    }
    (run_dir / "manifest.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    summary["losses"] = losses
    summary["checkpoint_path"] = str(ckpt)
    return summary


# ---- autoregressive training ----

def train_ar(cfg: dict, run_dir: str | Path) -> dict:
    cfgmod.validate(cfg)
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg = dict(cfg)
    cfg["model"] = "ar"
    seed = int(cfg["train.seed"])
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)

    dataset = ClipDataset(cfg["data.root"])
    clip_len = int(cfg["ar.clip_len"])
    windows = list_windows(dataset, SamplerSpec(clip_len=clip_len, stride=int(cfg["data.stride"])))
    if not windows:
        raise ConfigError(f"no AR training windows of length {clip_len} in {cfg['data.root']}")

    model = RecurrentReconstructor(cfgmod.ar_config(cfg))
    opt = torch.optim.AdamW(model.parameters(), lr=float(cfg["ar.lr"]), weight_decay=0.0)
    curriculum = cfgmod.curriculum_spec(cfg)
    loss_spec = cfgmod.ar_loss_spec(cfg)
    binning = cfgmod.binning_spec(cfg)
    batch = int(cfg["ar.batch"])

    def epoch_batches():
        for _ in range(int(cfg["ar.steps_per_epoch"])):
            picks = rng.integers(0, len(windows), size=batch)
            frames_list, events_list, flow_list = [], [], []
            for i in picks:
                clip_id, start = windows[i]
                frames01, hist, flow = dataset.window(clip_id, start, clip_len, binning)
                frames01, hist, flow = flip_clip_with_flow(
                    frames01, hist, flow, rng,
                    hflip_prob=float(cfg["ar.hflip_prob"]),
                    vflip_prob=float(cfg["ar.vflip_prob"]),
                )
                frames_list.append(frames01)
                events_list.append(hist)
                flow_list.append(flow)
            yield torch.stack(frames_list), torch.stack(events_list), torch.stack(flow_list)

    losses = []
    for epoch in range(int(cfg["ar.epochs"])):
        stats = tbptt_train_epoch(model, epoch_batches(), opt, curriculum, loss_spec,
                                  epoch, grad_clip=float(cfg["train.grad_clip"]))
        if not np.isfinite(stats["loss"]):
            raise NumericalError(f"non-finite AR loss at epoch {epoch}")
        losses.extend(stats["losses"])

    ckpt = save_checkpoint(run_dir / "checkpoint.pt", cfg, len(losses), {"ar": model.state_dict()})
    with open(run_dir / "train_log.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "loss"])
        writer.writerows([i, f"{l:.6f}"] for i, l in enumerate(losses))
    tail = max(1, len(losses) // 10)
    summary = {
        "kind": "train-ar",
        "config": cfg,
        "config_hash": cfgmod.config_hash(cfg),
        "steps": len(losses),
        "final_loss": float(np.mean(losses[-tail:])),
        "beta_final": curriculum.beta(int(cfg["ar.epochs"]) - 1),
        "checkpoint": "checkpoint.pt",
        "files": ["train_log.csv", "checkpoint.pt", "checkpoint.json", "manifest.json"],
    }
    (run_dir / "manifest.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    summary["losses"] = losses
    summary["checkpoint_path"] = str(ckpt)
    return summary


# ---- generation ----

@torch.no_grad()
def generate_video(models: dict, cfg: dict, frames01: torch.Tensor, hist: torch.Tensor,
                   n_steps: int | None = None, seed: int = 0, zero_events: bool = False,
                   conditioning: str | None = None) -> torch.Tensor:
    """Reconstruct a [T, 3, H, W] clip from its first frame and events.

    `frames01` supplies the conditioning frame(s) and, for the recurrent
    model, nothing else; ground-truth frames beyond the conditioning set
    are never consulted. With `zero_events` the event histogram is replaced
    by zeros (conditioning ablation).
    """
    if zero_events:
        hist = torch.zeros_like(hist)
    if bool(cfg["data.normalize_events"]):
        hist = standardize_events(hist)
    if cfg["model"] == "ar":
        model = models["ar"]
        preds = model.rollout(frames01[None, 0], hist[None], beta=1.0)[0]
        return torch.cat([frames01[:1], preds], dim=0)

    backbone, encoder = models["backbone"], models["encoder"]
    codec = cfgmod.codec_spec(cfg)
    mode = conditioning or cfg["flow.conditioning"]
    spec = cfgmod.flow_sampler_spec(cfg, n_steps)
    spec = type(spec)(n_steps=spec.n_steps, conditioning_mode=mode)
    frames_norm = normalize_frames(frames01)
    t, _, h, w = frames_norm.shape
    t_lat, _, h_lat, w_lat = codec.latent_shape(t, h, w)
    first = encode_first_frame(frames_norm[None, 0], codec)
    last = None
    if mode == "bi":
        # the finest clamp the codec grid allows: the final latent step,
        # i.e. the last p_t ground-truth frames
        last = encode(frames_norm[None], codec)[:, -1:]
    injections = encoder(hist[None])
    latent = euler_sample(backbone, first, injections, spec,
                          torch.Generator().manual_seed(seed),
                          grid_shape=(t_lat, h_lat, w_lat), last_frame_latent=last)
    return denormalize_frames(decode(latent, codec))[0]


def static_copy_prediction(frames01: torch.Tensor) -> torch.Tensor:
    """Repeat the conditioning frame: the no-motion baseline."""
    return frames01[:1].expand_as(frames01).clone()


# ---- evaluation ----

def _markdown_table(rows: list[dict], columns: list[str]) -> str:
    lines = ["| " + " | ".join(columns) + " |", "|" + "|".join(["---"] * len(columns)) + "|"]
    for row in rows:
        lines.append("| " + " | ".join(str(row.get(c, "")) for c in columns) + " |")
    return "\n".join(lines) + "\n"


def evaluate_checkpoint(
    checkpoint: str | Path,
    out_dir: str | Path,
    data_root: str | Path | None = None,
    lengths: list[int] | None = None,
    stride: int | None = None,
    max_clips: int | None = None,
    seed: int = 0,
    include_baselines: bool = False,
    zero_events: bool = False,
    target_hw: int | None = None,
) -> dict:
    cfg, models, _ = load_checkpoint(checkpoint)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data_root = data_root or cfg["data.root"]
    lengths = lengths or [int(x) for x in cfg["eval.lengths"]]
    stride = int(stride if stride is not None else cfg["eval.stride"])
    max_clips = int(max_clips if max_clips is not None else cfg["eval.max_clips"])
    target = int(target_hw if target_hw is not None else cfg["data.target_hw"])
    dataset = ClipDataset(data_root)
    binning = cfgmod.binning_spec(cfg)
    n_eval_steps = int(cfg["eval.steps"])

    rows: list[dict] = []
    reports: dict[str, dict] = {}
    tag = {"model": cfg["model"], "dataset": str(data_root), "seed": seed}
    for length in lengths:
        spec = SamplerSpec(clip_len=int(length), stride=stride, mode="eval")
        windows = list_windows(dataset, spec)[:max_clips]
        if not windows:
            rows.append({**tag, "length": length, "metric": "warning", "value": "no clips fit"})
            continue
        model_reports = {m: MetricReport(m, config_hash=cfgmod.config_hash(cfg)) for m in METRICS}
        base_reports = {m: MetricReport(m, config_hash=cfgmod.config_hash(cfg)) for m in METRICS}
        for clip_id, start in windows:
            raw_frames, raw_hist, _ = dataset.window(clip_id, start, int(length), binning)
            pre = preprocess_eval(raw_frames, raw_hist, (target, target))
            frames01 = denormalize_frames(pre.frames)
            hist = pre.events
            pred = generate_video(models, cfg, frames01, hist, n_steps=n_eval_steps,
                                  seed=seed, zero_events=zero_events)
            scores = score_sequence(pred[1:], frames01[1:])
            for m in METRICS:
                model_reports[m].add_sequence(scores[m])
            if include_baselines:
                static = static_copy_prediction(frames01)
                s_scores = score_sequence(static[1:], frames01[1:])
                for m in METRICS:
                    base_reports[m].add_sequence(s_scores[m])
        for m in METRICS:
            rows.append({**tag, "length": length, "metric": m,
                         "value": round(model_reports[m].dataset, 4),
                         "n_sequences": len(windows)})
        reports[str(length)] = {m: model_reports[m].to_dict() for m in METRICS}
        if include_baselines:
            for m in METRICS:
                rows.append({**tag, "length": length, "metric": f"static_copy_{m}",
                             "value": round(base_reports[m].dataset, 4),
                             "n_sequences": len(windows)})
            reports[str(length)]["static_copy"] = {m: base_reports[m].to_dict() for m in METRICS}

    columns = ["model", "dataset", "seed", "length", "metric", "value", "n_sequences"]
    with open(out_dir / "report.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)
    (out_dir / "report.md").write_text(_markdown_table(rows, columns))
    (out_dir / "report.json").write_text(json.dumps(reports, sort_keys=True, indent=1) + "\n")
    manifest = {
        "kind": "evaluate",
        "checkpoint": str(checkpoint),
        "config_hash": cfgmod.config_hash(cfg),
        "data_root": str(data_root),
        "lengths": [int(x) for x in lengths],
        "stride": stride,
        "seed": seed,
        "zero_events": zero_events,
        "first_frame_excluded": True,
        "files": ["report.csv", "report.md", "report.json", "manifest.json"],
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return {"rows": rows, "reports": reports, "out_dir": str(out_dir)}


# ---- generation to disk ----

def generate_to_disk(checkpoint: str | Path, data_root: str | Path | None, clip_id: str,
                     out_dir: str | Path, start: int = 0, length: int | None = None,
                     n_steps: int | None = None, seed: int = 0,
                     conditioning: str | None = None) -> dict:
    from PIL import Image

    cfg, models, _ = load_checkpoint(checkpoint)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = ClipDataset(data_root or cfg["data.root"])
    length = int(length if length is not None else cfg["data.clip_len"])
    codec = cfgmod.codec_spec(cfg)
    if cfg["model"] == "diffusion" and (length - 1) % codec.p_t:
        lo = (length - 1) // codec.p_t * codec.p_t + 1
        raise ConfigError(
            f"length {length} incompatible with codec p_t={codec.p_t}; "
            f"nearest legal lengths are {lo} and {lo + codec.p_t}"
        )
    frames01, hist, _ = dataset.window(clip_id, start, length, cfgmod.binning_spec(cfg))
    pred = generate_video(models, cfg, frames01, hist, n_steps=n_steps, seed=seed,
                          conditioning=conditioning)
    arr = (pred.numpy() * 255).round().astype(np.uint8)
    files = []
    for t in range(arr.shape[0]):
        name = f"frame_{t:04d}.png"
        Image.fromarray(arr[t].transpose(1, 2, 0)).save(out_dir / name)
        files.append(name)
    raw = pred.numpy().astype(np.float32)
    (out_dir / "frames.bin").write_bytes(raw.tobytes())
    manifest = {
        "kind": "generate",
        "checkpoint": str(checkpoint),
        "config_hash": cfgmod.config_hash(cfg),
        "clip_id": clip_id,
        "start": start,
        "length": length,
        "steps": int(n_steps if n_steps is not None else cfg["eval.steps"]),
        "seed": seed,
        "conditioning": conditioning or cfg["flow.conditioning"],
        "event_file": str(Path(data_root or cfg["data.root"]) / clip_id / "events.evt1"),
        "frames": {"file": "frames.bin", "shape": list(raw.shape), "dtype": "<f4"},
        "files": files + ["frames.bin", "manifest.json"],
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return manifest


# ---- ablation grid ----

def ablation_cells(cfg: dict) -> list[tuple[str, str, dict]]:
    """(cell name, axis, overrides); one-at-a-time around the default cell."""
    cells: list[tuple[str, str, dict]] = [("default", "default", {})]
    for v in ("first", "middle", "last"):
        cells.append((f"inj_{v}", "injection_set", {"enc.injection_set": v}))
    for v in (1, 5, 10):
        if v != cfg["binning.n_bins"]:
            cells.append((f"bins_{v}", "n_bins", {"binning.n_bins": v}))
    if cfg["binning.polarity"] != "concatenation":
        cells.append(("pol_concat", "polarity", {"binning.polarity": "concatenation"}))
    for v in (0, 8, 32, 128):
        if v != cfg["lora.rank"]:
            cells.append((f"rank_{v}", "lora_rank", {"lora.rank": v}))
    if cfg["flow.conditioning"] != "bi":
        cells.append(("cond_bi", "conditioning", {"flow.conditioning": "bi"}))
    cells.append(("res_2x", "resolution", {}))
    return cells


def run_ablation(base_cfg: dict, out_dir: str | Path, eval_root_2x: str | Path | None = None) -> dict:
    cfgmod.validate(base_cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if eval_root_2x is None:
        eval_root_2x = out_dir / "data_2x"
        if not (Path(eval_root_2x) / "dataset.json").exists():
            hw2 = int(base_cfg["data.target_hw"]) * 2
            make_dataset(int(base_cfg["ablate.eval_clips"]),
                         ambiguous_motion_sampler(n_frames=int(base_cfg["ablate.eval_length"]),
                                                  canvas=hw2, speed=3.6),
                         seed=int(base_cfg["train.seed"]) + 9999, out_dir=eval_root_2x)

    results: list[dict] = []
    for name, axis, overrides in ablation_cells(base_cfg):
        cell_dir = out_dir / name
        row = {"cell": name, "axis": axis, "status": "ok"}
        try:
            cfg = dict(base_cfg)
            cfg.update(overrides)
            cfg["train.steps"] = int(base_cfg["ablate.steps"])
            cfg["eval.max_clips"] = int(base_cfg["ablate.eval_clips"])
            cfgmod.validate(cfg)
            summary = train_diffusion(cfg, cell_dir)
            is_2x = name == "res_2x"
            length = int(base_cfg["ablate.eval_length"])
            report = evaluate_checkpoint(cell_dir / "checkpoint.pt", cell_dir / "eval",
                                         data_root=eval_root_2x if is_2x else None,
                                         lengths=[length],
                                         stride=int(cfg["eval.stride"]),
                                         max_clips=int(cfg["eval.max_clips"]),
                                         seed=int(cfg["train.seed"]),
                                         target_hw=int(cfg["data.target_hw"]) * 2 if is_2x else None)
            row.update({
                "final_loss": round(summary["final_loss"], 5),
                "adapter_params": summary["adapter_parameters"],
                "event_channels": summary["event_channels"],
            })
            for r in report["rows"]:
                if r["metric"] in METRICS:
                    row[r["metric"]] = r["value"]
            cell_manifest = {
                "cell": name,
                "axis": axis,
                "overrides": overrides,
                "config_hash": cfgmod.config_hash(cfg),
                "row": {k: v for k, v in row.items()},
                "files": ["manifest.json", "cell.json"],
            }
            (cell_dir / "cell.json").write_text(json.dumps(cell_manifest, sort_keys=True, indent=1) + "\n")
        except Exception as exc:  # cell isolation: record and continue
            row.update({"status": "failed", "error": f"{type(exc).__name__}: {exc}"})
            cell_dir.mkdir(parents=True, exist_ok=True)
            (cell_dir / "cell.json").write_text(json.dumps(row, sort_keys=True, indent=1) + "\n")
        results.append(row)

    columns = ["cell", "axis", "status", "final_loss", "psnr", "ssim", "perceptual",
               "adapter_params", "event_channels", "error"]
    with open(out_dir / "ablation.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns)
        writer.writeheader()
        writer.writerows(results)
    (out_dir / "ablation.md").write_text(_markdown_table(results, columns))
    manifest = {
        "kind": "ablate",
        "config_hash": cfgmod.config_hash(base_cfg),
        "cells": [r["cell"] for r in results],
        "files": ["ablation.csv", "ablation.md", "manifest.json"],
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return {"rows": results, "out_dir": str(out_dir)}


# ---- dataset generation entry point ----

def simulate_dataset(out_dir: str | Path, n_clips: int, seed: int, sampler: str = "default",
                     n_frames: int = 9, canvas: int = 32, speed: float = 1.8,
                     theta: float = 0.2, textured: bool = False) -> dict:
    if sampler == "default":
        fn = varied_scene_sampler(n_frames=n_frames, canvas=canvas)
    elif sampler == "ambiguous":
        fn = ambiguous_motion_sampler(n_frames=n_frames, canvas=canvas, speed=speed,
                                      textured_background=textured)
    else:
        raise ConfigError(f"unknown sampler {sampler!r} (default | ambiguous)")
    return make_dataset(n_clips, fn, seed, out_dir, contrast_threshold=theta)
