"""Flat key-value experiment configuration.

Configs are plain text, one `dotted.key = value` per line (values in JSON
syntax), with an explicit schema version; nothing in a config file
executes. The same flat mapping drives both model families, hashes into
the run manifests, and expands into the per-module config objects.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .backbone import BackboneConfig, LoRAConfig
from .codec import CodecSpec
from .data import AugmentSpec, SamplerSpec
from .encoder import EncoderConfig
from .events import BinningSpec
from .flow import SamplerSpec as FlowSamplerSpec
from .recurrent import ARConfig, ARLossSpec, CurriculumSpec

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid, unknown, or inconsistent configuration."""


DEFAULTS: dict[str, object] = {
    "schema": SCHEMA_VERSION,
    "model": "diffusion",  # diffusion | ar
    # data
    "data.root": "runs/data",
    "data.clip_len": 9,
    "data.stride": 1,
    "data.target_hw": 32,
    "data.normalize_events": False,
    # augmentation (training only)
    "aug.enabled": True,
    "aug.hflip_prob": 0.5,
    "aug.vflip_prob": 0.0,
    "aug.rrc_scale": [0.2, 1.0],
    # event binning
    "binning.n_bins": 5,
    "binning.polarity": "difference",
    # latent codec
    "codec.p_s": 8,
    "codec.p_t": 4,
    # transformer backbone
    "backbone.depth": 4,
    "backbone.hidden": 128,
    "backbone.heads": 4,
    "backbone.mlp_ratio": 4.0,
    "backbone.prediction": "content_residual",
    "backbone.sigma_floor": 0.05,
    # low-rank adapters
    "lora.rank": 8,
    "lora.alpha": 16.0,
    "lora.targets": ["attn_qkv", "attn_out", "mlp_in", "mlp_out"],
    # event encoder
    "enc.stem_channels": 16,
    "enc.channel_schedule": [16, 32, 64],
    "enc.spatial_strides": [2, 2, 2],
    "enc.temporal_strides": [1, 2, 2],
    "enc.spatial_patch": 1,
    "enc.injection_set": "all",  # all | first | middle | last | explicit "1,3"
    # flow objective / sampler
    "flow.conditioning": "uni",  # uni | bi
    # diffusion training
    "train.steps": 800,
    "train.batch": 8,
    "train.lr": 3e-4,
    "train.seed": 0,
    "train.grad_clip": 1.0,
    "train.freeze_base": False,
    "train.checkpoint_every": 0,  # 0 = final only
    # autoregressive training
    "ar.stages": 3,
    "ar.base_channels": 32,
    "ar.channel_mult": 2,
    "ar.convlstm_kernel": 5,
    "ar.residual_blocks_per_level": 2,
    "ar.dynamic_decoder": True,
    "ar.clip_len": 17,
    "ar.epochs": 12,
    "ar.steps_per_epoch": 16,
    "ar.batch": 4,
    "ar.lr": 1e-4,
    "ar.anneal_fraction": 0.25,
    "ar.truncation": 5,
    "ar.loss_every": 10,
    "ar.perceptual_weight": 1.0,
    "ar.flow_weight": 1.0,
    # the recurrent recipe also flips vertically; flow flips alongside
    "ar.hflip_prob": 0.5,
    "ar.vflip_prob": 0.5,
    # evaluation protocol
    "eval.lengths": [9, 17, 33],
    "eval.steps": 50,
    "eval.stride": 16,
    "eval.max_clips": 16,
    # ablation runner
    "ablate.steps": 150,
    "ablate.eval_clips": 4,
    "ablate.eval_length": 9,
}


def default_config() -> dict:
    return {k: (list(v) if isinstance(v, list) else v) for k, v in DEFAULTS.items()}


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def loads_config(text: str) -> dict:
    cfg = default_config()
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        seen[key] = parse_value(value)
    cfg.update(seen)
    if cfg["schema"] != SCHEMA_VERSION:
        raise ConfigError(f"schema {cfg['schema']} unsupported (expected {SCHEMA_VERSION})")
    validate(cfg)
    return cfg


def load_config(path: str | Path) -> dict:
    return loads_config(Path(path).read_text())


def apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    cfg = dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must be key=value")
        key, value = (part.strip() for part in item.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = parse_value(value)
    validate(cfg)
    return cfg


def dumps_config(cfg: dict) -> str:
    lines = [f"{key} = {json.dumps(cfg[key])}" for key in sorted(cfg)]
    return "\n".join(lines) + "\n"


def write_config(cfg: dict, path: str | Path) -> None:
    Path(path).write_text(dumps_config(cfg))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(dumps_config(cfg).encode()).hexdigest()[:16]


def injection_set(cfg: dict) -> frozenset[int]:
    depth = int(cfg["backbone.depth"])
    raw = cfg["enc.injection_set"]
    if raw == "all":
        return frozenset(range(1, depth + 1))
    named = {"first": 1, "middle": (depth + 1) // 2, "last": depth}
    if raw in named:
        return frozenset({named[raw]})
    try:
        ids = frozenset(int(x) for x in str(raw).split(","))
    except ValueError as exc:
        raise ConfigError(f"bad enc.injection_set {raw!r}") from exc
    return ids


def validate(cfg: dict) -> None:
    if cfg["model"] not in ("diffusion", "ar"):
        raise ConfigError(f"model must be diffusion or ar, got {cfg['model']!r}")
    if cfg["binning.polarity"] not in ("difference", "concatenation"):
        raise ConfigError("binning.polarity must be difference or concatenation")
    if cfg["flow.conditioning"] not in ("uni", "bi"):
        raise ConfigError("flow.conditioning must be uni or bi")
    spatial = int(cfg["enc.spatial_patch"])
    for s in cfg["enc.spatial_strides"]:
        spatial *= int(s)
    temporal = 1
    for s in cfg["enc.temporal_strides"]:
        temporal *= int(s)
    if spatial != int(cfg["codec.p_s"]) or temporal != int(cfg["codec.p_t"]):
        raise ConfigError(
            f"encoder grid ({spatial}x spatial, {temporal}x temporal) does not "
            f"match codec (p_s={cfg['codec.p_s']}, p_t={cfg['codec.p_t']})"
        )
    if (int(cfg["data.clip_len"]) - 1) % int(cfg["codec.p_t"]):
        raise ConfigError("data.clip_len - 1 must be divisible by codec.p_t")
    if int(cfg["data.target_hw"]) % int(cfg["codec.p_s"]):
        raise ConfigError("data.target_hw must be divisible by codec.p_s")
    if int(cfg["backbone.hidden"]) % int(cfg["backbone.heads"]):
        raise ConfigError("backbone.hidden must be divisible by backbone.heads")
    bad = injection_set(cfg) - set(range(1, int(cfg["backbone.depth"]) + 1))
    if bad:
        raise ConfigError(f"enc.injection_set entries {sorted(bad)} exceed backbone depth")
    for length in cfg["eval.lengths"]:
        if (int(length) - 1) % int(cfg["codec.p_t"]):
            raise ConfigError(f"eval length {length} incompatible with codec.p_t")


# ---- expansion into module configs ----

def binning_spec(cfg: dict) -> BinningSpec:
    return BinningSpec(int(cfg["binning.n_bins"]), cfg["binning.polarity"])


def codec_spec(cfg: dict) -> CodecSpec:
    return CodecSpec(p_s=int(cfg["codec.p_s"]), p_t=int(cfg["codec.p_t"]))


def backbone_config(cfg: dict) -> BackboneConfig:
    return BackboneConfig(
        depth=int(cfg["backbone.depth"]),
        hidden=int(cfg["backbone.hidden"]),
        heads=int(cfg["backbone.heads"]),
        mlp_ratio=float(cfg["backbone.mlp_ratio"]),
        prediction=str(cfg["backbone.prediction"]),
        sigma_floor=float(cfg["backbone.sigma_floor"]),
    )


def lora_config(cfg: dict) -> LoRAConfig:
    return LoRAConfig(
        rank=int(cfg["lora.rank"]),
        alpha=float(cfg["lora.alpha"]),
        targets=tuple(cfg["lora.targets"]),
    )


def encoder_config(cfg: dict) -> EncoderConfig:
    return EncoderConfig(
        in_channels=binning_spec(cfg).channels,
        spatial_patch=int(cfg["enc.spatial_patch"]),
        stem_channels=int(cfg["enc.stem_channels"]),
        channel_schedule=tuple(int(c) for c in cfg["enc.channel_schedule"]),
        spatial_strides=tuple(int(s) for s in cfg["enc.spatial_strides"]),
        temporal_strides=tuple(int(s) for s in cfg["enc.temporal_strides"]),
        n_mid=int(cfg["backbone.depth"]),
        target_hidden=int(cfg["backbone.hidden"]),
        injection_set=injection_set(cfg),
    )


def augment_spec(cfg: dict) -> AugmentSpec:
    hw = int(cfg["data.target_hw"])
    return AugmentSpec(
        hflip_prob=float(cfg["aug.hflip_prob"]),
        vflip_prob=float(cfg["aug.vflip_prob"]),
        rrc_scale=tuple(float(x) for x in cfg["aug.rrc_scale"]),
        target=(hw, hw),
    )


def train_sampler_spec(cfg: dict) -> SamplerSpec:
    return SamplerSpec(clip_len=int(cfg["data.clip_len"]), stride=int(cfg["data.stride"]),
                       drop_incomplete=True, mode="train")


def flow_sampler_spec(cfg: dict, n_steps: int | None = None) -> FlowSamplerSpec:
    return FlowSamplerSpec(
        n_steps=int(n_steps if n_steps is not None else cfg["eval.steps"]),
        conditioning_mode=cfg["flow.conditioning"],
    )


def ar_config(cfg: dict) -> ARConfig:
    return ARConfig(
        stages=int(cfg["ar.stages"]),
        base_channels=int(cfg["ar.base_channels"]),
        channel_mult=int(cfg["ar.channel_mult"]),
        convlstm_kernel=int(cfg["ar.convlstm_kernel"]),
        residual_blocks_per_level=int(cfg["ar.residual_blocks_per_level"]),
        dynamic_decoder=bool(cfg["ar.dynamic_decoder"]),
        event_channels=binning_spec(cfg).channels,
    )


def curriculum_spec(cfg: dict) -> CurriculumSpec:
    return CurriculumSpec(
        total_epochs=int(cfg["ar.epochs"]),
        anneal_fraction=float(cfg["ar.anneal_fraction"]),
        truncation=int(cfg["ar.truncation"]),
        loss_every=int(cfg["ar.loss_every"]),
    )


def ar_loss_spec(cfg: dict) -> ARLossSpec:
    return ARLossSpec(
        perceptual_weight=float(cfg["ar.perceptual_weight"]),
        flow_weight=float(cfg["ar.flow_weight"]),
    )
