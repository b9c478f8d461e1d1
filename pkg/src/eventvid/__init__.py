"""Event-camera conditioned video reconstruction toolkit.

Submodules:
  events     event data model, temporal histogram binning, EVT1 file io
  simulate   synthetic scenes and the contrast-threshold sensor model
  data       dataset loading, clip sampling, paired augmentation
  codec      exactly invertible video <-> latent transform
  backbone   video flow transformer with rotary positions and LoRA
  encoder    event encoder producing per-block injection tensors
  flow       flow-matching objective and the Euler sampler
  recurrent  ConvLSTM autoregressive baseline with TBPTT training
  metrics    PSNR / SSIM / pluggable perceptual distance and reports
  config     flat dotted-key experiment configuration
  harness    training loops, evaluation protocol, ablation grid
  cli        command-line verbs
"""

__version__ = "0.1.0"

from . import backbone, cli, codec, config, data, encoder, events, flow, harness, metrics, recurrent, simulate
from .backbone import BackboneConfig, LoRAConfig, VideoFlowTransformer, apply_lora
from .codec import CodecSpec
from .data import AugmentSpec, ClipDataset, ClipSample, SamplerSpec, augment_train, enumerate_clips, preprocess_eval
from .encoder import EncoderConfig, EventEncoder
from .events import BinningSpec, Event, EventHistogramClip, EventStream, bin_window, build_clip, rebin
from .flow import FlowSample, euler_sample, make_sample, rf_loss
from .metrics import MetricReport, perceptual, psnr, ssim
from .recurrent import ARConfig, CurriculumSpec, RecurrentReconstructor
from .simulate import SceneSpec, Sprite, make_dataset, render, simulate_events
