"""Recurrent autoregressive reconstructor and its training schedule.

A U-Net with per-level ConvLSTM state consumes the previous RGB frame
(ground truth, prediction, or a curriculum mixture of both) together with
the current event histogram and emits the next frame in [0, 1]. The
optional dynamic decoder generates the final convolution's weights per
sample from pooled context features. Training uses truncated
backpropagation through time: recurrent state (and the fed-back frame)
detaches from the graph every `truncation` steps, and accumulated losses
backpropagate every `loss_every` steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .metrics import pyramid_l1


@dataclass(frozen=True)
class ARConfig:
    stages: int = 3
    base_channels: int = 32
    channel_mult: int = 2
    convlstm_kernel: int = 5
    residual_blocks_per_level: int = 2
    dynamic_decoder: bool = True
    event_channels: int = 5
    out_channels: int = 3

    def stage_channels(self) -> list[int]:
        return [self.base_channels * self.channel_mult**i for i in range(self.stages)]


@dataclass(frozen=True)
class CurriculumSpec:
    total_epochs: int = 40
    anneal_fraction: float = 0.25
    truncation: int = 5
    loss_every: int = 10

    def __post_init__(self):
        if not 0 < self.anneal_fraction <= 1:
            raise ValueError("anneal_fraction must be in (0, 1]")
        if self.truncation < 1 or self.loss_every < 1:
            raise ValueError("truncation and loss_every must be >= 1")

    def beta(self, epoch: int) -> float:
        """Teacher-forcing mixture weight: 0 at epoch 0, 1 after the anneal window."""
        anneal_end = self.anneal_fraction * self.total_epochs
        return min(1.0, epoch / anneal_end)


@dataclass(frozen=True)
class ARLossSpec:
    perceptual_weight: float = 1.0
    flow_weight: float = 1.0
    flow_source: str = "ground_truth"  # or "external_oracle"

    def __post_init__(self):
        if self.perceptual_weight < 0 or self.flow_weight < 0:
            raise ValueError("loss weights must be >= 0")


class ConvLSTMCell(nn.Module):
    def __init__(self, channels: int, kernel: int = 5):
        super().__init__()
        self.channels = channels
        self.gates = nn.Conv2d(2 * channels, 4 * channels, kernel, padding=kernel // 2)

    def forward(self, x, state):
        if state is None:
            h = torch.zeros_like(x)
            c = torch.zeros_like(x)
        else:
            h, c = state
        i, f, o, g = self.gates(torch.cat([x, h], dim=1)).chunk(4, dim=1)
        c = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h = torch.sigmoid(o) * torch.tanh(c)
        return h, (h, c)


class ResBlock2d(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        h = self.conv2(F.relu(self.conv1(F.relu(x))))
        return x + h


class RecurrentReconstructor(nn.Module):
    """(previous frame, event frame, state) -> (next frame, state)."""

    def __init__(self, cfg: ARConfig = ARConfig()):
        super().__init__()
        self.cfg = cfg
        chans = cfg.stage_channels()
        self.head = nn.Conv2d(cfg.out_channels + cfg.event_channels, cfg.base_channels, 3, padding=1)
        enc_convs, lstms = [], []
        c_prev = cfg.base_channels
        for c in chans:
            enc_convs.append(nn.Conv2d(c_prev, c, 3, stride=2, padding=1))
            lstms.append(ConvLSTMCell(c, cfg.convlstm_kernel))
            c_prev = c
        self.enc_convs = nn.ModuleList(enc_convs)
        self.lstms = nn.ModuleList(lstms)

        dec_convs, dec_res = [], []
        skips = [cfg.base_channels] + chans[:-1]
        for c_skip in reversed(skips):
            dec_convs.append(nn.Conv2d(c_prev, c_skip, 3, padding=1))
            dec_res.append(nn.Sequential(*[ResBlock2d(c_skip) for _ in range(cfg.residual_blocks_per_level)]))
            c_prev = c_skip
        self.dec_convs = nn.ModuleList(dec_convs)
        self.dec_res = nn.ModuleList(dec_res)

        if cfg.dynamic_decoder:
            n_w = cfg.out_channels * cfg.base_channels * 9
            self.hyper = nn.Sequential(
                nn.Linear(cfg.base_channels, 64), nn.ReLU(),
                nn.Linear(64, n_w + cfg.out_channels),
            )
            # small init keeps generated filters near zero at the start
            nn.init.normal_(self.hyper[-1].weight, std=1e-3)
            nn.init.zeros_(self.hyper[-1].bias)
        else:
            self.final = nn.Conv2d(cfg.base_channels, cfg.out_channels, 3, padding=1)

    def _dynamic_final(self, x: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        """Per-sample 3x3 convolution with hypernetwork-generated weights."""
        b, c, h, w = x.shape
        out_c = self.cfg.out_channels
        params = self.hyper(context.mean(dim=(2, 3)))
        weights = params[:, : out_c * c * 9].reshape(b * out_c, c, 3, 3)
        bias = params[:, out_c * c * 9 :].reshape(b * out_c)
        y = F.conv2d(x.reshape(1, b * c, h, w), weights, bias, padding=1, groups=b)
        return y.reshape(b, out_c, h, w)

    def step(self, prev_frame: torch.Tensor, event_frame: torch.Tensor, state=None):
        """One autoregressive step; returns (next frame in [0,1], new state)."""
        h, w = prev_frame.shape[-2:]
        down = 2**self.cfg.stages
        if h % down or w % down:
            raise ValueError(f"resolution {h}x{w} not divisible by 2^{self.cfg.stages}")
        if state is None:
            state = [None] * self.cfg.stages
        fused = F.relu(self.head(torch.cat([prev_frame, event_frame], dim=1)))
        skips = [fused]
        x = fused
        new_state = []
        for conv, lstm, st in zip(self.enc_convs, self.lstms, state):
            x = F.relu(conv(x))
            x, st_new = lstm(x, st)
            new_state.append(st_new)
            skips.append(x)
        skips.pop()  # the bottleneck is not its own skip
        for conv, res in zip(self.dec_convs, self.dec_res):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = F.relu(conv(x))
            x = x + skips.pop()
            x = res(x)
        if self.cfg.dynamic_decoder:
            logits = self._dynamic_final(x, fused)
        else:
            logits = self.final(x)
        return torch.sigmoid(logits), new_state

    def rollout(
        self,
        first_frame: torch.Tensor,
        event_clip: torch.Tensor,
        beta: float = 1.0,
        teacher: torch.Tensor | None = None,
        state=None,
        return_state: bool = False,
    ):
        """Generate frames 1..T-1 from the first frame and the event clip.

        The input at step t is beta * prediction_{t-1} + (1-beta) * teacher
        frame t-1; beta = 1 is fully autoregressive and needs no teacher.
        """
        if not 0 <= beta <= 1:
            raise ValueError("beta must lie in [0, 1]")
        if beta < 1 and teacher is None:
            raise ValueError("teacher frames are required when beta < 1")
        t_total = event_clip.shape[1]
        prev_pred = first_frame
        preds = []
        for t in range(1, t_total):
            if beta == 1.0:
                inp = prev_pred
            else:
                inp = beta * prev_pred + (1 - beta) * teacher[:, t - 1]
            pred, state = self.step(inp, event_clip[:, t], state)
            preds.append(pred)
            prev_pred = pred
        out = torch.stack(preds, dim=1)
        return (out, state) if return_state else out


def warp_by_flow(frame: torch.Tensor, flow: torch.Tensor):
    """Move content by `flow` (pixels, [B, 2, H, W], (u, v)): samples the
    source at x - u, y - v. Returns (warped, in-bounds mask)."""
    b, _, h, w = frame.shape
    yy, xx = torch.meshgrid(
        torch.arange(h, dtype=frame.dtype, device=frame.device),
        torch.arange(w, dtype=frame.dtype, device=frame.device),
        indexing="ij",
    )
    src_x = xx[None] - flow[:, 0]
    src_y = yy[None] - flow[:, 1]
    valid = (src_x >= 0) & (src_x <= w - 1) & (src_y >= 0) & (src_y <= h - 1)
    grid = torch.stack([2 * src_x / (w - 1) - 1, 2 * src_y / (h - 1) - 1], dim=-1)
    warped = F.grid_sample(frame, grid, mode="bilinear", align_corners=True)
    return warped, valid.unsqueeze(1).to(frame.dtype)


def flow_consistency_loss(pred_t: torch.Tensor, pred_prev: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Mean masked L1 between pred_t and pred_prev warped forward by flow."""
    warped, mask = warp_by_flow(pred_prev, flow)
    denom = mask.sum() * pred_t.shape[1]
    if denom == 0:
        return pred_t.new_zeros(())
    return ((pred_t - warped).abs() * mask).sum() / denom


def step_loss(pred, gt, pred_prev, flow, spec: ARLossSpec) -> torch.Tensor:
    loss = spec.perceptual_weight * pyramid_l1(pred, gt)
    if spec.flow_weight:
        loss = loss + spec.flow_weight * flow_consistency_loss(pred, pred_prev, flow)
    return loss


def tbptt_train_sequence(
    model: RecurrentReconstructor,
    frames: torch.Tensor,
    event_clip: torch.Tensor,
    flow: torch.Tensor,
    optimizer: torch.optim.Optimizer,
    curriculum: CurriculumSpec,
    loss_spec: ARLossSpec,
    epoch: int,
    grad_clip: float = 1.0,
) -> dict:
    """One TBPTT pass over a sequence batch [B, T, 3, H, W].

    State and the fed-back prediction detach every `truncation` steps;
    accumulated losses backpropagate (with one optimizer update) every
    `loss_every` steps, plus once for a trailing partial window.
    """
    n_steps = frames.shape[1] - 1
    if n_steps < curriculum.loss_every:
        raise ValueError(
            f"sequence provides {n_steps} steps; curriculum needs >= {curriculum.loss_every}"
        )
    beta = curriculum.beta(epoch)
    state = None
    prev_pred = frames[:, 0]
    buffer = []
    losses, updates, detaches = [], 0, 0

    def update():
        nonlocal buffer, updates
        total = torch.stack(buffer).mean()
        optimizer.zero_grad()
        total.backward()
        if grad_clip:
            torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
        optimizer.step()
        buffer = []
        updates += 1

    for t in range(1, n_steps + 1):
        inp = prev_pred if beta == 1.0 else beta * prev_pred + (1 - beta) * frames[:, t - 1]
        pred, state = model.step(inp, event_clip[:, t], state)
        buffer.append(step_loss(pred, frames[:, t], inp, flow[:, t - 1], loss_spec))
        losses.append(float(buffer[-1].detach()))
        prev_pred = pred
        if t % curriculum.loss_every == 0 or t == n_steps:
            update()
            # the freed graph may not be revisited: truncate here as well
            state = [(h.detach(), c.detach()) for h, c in state]
            prev_pred = prev_pred.detach()
            if t % curriculum.truncation == 0:
                detaches += 1
        elif t % curriculum.truncation == 0:
            state = [(h.detach(), c.detach()) for h, c in state]
            prev_pred = prev_pred.detach()
            detaches += 1

    return {
        "loss": sum(losses) / len(losses),
        "updates": updates,
        "detaches": detaches,
        "beta": beta,
    }


def tbptt_train_epoch(
    model: RecurrentReconstructor,
    batches,
    optimizer: torch.optim.Optimizer,
    curriculum: CurriculumSpec,
    loss_spec: ARLossSpec,
    epoch: int,
    grad_clip: float = 1.0,
) -> dict:
    """One epoch: a TBPTT pass per (frames, events, flow) batch in `batches`."""
    losses, updates = [], 0
    beta = curriculum.beta(epoch)
    for frames, event_clip, flow in batches:
        stats = tbptt_train_sequence(model, frames, event_clip, flow, optimizer,
                                     curriculum, loss_spec, epoch, grad_clip)
        losses.append(stats["loss"])
        updates += stats["updates"]
    return {"loss": sum(losses) / max(len(losses), 1), "losses": losses,
            "updates": updates, "beta": beta}
