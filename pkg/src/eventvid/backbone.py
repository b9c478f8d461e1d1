"""Miniature video diffusion transformer with per-block additive injection.

Latent voxels are packed into a token sequence (time-major, then row, then
column) with 3D rotary positions split across the head dimension. Each
block is pre-norm self-attention + MLP with noise-level-derived adaptive
scale/shift/gate. Conditioning features may be added to the hidden state
entering every block; low-rank adapters can be attached to the attention
and feed-forward linears while the base weights stay frozen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange

LORA_TARGETS = ("attn_qkv", "attn_out", "mlp_in", "mlp_out")


@dataclass(frozen=True)
class BackboneConfig:
    depth: int = 4
    hidden: int = 128
    heads: int = 4
    mlp_ratio: float = 4.0
    rope_base: float = 10000.0
    # "content_residual": the head predicts the clean latent and the velocity
    # is formed as (x_sigma - prediction) / max(sigma, sigma_floor). The
    # noise passthrough is then an exact full-rank skip, which matters
    # whenever the latent channel count exceeds the hidden width.
    # "direct": the head emits the velocity itself.
    prediction: str = "content_residual"
    sigma_floor: float = 0.05

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.prediction not in ("content_residual", "direct"):
            raise ValueError(f"unknown prediction mode {self.prediction!r}")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    @property
    def rope_dims(self) -> tuple[int, int, int]:
        """Per-axis rotary sizes: time gets ~2x the share of height/width,
        all rounded down to even; the remainder goes to the time axis."""
        d = self.head_dim
        d_h = 2 * ((d // 4) // 2)
        d_w = d_h
        d_t = d - d_h - d_w
        if d_t % 2:
            raise ValueError(f"head_dim {d} cannot be split into even rotary axes")
        return d_t, d_h, d_w


@dataclass(frozen=True)
class LoRAConfig:
    rank: int = 0
    alpha: float = 16.0
    targets: tuple[str, ...] = LORA_TARGETS

    def __post_init__(self):
        if self.rank < 0:
            raise ValueError("rank must be >= 0")
        unknown = set(self.targets) - set(LORA_TARGETS)
        if unknown:
            raise ValueError(f"unknown LoRA targets {sorted(unknown)}")


@dataclass
class TokenGrid:
    """Token sequence [B, L, d], integer (t', y', x') positions [L, 3],
    and the latent grid shape the sequence was flattened from."""

    tokens: torch.Tensor
    positions: torch.Tensor
    grid_shape: tuple[int, int, int]

    def __post_init__(self):
        t, h, w = self.grid_shape
        if self.tokens.shape[-2] != t * h * w:
            raise ValueError(f"token count {self.tokens.shape[-2]} != grid {self.grid_shape}")


def grid_positions(t: int, h: int, w: int, device=None) -> torch.Tensor:
    """Enumerate the latent grid time-major, then row, then column: [L, 3]."""
    tt, yy, xx = torch.meshgrid(
        torch.arange(t, device=device),
        torch.arange(h, device=device),
        torch.arange(w, device=device),
        indexing="ij",
    )
    return torch.stack([tt, yy, xx], dim=-1).reshape(-1, 3)


class LoRALinear(nn.Module):
    """Frozen base linear plus a trainable low-rank update.

    Output = W0 x + (alpha/r) * B(A x); B starts at zero so the adapted
    layer initially equals the base layer bit for bit.
    """

    def __init__(self, base: nn.Linear, rank: int, alpha: float):
        super().__init__()
        if rank < 1:
            raise ValueError("LoRALinear requires rank >= 1; use the plain linear for rank 0")
        self.base = base
        self.rank = rank
        self.scaling = alpha / rank
        self.lora_a = nn.Parameter(torch.randn(rank, base.in_features) * 0.02)
        self.lora_b = nn.Parameter(torch.zeros(base.out_features, rank))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + self.scaling * F.linear(F.linear(x, self.lora_a), self.lora_b)


def lora_apply(weight: torch.Tensor, x: torch.Tensor, a: torch.Tensor, b: torch.Tensor, alpha: float) -> torch.Tensor:
    """Functional form: W0 x + (alpha/r) * B(A x), rank r = a.shape[0]."""
    return F.linear(x, weight) + (alpha / a.shape[0]) * F.linear(F.linear(x, a), b)


def _rotate_half(x: torch.Tensor) -> torch.Tensor:
    x1, x2 = x.unflatten(-1, (-1, 2)).unbind(-1)
    return torch.stack((-x2, x1), dim=-1).flatten(-2)


def rope_angles(positions: torch.Tensor, dims: tuple[int, int, int], base: float) -> torch.Tensor:
    """Per-token rotary phase for the three axes, concatenated: [L, head_dim/2]."""
    parts = []
    for axis, d_axis in enumerate(dims):
        if d_axis == 0:
            continue
        freqs = base ** (-torch.arange(0, d_axis, 2, dtype=torch.float64) / d_axis)
        parts.append(positions[:, axis].double()[:, None] * freqs[None, :])
    return torch.cat(parts, dim=-1)


def apply_rope(q: torch.Tensor, k: torch.Tensor, angles: torch.Tensor):
    """Rotate q, k ([B, heads, L, head_dim]) by the per-token angles."""
    cos = angles.cos().repeat_interleave(2, dim=-1).to(q.dtype)
    sin = angles.sin().repeat_interleave(2, dim=-1).to(q.dtype)
    return q * cos + _rotate_half(q) * sin, k * cos + _rotate_half(k) * sin


def sigma_embedding(sigma: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of the noise level, [B] -> [B, dim]."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=sigma.dtype, device=sigma.device) / half)
    args = sigma[:, None] * freqs[None, :] * 1000.0
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


def modulate(x: torch.Tensor, shift: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    return x * (1 + scale.unsqueeze(1)) + shift.unsqueeze(1)


class Attention(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.heads = cfg.heads
        self.head_dim = cfg.head_dim
        self.qkv = nn.Linear(cfg.hidden, 3 * cfg.hidden)
        self.out = nn.Linear(cfg.hidden, cfg.hidden)

    def forward(self, x, angles, context=None):
        b, l, _ = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = rearrange(q, "b l (h d) -> b h l d", h=self.heads)
        k = rearrange(k, "b l (h d) -> b h l d", h=self.heads)
        v = rearrange(v, "b l (h d) -> b h l d", h=self.heads)
        q, k = apply_rope(q, k, angles)
        if context is not None:
            # auxiliary token sequences (e.g. text) join keys/values without positions
            ck, cv = self.qkv(context).chunk(3, dim=-1)[1:]
            k = torch.cat([k, rearrange(ck, "b l (h d) -> b h l d", h=self.heads)], dim=2)
            v = torch.cat([v, rearrange(cv, "b l (h d) -> b h l d", h=self.heads)], dim=2)
        y = F.scaled_dot_product_attention(q, k, v)
        return self.out(rearrange(y, "b h l d -> b l (h d)"))


class Block(nn.Module):
    """Pre-norm attention + MLP, modulated by the noise-level embedding."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.hidden, elementwise_affine=False, eps=1e-6)
        self.attn = Attention(cfg)
        self.norm2 = nn.LayerNorm(cfg.hidden, elementwise_affine=False, eps=1e-6)
        mlp_dim = int(cfg.hidden * cfg.mlp_ratio)
        self.mlp_in = nn.Linear(cfg.hidden, mlp_dim)
        self.mlp_out = nn.Linear(mlp_dim, cfg.hidden)
        self.modulation = nn.Linear(cfg.hidden, 6 * cfg.hidden)
        nn.init.zeros_(self.modulation.weight)
        nn.init.zeros_(self.modulation.bias)

    def forward(self, x, cond, angles, context=None):
        sh_a, sc_a, gate_a, sh_m, sc_m, gate_m = self.modulation(F.silu(cond)).chunk(6, dim=-1)
        x = x + gate_a.unsqueeze(1) * self.attn(modulate(self.norm1(x), sh_a, sc_a), angles, context)
        h = self.mlp_out(F.gelu(self.mlp_in(modulate(self.norm2(x), sh_m, sc_m))))
        return x + gate_m.unsqueeze(1) * h


class VideoFlowTransformer(nn.Module):
    """Velocity-prediction transformer over latent video tokens.

    forward(latent, sigma, injections) returns a velocity tensor of the
    same latent shape. `injections` is one [B, L, hidden] tensor (or None)
    per block, added to the hidden state entering that block. In the
    default content-residual parameterization the head predicts the clean
    latent and the velocity is (x_sigma - prediction) / max(sigma, floor).
    """

    def __init__(self, cfg: BackboneConfig, latent_channels: int):
        super().__init__()
        self.cfg = cfg
        self.latent_channels = latent_channels
        self.in_proj = nn.Linear(latent_channels, cfg.hidden)
        self.sigma_mlp = nn.Sequential(
            nn.Linear(cfg.hidden, cfg.hidden), nn.SiLU(), nn.Linear(cfg.hidden, cfg.hidden)
        )
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.depth))
        self.norm_out = nn.LayerNorm(cfg.hidden, elementwise_affine=False, eps=1e-6)
        self.mod_out = nn.Linear(cfg.hidden, 2 * cfg.hidden)
        self.head = nn.Linear(cfg.hidden, latent_channels)
        nn.init.zeros_(self.mod_out.weight)
        nn.init.zeros_(self.mod_out.bias)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def pack(self, latent: torch.Tensor) -> TokenGrid:
        """[B, T', C', H', W'] -> projected tokens with recorded positions."""
        b, t, c, h, w = latent.shape
        tokens = self.in_proj(rearrange(latent, "b t c h w -> b (t h w) c"))
        return TokenGrid(tokens, grid_positions(t, h, w, device=latent.device), (t, h, w))

    def unpack(self, grid: TokenGrid) -> torch.Tensor:
        """Output head d -> C', then fold tokens back onto the latent grid."""
        t, h, w = grid.grid_shape
        out = self.head(grid.tokens)
        return rearrange(out, "b (t h w) c -> b t c h w", t=t, h=h, w=w)

    def forward_tokens(
        self,
        grid: TokenGrid,
        sigma: torch.Tensor,
        injections: Optional[Sequence[Optional[torch.Tensor]]] = None,
        text_tokens: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        """Run the block stack on a token grid; returns [B, L, hidden]."""
        x = grid.tokens
        if injections is not None and len(injections) != len(self.blocks):
            raise ValueError(f"expected {len(self.blocks)} injection tensors, got {len(injections)}")
        cond = self.sigma_mlp(sigma_embedding(sigma.to(x.dtype), self.cfg.hidden))
        angles = rope_angles(grid.positions, self.cfg.rope_dims, self.cfg.rope_base).to(x.device)
        for j, block in enumerate(self.blocks):
            if injections is not None and injections[j] is not None:
                z = injections[j]
                if z.shape != x.shape:
                    raise ValueError(f"injection {j} shape {tuple(z.shape)} != tokens {tuple(x.shape)}")
                x = x + z
            x = block(x, cond, angles, context=text_tokens)
        shift, scale = self.mod_out(F.silu(cond)).chunk(2, dim=-1)
        return modulate(self.norm_out(x), shift, scale)

    def forward(
        self,
        latent: torch.Tensor,
        sigma: torch.Tensor,
        injections: Optional[Sequence[Optional[torch.Tensor]]] = None,
        text_tokens: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        grid = self.pack(latent)
        tokens = self.forward_tokens(grid, sigma, injections, text_tokens)
        out = self.unpack(TokenGrid(tokens, grid.positions, grid.grid_shape))
        if self.cfg.prediction == "direct":
            return out
        s = sigma.to(latent.dtype).clamp_min(self.cfg.sigma_floor).view(-1, 1, 1, 1, 1)
        return (latent - out) / s


def apply_lora(model: VideoFlowTransformer, cfg: LoRAConfig) -> VideoFlowTransformer:
    """Attach adapters to the configured linears and freeze the base weights.

    rank 0 leaves the model untouched (forward equals the base exactly).
    """
    if cfg.rank == 0:
        return model
    for block in model.blocks:
        if "attn_qkv" in cfg.targets:
            block.attn.qkv = LoRALinear(block.attn.qkv, cfg.rank, cfg.alpha)
        if "attn_out" in cfg.targets:
            block.attn.out = LoRALinear(block.attn.out, cfg.rank, cfg.alpha)
        if "mlp_in" in cfg.targets:
            block.mlp_in = LoRALinear(block.mlp_in, cfg.rank, cfg.alpha)
        if "mlp_out" in cfg.targets:
            block.mlp_out = LoRALinear(block.mlp_out, cfg.rank, cfg.alpha)
    for module in model.modules():
        if isinstance(module, LoRALinear):
            module.base.weight.requires_grad_(False)
            if module.base.bias is not None:
                module.base.bias.requires_grad_(False)
    return model


def adapter_parameter_count(model: nn.Module) -> int:
    return sum(
        m.lora_a.numel() + m.lora_b.numel()
        for m in model.modules()
        if isinstance(m, LoRALinear)
    )
