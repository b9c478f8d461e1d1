"""Flow-matching objective and Euler sampler with frame conditioning.

Training regresses the constant velocity eps - x0 along linear
noise-to-data interpolations x_sigma = (1 - sigma) * x0 + sigma * eps.
Conditioning frames (the first latent step; also the last one in
bidirectional mode) receive exactly zero noise, are excluded from the loss
by a token mask, and are hard-clamped to their clean values at every
sampler step.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch


class NumericalError(RuntimeError):
    """Non-finite values encountered mid-computation."""


UNIDIRECTIONAL = "uni"
BIDIRECTIONAL = "bi"


@dataclass(frozen=True)
class SamplerSpec:
    n_steps: int = 50
    conditioning_mode: str = UNIDIRECTIONAL

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.conditioning_mode not in (UNIDIRECTIONAL, BIDIRECTIONAL):
            raise ValueError(f"unknown conditioning mode {self.conditioning_mode!r}")


@dataclass
class FlowSample:
    """One training instance over latent tensors [B, T', C', H', W'].

    `mask` is a {0,1} tensor over latent time steps [T'] (0 on conditioning
    steps), broadcast over batch/channels/space when applied.
    """

    x0: torch.Tensor
    eps: torch.Tensor
    sigma: torch.Tensor
    x_sigma: torch.Tensor
    v_target: torch.Tensor
    mask: torch.Tensor

    @property
    def tokens_per_step(self) -> int:
        return self.x0.shape[-1] * self.x0.shape[-2]

    def masked_token_count(self) -> int:
        return int(self.mask.sum().item()) * self.tokens_per_step


def conditioning_mask(t_latent: int, mode: str, device=None) -> torch.Tensor:
    """{0,1}^T' time mask: 0 on conditioning steps, 1 elsewhere."""
    mask = torch.ones(t_latent, device=device)
    mask[0] = 0.0
    if mode == BIDIRECTIONAL:
        mask[-1] = 0.0
    if mask.sum() < 1:
        raise ValueError(f"no unmasked latent steps remain (T'={t_latent}, mode={mode})")
    return mask


def make_sample(x0: torch.Tensor, generator: torch.Generator | None = None,
                mode: str = UNIDIRECTIONAL) -> FlowSample:
    """Draw sigma ~ U[0,1] per batch element and build the noised latent.

    Conditioning steps stay at the clean latent (their sigma is zero).
    """
    if not torch.isfinite(x0).all():
        raise NumericalError("clean latent contains non-finite values")
    b, t = x0.shape[0], x0.shape[1]
    eps = torch.empty_like(x0).normal_(generator=generator)
    sigma = torch.rand(b, device=x0.device, generator=generator)
    mask = conditioning_mask(t, mode, device=x0.device)
    s = sigma.view(b, 1, 1, 1, 1)
    m = mask.view(1, t, 1, 1, 1)
    x_sigma = torch.where(m > 0, (1 - s) * x0 + s * eps, x0)
    return FlowSample(x0=x0, eps=eps, sigma=sigma, x_sigma=x_sigma,
                      v_target=eps - x0, mask=mask)


def rf_loss(model_out: torch.Tensor, sample: FlowSample) -> torch.Tensor:
    """(1/||M||_1) * sum of masked squared velocity error, averaged over batch.

    ||M||_1 counts unmasked tokens (latent positions), matching a token
    mask broadcast over the channel dimension.
    """
    if model_out.shape != sample.v_target.shape:
        raise ValueError(
            f"model output {tuple(model_out.shape)} != target {tuple(sample.v_target.shape)}"
        )
    count = sample.masked_token_count()
    if count == 0:
        raise ValueError("all-zero loss mask")
    m = sample.mask.view(1, -1, 1, 1, 1)
    per_sample = ((model_out - sample.v_target) ** 2 * m).sum(dim=(1, 2, 3, 4)) / count
    return per_sample.mean()


@torch.no_grad()
def euler_sample(
    model,
    first_frame_latent: torch.Tensor,
    injections,
    spec: SamplerSpec,
    generator: torch.Generator | None = None,
    grid_shape: tuple[int, int, int] | None = None,
    last_frame_latent: torch.Tensor | None = None,
) -> torch.Tensor:
    """Integrate the learned velocity field from noise (sigma=1) to data.

    `first_frame_latent` is [B, 1, C', H', W']; the full grid shape
    (T', H', W') sets the generated length. Conditioning steps are clamped
    to their clean latents throughout and in the returned tensor.
    """
    if grid_shape is None:
        raise ValueError("grid_shape (T', H', W') is required")
    t_lat, h_lat, w_lat = grid_shape
    b, _, c_lat = first_frame_latent.shape[:3]
    if first_frame_latent.shape[-2:] != (h_lat, w_lat):
        raise ValueError("first-frame latent does not match the requested grid")
    mode = spec.conditioning_mode
    if mode == BIDIRECTIONAL and last_frame_latent is None:
        raise ValueError("bidirectional conditioning requires the last-frame latent")
    mask = conditioning_mask(t_lat, mode, device=first_frame_latent.device)
    m = mask.view(1, t_lat, 1, 1, 1)

    def clamp(x):
        x = torch.where(m > 0, x, torch.zeros_like(x))
        x[:, :1] = first_frame_latent
        if mode == BIDIRECTIONAL:
            x[:, -1:] = last_frame_latent
        return x

    x = torch.empty(b, t_lat, c_lat, h_lat, w_lat, device=first_frame_latent.device,
                    dtype=first_frame_latent.dtype).normal_(generator=generator)
    x = clamp(x)
    d_sigma = 1.0 / spec.n_steps
    for i in range(spec.n_steps):
        sigma = torch.full((b,), 1.0 - i * d_sigma, device=x.device, dtype=x.dtype)
        v = model(x, sigma, injections)
        x = x - d_sigma * v
        x = clamp(x)
        if not torch.isfinite(x).all():
            raise NumericalError(f"non-finite latent at sampler step {i + 1}/{spec.n_steps}")
    return x
