"""Degradation-prior VAE.

A hybrid convolutional encoder (four stages, channels 40/80/160/320, one
residual channel-attention block per stage) produces multi-scale features
x0..x3 from a degraded image. Two spatial MHSA layers refine the deepest
features for the latent heads f_mu / f_logvar (1x1, zero-initialized so
training starts exactly at the prior). The decoder mirrors the encoder
with 2x2 stride-2 transposed convs and reconstructs the input via tanh.

The exported priors {x0..x3, mu, logvar} condition the restoration
network; x3 is the stage-3 feature map (the MHSA refinement feeds only
the latent heads).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .blocks import MultiHeadSelfAttention, ResAttnBlock, init_params
from .errors import ShapeError
from .images import require_spatial_multiple

__all__ = ["LatentPriors", "DegradationVAE", "reparameterize", "CHANNELS"]

CHANNELS = (40, 80, 160, 320)


@dataclass
class LatentPriors:
    """Multi-scale degradation cues consumed by the restoration network."""

    x0: torch.Tensor  # (B, 40, H, W)
    x1: torch.Tensor  # (B, 80, H/2, W/2)
    x2: torch.Tensor  # (B, 160, H/4, W/4)
    x3: torch.Tensor  # (B, 320, H/8, W/8)
    mu: torch.Tensor  # (B, 320, H/8, W/8)
    logvar: torch.Tensor  # (B, 320, H/8, W/8)

    def stages(self) -> tuple[torch.Tensor, ...]:
        return (self.x0, self.x1, self.x2, self.x3)

    def detach(self) -> "LatentPriors":
        return LatentPriors(*(t.detach() for t in
                              (self.x0, self.x1, self.x2, self.x3, self.mu, self.logvar)))


def reparameterize(mu: torch.Tensor, logvar: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """z = mu + exp(0.5 * logvar) * eps."""
    return mu + torch.exp(0.5 * logvar) * eps


class DegradationVAE(nn.Module):
    """Hybrid VAE inferring latent degradation priors from a degraded image."""

    def __init__(self, heads: int = 4, seed: int = 0):
        super().__init__()
        c0, c1, c2, c3 = CHANNELS
        self.stem = nn.Conv2d(3, c0, 3, padding=1)
        self.enc_blocks = nn.ModuleList([ResAttnBlock(c) for c in CHANNELS])
        self.downs = nn.ModuleList(
            [nn.Conv2d(a, b, 3, stride=2, padding=1) for a, b in zip(CHANNELS[:-1], CHANNELS[1:])]
        )
        self.bottleneck = nn.ModuleList(
            [MultiHeadSelfAttention(c3, heads), MultiHeadSelfAttention(c3, heads)]
        )
        self.f_mu = nn.Conv2d(c3, c3, 1)
        self.f_logvar = nn.Conv2d(c3, c3, 1)
        self.dec_blocks = nn.ModuleList([ResAttnBlock(c) for c in reversed(CHANNELS)])
        self.ups = nn.ModuleList(
            [nn.ConvTranspose2d(a, b, 2, stride=2) for a, b in zip(CHANNELS[:0:-1], CHANNELS[-2::-1])]
        )
        self.out_conv = nn.Conv2d(c0, 3, 3, padding=1)
        init_params(self, seed)
        # Zero latent heads: mu = logvar = 0 at step 0, so KL starts at 0.
        with torch.no_grad():
            self.f_mu.weight.zero_()
            self.f_mu.bias.zero_()
            self.f_logvar.weight.zero_()
            self.f_logvar.bias.zero_()

    def _check_input(self, img: torch.Tensor) -> None:
        if img.ndim != 4 or img.shape[1] != 3:
            raise ShapeError(f"expected (B, 3, H, W) image, got {tuple(img.shape)}")
        require_spatial_multiple(img.shape[2], img.shape[3])

    def encode(self, img: torch.Tensor) -> tuple[torch.Tensor, ...]:
        """Signed-range image -> (x0, x1, x2, x3)."""
        self._check_input(img)
        feats = []
        f = self.enc_blocks[0](self.stem(img))
        feats.append(f)
        for down, block in zip(self.downs, self.enc_blocks[1:]):
            f = block(down(f))
            feats.append(f)
        return tuple(feats)

    def latent_stats(self, x3: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """MHSA-refined bottleneck -> (mu, logvar); logvar clamped to [-10, 10]."""
        z = x3
        for attn in self.bottleneck:
            z = attn(z)
        return self.f_mu(z), torch.clamp(self.f_logvar(z), -10.0, 10.0)

    def infer_priors(self, img: torch.Tensor) -> LatentPriors:
        x0, x1, x2, x3 = self.encode(img)
        mu, logvar = self.latent_stats(x3)
        return LatentPriors(x0, x1, x2, x3, mu, logvar)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        """Latent (B, 320, H/8, W/8) -> reconstructed signed image."""
        f = self.dec_blocks[0](z)
        for up, block in zip(self.ups, self.dec_blocks[1:]):
            f = block(up(f))
        return torch.tanh(self.out_conv(f))

    def forward(
        self,
        img: torch.Tensor,
        eps: torch.Tensor | None = None,
        generator: torch.Generator | None = None,
    ) -> tuple[torch.Tensor, LatentPriors]:
        """Full pass: returns (reconstruction, priors).

        ``eps`` fixes the reparameterization noise; otherwise it is drawn
        from ``generator`` (or the global RNG).
        """
        priors = self.infer_priors(img)
        if eps is None:
            eps = torch.empty_like(priors.mu).normal_(generator=generator)
        z = reparameterize(priors.mu, priors.logvar, eps)
        return self.decode(z), priors
