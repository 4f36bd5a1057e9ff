"""Dual-branch restoration network conditioned on latent degradation priors.

Pipeline: luminance/chrominance input embeddings (estimator-modulated),
four encoder stages per branch with value-modulated attention injecting
the VAE priors x0..x3, FFT-based degradation maps g0..g2, FiLM-style
latent fusion at the bottleneck with mu, and a gated linear-complexity
decoder with a global residual: out = clamp(tanh(W_rec * D) + img).

W_rec is zero-initialized, so the untrained network is the identity map.
"""

from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn

from .blocks import (
    ChannelLayerNorm,
    MultiHeadCrossAttention,
    MultiHeadSelfAttention,
    init_params,
    merge_heads,
    scaled_attention,
    split_heads,
)
from .errors import ShapeError
from .images import require_spatial_multiple
from .vae import CHANNELS, LatentPriors

__all__ = [
    "LCPair",
    "lc_decompose",
    "lc_recompose",
    "frequency_features",
    "InputEmbed",
    "ValueModulatedAttention",
    "DegradationMapBlock",
    "LatentFusion",
    "GatedDecoderStage",
    "RestorationNet",
]

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class LCPair(NamedTuple):
    """Luminance (B,1,H,W) and chrominance residual (B,3,H,W)."""

    lum: torch.Tensor
    chroma: torch.Tensor


def lc_decompose(img: torch.Tensor) -> LCPair:
    """Split an RGB image into luminance and chrominance residual.

    L = 0.299 R + 0.587 G + 0.114 B, C = img - L. Recomposition
    ``chroma + lum`` is bitwise-exact whenever each pixel's channels share
    a sign and lie within a factor of two of each other (the subtraction
    is then exact by Sterbenz's lemma). In general each of the two
    roundings is bounded by an ulp of the dominant magnitude, so the round
    trip is correct to 2 ulp of max(|x|, |L|) — the residual cannot carry
    sub-ulp detail of a channel far smaller than its distance to L.
    """
    if img.ndim != 4 or img.shape[1] != 3:
        raise ShapeError(f"expected (B, 3, H, W), got {tuple(img.shape)}")
    w = img.new_tensor(LUMA_WEIGHTS).view(1, 3, 1, 1)
    lum = (img * w).sum(dim=1, keepdim=True)
    return LCPair(lum=lum, chroma=img - lum)


def lc_recompose(pair: LCPair) -> torch.Tensor:
    """Inverse of :func:`lc_decompose`: chroma + lum (broadcast)."""
    return pair.chroma + pair.lum


def frequency_features(f: torch.Tensor, delta: float = 1e-2) -> torch.Tensor:
    """Spectral descriptor of a feature map: (3C, H, W) channels.

    Per channel: subtract the spatial mean, 2-D FFT with the DC bin zeroed
    exactly (mean subtraction makes it analytically zero; zeroing removes
    float residue), then a smoothed magnitude ``sqrt(re^2+im^2+d^2) - d``
    through log1p and the phase as the smooth unit pair
    ``(re, im)/sqrt(re^2+im^2+d^2)``. The soft forms keep gradients finite
    at zero-magnitude bins, where a raw angle would blow up.
    """
    centered = f - f.mean(dim=(2, 3), keepdim=True)
    spec = torch.fft.fft2(centered)
    re, im = spec.real.clone(), spec.imag.clone()
    re[:, :, 0, 0] = 0.0
    im[:, :, 0, 0] = 0.0
    root = torch.sqrt(re * re + im * im + delta * delta)
    mag = torch.log1p(root - delta)
    return torch.cat([mag, re / root, im / root], dim=1)


class InputEmbed(nn.Module):
    """Estimator-modulated input embedding for one branch.

    A depthwise (k=5, groups=4) + pointwise conv estimates a 3-channel
    modulation map from [img, branch summary channel], where the summary
    is the luminance (lum branch) or the per-pixel chroma mean (chrom
    branch). Embedding: LeakyReLU(Conv3x3(img * map + img)), slope 0.1.
    """

    def __init__(self, branch: str):
        super().__init__()
        if branch not in ("lum", "chrom"):
            raise ValueError(f"branch must be 'lum' or 'chrom', got {branch!r}")
        self.branch = branch
        self.estimator_dw = nn.Conv2d(4, 4, 5, padding=2, groups=4)
        self.estimator_pw = nn.Conv2d(4, 3, 1)
        self.embed = nn.Conv2d(3, CHANNELS[0], 3, padding=1)

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        if img.ndim != 4 or img.shape[1] != 3:
            raise ShapeError(f"expected (B, 3, H, W), got {tuple(img.shape)}")
        require_spatial_multiple(img.shape[2], img.shape[3])
        lum, chroma = lc_decompose(img)
        summary = lum if self.branch == "lum" else chroma.mean(dim=1, keepdim=True)
        mod_map = self.estimator_pw(self.estimator_dw(torch.cat([img, summary], dim=1)))
        modulated = img * mod_map + img
        return F.leaky_relu(self.embed(modulated), 0.1)


class ValueModulatedAttention(nn.Module):
    """Spatial multi-head attention whose values are gated by a prior map.

    Q = f W_Q, K = f W_K, V~ = (f W_V) * x; attention output is projected
    and added to the residual f. With x = 1 this is exactly standard
    self-attention; with x = 0 the output is f alone.
    """

    def __init__(self, channels: int, heads: int = 4):
        super().__init__()
        self.heads = heads
        self.q = nn.Conv2d(channels, channels, 1, bias=False)
        self.k = nn.Conv2d(channels, channels, 1, bias=False)
        self.v = nn.Conv2d(channels, channels, 1, bias=False)
        self.o = nn.Conv2d(channels, channels, 1, bias=False)

    def forward(self, f: torch.Tensor, x: torch.Tensor, return_weights: bool = False):
        if f.shape != x.shape:
            raise ShapeError(f"feature/prior shape mismatch: {tuple(f.shape)} vs {tuple(x.shape)}")
        _, _, h, w = f.shape
        q = split_heads(self.q(f), self.heads)
        k = split_heads(self.k(f), self.heads)
        v = split_heads(self.v(f) * x, self.heads)
        if return_weights:
            out, weights = scaled_attention(q, k, v, return_weights=True)
            return f + self.o(merge_heads(out, h, w)), weights
        out = scaled_attention(q, k, v)
        return f + self.o(merge_heads(out, h, w))


class DegradationMapBlock(nn.Module):
    """Produces a (B, 1, H, W) degradation map in (0, 1) for one stage.

    f_lc = Conv3x3(L + C); spectral features of both branches through a
    1x1 conv + ReLU give f_freq; element-wise attention against the prior
    x (A = sigmoid(Q * K), y = A * V with K = V) feeds a conv head:
    g = sigmoid(head(ReLU(Conv3x3(y + f_lc + f_freq)))).
    """

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.conv_lc = nn.Conv2d(channels, channels, 3, padding=1)
        self.freq_proj = nn.Conv2d(6 * channels, channels, 1)
        self.q = nn.Conv2d(channels, channels, 1)
        self.kv = nn.Conv2d(channels, channels, 1)
        self.pre = nn.Conv2d(channels, channels, 3, padding=1)
        self.head1 = nn.Conv2d(channels, max(channels // 2, 8), 3, padding=1)
        self.head2 = nn.Conv2d(max(channels // 2, 8), 1, 3, padding=1)

    def forward(self, l_feat: torch.Tensor, c_feat: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        if l_feat.shape != c_feat.shape or l_feat.shape != x.shape:
            raise ShapeError(
                f"stage shape mismatch: L {tuple(l_feat.shape)}, C {tuple(c_feat.shape)}, "
                f"x {tuple(x.shape)}"
            )
        f_lc = self.conv_lc(l_feat + c_feat)
        freq = torch.cat([frequency_features(l_feat), frequency_features(c_feat)], dim=1)
        f_freq = F.relu(self.freq_proj(freq))
        f_tilde = f_lc + f_freq
        k = self.kv(x)
        attn = torch.sigmoid(self.q(f_tilde) * k)
        y = attn * k  # K = V: one projection serves both roles
        return torch.sigmoid(self.head2(F.relu(self.head1(F.relu(self.pre(y + f_tilde))))))


class LatentFusion(nn.Module):
    """Bottleneck fusion of the two branches, FiLM-conditioned on mu.

    L^ = MHSA(L3), C^ = MHSA(C3); F = LayerNorm(MHCA(C^, L^) + C^ + L^)
    (chrominance queries luminance). A zero-initialized two-conv SiLU head
    maps mu to (gamma, beta); output F * (1 + gamma) + beta, so fusion is
    exactly F at init.
    """

    def __init__(self, channels: int = CHANNELS[-1], heads: int = 4):
        super().__init__()
        self.attn_l = MultiHeadSelfAttention(channels, heads)
        self.attn_c = MultiHeadSelfAttention(channels, heads)
        self.cross = MultiHeadCrossAttention(channels, heads)
        self.norm = ChannelLayerNorm(channels)
        self.film1 = nn.Conv2d(channels, channels, 1)
        self.film2 = nn.Conv2d(channels, 2 * channels, 1)

    def fuse_lc(self, l3: torch.Tensor, c3: torch.Tensor) -> torch.Tensor:
        l_hat = self.attn_l(l3)
        c_hat = self.attn_c(c3)
        return self.norm(self.cross(c_hat, l_hat) + c_hat + l_hat)

    def forward(self, l3: torch.Tensor, c3: torch.Tensor, mu: torch.Tensor) -> torch.Tensor:
        fused = self.fuse_lc(l3, c3)
        gamma, beta = self.film2(F.silu(self.film1(mu))).chunk(2, dim=1)
        return fused * (1.0 + gamma) + beta


class GatedDecoderStage(nn.Module):
    """Linear-complexity decoder stage gated by a degradation map.

    Q = W_Q U, K = W_K g (1 -> C), V = W_V E; A = sigmoid(Q * K);
    D = LeakyReLU(Conv3x3(A * V + U), 0.1). Everything is element-wise,
    so the cost is Theta(H * W * C).
    """

    def __init__(self, channels: int):
        super().__init__()
        self.q = nn.Conv2d(channels, channels, 1)
        self.k = nn.Conv2d(1, channels, 1)
        self.v = nn.Conv2d(channels, channels, 1)
        self.phi = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, u: torch.Tensor, g: torch.Tensor, e: torch.Tensor) -> torch.Tensor:
        if u.shape != e.shape or g.shape != (u.shape[0], 1, *u.shape[2:]):
            raise ShapeError(
                f"decoder stage shapes: U {tuple(u.shape)}, g {tuple(g.shape)}, E {tuple(e.shape)}"
            )
        attn = torch.sigmoid(self.q(u) * self.k(g))
        return F.leaky_relu(self.phi(attn * self.v(e) + u), 0.1)


class _Branch(nn.Module):
    """One encoder branch: embedding, stride-2 transitions, per-stage DAEB."""

    def __init__(self, branch: str, heads: int):
        super().__init__()
        self.embed = InputEmbed(branch)
        self.downs = nn.ModuleList(
            [nn.Conv2d(a, b, 3, stride=2, padding=1) for a, b in zip(CHANNELS[:-1], CHANNELS[1:])]
        )
        self.attn = nn.ModuleList([ValueModulatedAttention(c, heads) for c in CHANNELS])

    def forward(self, img: torch.Tensor, stages: tuple[torch.Tensor, ...]) -> tuple[torch.Tensor, ...]:
        feats = []
        f = self.attn[0](self.embed(img), stages[0])
        feats.append(f)
        for down, attn, x in zip(self.downs, self.attn[1:], stages[1:]):
            f = attn(F.leaky_relu(down(f), 0.1), x)
            feats.append(f)
        return tuple(feats)


class RestorationNet(nn.Module):
    """Full restoration network; identity map at initialization."""

    def __init__(self, heads: int = 4, seed: int = 0):
        super().__init__()
        self.lum = _Branch("lum", heads)
        self.chrom = _Branch("chrom", heads)
        self.maps = nn.ModuleList([DegradationMapBlock(c) for c in CHANNELS[:3]])
        self.fusion = LatentFusion(CHANNELS[-1], heads)
        self.ups = nn.ModuleList(
            [nn.ConvTranspose2d(a, b, 2, stride=2) for a, b in zip(CHANNELS[:0:-1], CHANNELS[-2::-1])]
        )
        self.stages = nn.ModuleList([GatedDecoderStage(c) for c in CHANNELS[-2::-1]])
        self.w_rec = nn.Conv2d(CHANNELS[0], 3, 3, padding=1)
        init_params(self, seed)
        with torch.no_grad():
            # Identity at init: tanh(0) + img. FiLM head likewise starts
            # as the identity on the fused features.
            self.w_rec.weight.zero_()
            self.w_rec.bias.zero_()
            self.fusion.film2.weight.zero_()
            self.fusion.film2.bias.zero_()

    def _check(self, img: torch.Tensor, priors: LatentPriors) -> None:
        if img.ndim != 4 or img.shape[1] != 3:
            raise ShapeError(f"expected (B, 3, H, W) image, got {tuple(img.shape)}")
        require_spatial_multiple(img.shape[2], img.shape[3])
        b, _, h, w = img.shape
        expected = [(b, c, h >> i, w >> i) for i, c in enumerate(CHANNELS)]
        for i, (x, shape) in enumerate(zip(priors.stages(), expected)):
            if tuple(x.shape) != shape:
                raise ShapeError(f"prior x{i} shape {tuple(x.shape)} != expected {shape}")
        if tuple(priors.mu.shape) != expected[-1]:
            raise ShapeError(f"prior mu shape {tuple(priors.mu.shape)} != expected {expected[-1]}")

    def encode_branch(
        self, img: torch.Tensor, priors: LatentPriors, branch: str
    ) -> tuple[torch.Tensor, ...]:
        """Stage outputs (F0..F3) of one branch under the given priors."""
        self._check(img, priors)
        module = self.lum if branch == "lum" else self.chrom
        return module(img, priors.stages())

    def forward(self, img: torch.Tensor, priors: LatentPriors) -> torch.Tensor:
        self._check(img, priors)
        stages = priors.stages()
        l_feats = self.lum(img, stages)
        c_feats = self.chrom(img, stages)
        skips = [lf + cf for lf, cf in zip(l_feats, c_feats)]
        gmaps = [m(l_feats[i], c_feats[i], stages[i]) for i, m in enumerate(self.maps)]
        u = self.fusion(l_feats[3], c_feats[3], priors.mu)
        for up, stage, level in zip(self.ups, self.stages, (2, 1, 0)):
            u = stage(up(u), gmaps[level], skips[level])
        return torch.clamp(torch.tanh(self.w_rec(u)) + img, -1.0, 1.0)
