"""Shared network blocks: residual channel attention, spatial multi-head
self/cross attention, channel layer norm, and seeded weight init.

All attention projections are bias-free 1x1 convs, so zero/identity
modulation corner cases hold exactly (see tests). Tokens are spatial
positions; there is no positional encoding.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, ShapeError

__all__ = [
    "scaled_attention",
    "ResAttnBlock",
    "MultiHeadSelfAttention",
    "MultiHeadCrossAttention",
    "ChannelLayerNorm",
    "init_params",
    "split_heads",
    "merge_heads",
]


def split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    """(B, C, h, w) -> (B, heads, h*w, C//heads) token layout."""
    b, c, h, w = x.shape
    return x.reshape(b, heads, c // heads, h * w).transpose(2, 3)


def merge_heads(x: torch.Tensor, h: int, w: int) -> torch.Tensor:
    """(B, heads, h*w, d) -> (B, heads*d, h, w)."""
    b, heads, n, d = x.shape
    return x.transpose(2, 3).reshape(b, heads * d, h, w)


def scaled_attention(q, k, v, return_weights: bool = False):
    """Scaled dot-product attention over (B, heads, N, d) tensors.

    The default path uses the fused torch kernel; ``return_weights=True``
    switches to an explicit matmul+softmax path and also returns the
    (B, heads, N, N) attention weights. Tests pin both paths equal.
    """
    scale = q.shape[-1] ** -0.5
    if return_weights:
        scores = (q @ k.transpose(-1, -2)) * scale
        weights = scores.softmax(dim=-1)
        return weights @ v, weights
    return F.scaled_dot_product_attention(q, k, v)


class ResAttnBlock(nn.Module):
    """Residual block gated by squeeze-excite channel attention.

    out = f + Conv3x3(ReLU(Conv3x3(f))) * sigmoid(SE(GAP(f)))
    with SE a two-layer 1x1 bottleneck (reduction 8).
    """

    def __init__(self, channels: int, reduction: int = 8):
        super().__init__()
        self.channels = channels
        hidden = max(channels // reduction, 1)
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.se1 = nn.Conv2d(channels, hidden, 1)
        self.se2 = nn.Conv2d(hidden, channels, 1)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        if f.shape[1] != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {f.shape[1]}")
        body = self.conv2(F.relu(self.conv1(f)))
        gate = torch.sigmoid(self.se2(F.relu(self.se1(f.mean(dim=(2, 3), keepdim=True)))))
        return f + body * gate


class MultiHeadSelfAttention(nn.Module):
    """Spatial-token MHSA with residual: x + W_O(attn(Q, K, V)).

    Q/K/V/O are bias-free 1x1 convs; scale is 1/sqrt(head dim).
    """

    def __init__(self, channels: int, heads: int = 4):
        super().__init__()
        if channels % heads:
            raise ConfigError(f"channels {channels} not divisible by heads {heads}")
        self.heads = heads
        self.q = nn.Conv2d(channels, channels, 1, bias=False)
        self.k = nn.Conv2d(channels, channels, 1, bias=False)
        self.v = nn.Conv2d(channels, channels, 1, bias=False)
        self.o = nn.Conv2d(channels, channels, 1, bias=False)

    def forward(self, x: torch.Tensor, return_weights: bool = False):
        b, c, h, w = x.shape
        q = split_heads(self.q(x), self.heads)
        k = split_heads(self.k(x), self.heads)
        v = split_heads(self.v(x), self.heads)
        if return_weights:
            out, weights = scaled_attention(q, k, v, return_weights=True)
            return x + self.o(merge_heads(out, h, w)), weights
        out = scaled_attention(q, k, v)
        return x + self.o(merge_heads(out, h, w))


class MultiHeadCrossAttention(nn.Module):
    """Pure cross-attention: queries from ``a``, keys/values from ``b``.

    No internal residual — callers own the residual structure.
    """

    def __init__(self, channels: int, heads: int = 4):
        super().__init__()
        if channels % heads:
            raise ConfigError(f"channels {channels} not divisible by heads {heads}")
        self.heads = heads
        self.q = nn.Conv2d(channels, channels, 1, bias=False)
        self.k = nn.Conv2d(channels, channels, 1, bias=False)
        self.v = nn.Conv2d(channels, channels, 1, bias=False)
        self.o = nn.Conv2d(channels, channels, 1, bias=False)

    def forward(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"query/context shape mismatch: {a.shape} vs {b.shape}")
        _, _, h, w = a.shape
        q = split_heads(self.q(a), self.heads)
        k = split_heads(self.k(b), self.heads)
        v = split_heads(self.v(b), self.heads)
        out = scaled_attention(q, k, v)
        return self.o(merge_heads(out, h, w))


class ChannelLayerNorm(nn.Module):
    """LayerNorm over the channel axis at each spatial position."""

    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mu = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        xn = (x - mu) / torch.sqrt(var + self.eps)
        return xn * self.weight[None, :, None, None] + self.bias[None, :, None, None]


def init_params(module: nn.Module, seed: int) -> None:
    """Re-draw all conv weights/biases as centered uniform fan-in values
    from an explicit generator, making construction deterministic.

    fan_in follows the torch convention (weight dim 1 x kernel area), and
    the bound 1/sqrt(fan_in) matches the default kaiming_uniform(a=sqrt(5))
    initialization. Layers that special-case their init (zero-init heads)
    do so after calling this.
    """
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            fan_in = m.weight.shape[1] * math.prod(m.weight.shape[2:])
            bound = 1.0 / math.sqrt(fan_in)
            with torch.no_grad():
                m.weight.uniform_(-bound, bound, generator=gen)
                if m.bias is not None:
                    m.bias.uniform_(-bound, bound, generator=gen)
