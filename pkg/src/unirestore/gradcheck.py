"""Finite-difference verification of analytic gradients.

Central differences in double precision on randomly sampled parameter
elements, with a small step-size ladder per element: a kinked activation
(leaky ReLU) can straddle its corner at one step size and miss it at
another, so each element keeps its best (smallest) relative error across
the ladder. Frozen parameters must produce no analytic gradient and are
excluded from the comparison.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from .blocks import MultiHeadSelfAttention, ResAttnBlock
from .restoration import (
    DegradationMapBlock,
    GatedDecoderStage,
    LatentFusion,
    RestorationNet,
    ValueModulatedAttention,
)
from .vae import LatentPriors

__all__ = [
    "BlockCheck",
    "finite_difference_max_error",
    "check_block",
    "run_all",
    "BLOCKS",
]


@dataclass
class BlockCheck:
    name: str
    max_rel_error: float
    elements: int

    def passed(self, threshold: float = 1e-4) -> bool:
        return self.max_rel_error < threshold


def finite_difference_max_error(
    loss_fn: Callable[[], torch.Tensor],
    module: torch.nn.Module,
    samples_per_param: int = 4,
    eps_ladder: Sequence[float] = (1e-5, 1e-6, 3e-6),
    seed: int = 0,
    accept: float = 1e-5,
    floor: float = 1e-4,
    grad_transform: Callable[[str, torch.Tensor], torch.Tensor] | None = None,
) -> tuple[float, int]:
    """Max relative error |a - n| / max(|a|, |n|, floor) over sampled elements.

    Half the samples per tensor are its largest-magnitude gradients (the
    strongest wiring signal), half are random. The denominator floor is
    the smallest magnitude at which the comparison is well conditioned:
    central differences on an O(1) loss carry ~1e-10 of rounding noise, so
    elements with |a|,|n| below ~1e-6 would fail any relative test purely
    from noise. With floor 1e-4 a wrong gradient is still caught as soon
    as the absolute discrepancy exceeds 1e-8 — below FD resolution anyway.

    ``loss_fn`` must be a deterministic closure over ``module``'s current
    parameters. ``grad_transform`` (name, grad) -> grad exists so tests can
    corrupt the analytic gradient and prove the checker catches it.
    """
    module.zero_grad()
    loss_fn().backward()
    grads: dict[str, torch.Tensor] = {}
    for name, p in module.named_parameters():
        if not p.requires_grad:
            assert p.grad is None or not p.grad.any(), (
                f"frozen parameter {name} received a gradient"
            )
            continue
        assert p.grad is not None, f"parameter {name} received no gradient"
        grad = p.grad.detach().clone()
        if grad_transform is not None:
            grad = grad_transform(name, grad)
        grads[name] = grad

    rng = np.random.default_rng(seed)
    worst = 0.0
    elements = 0
    params = dict(module.named_parameters())
    with torch.no_grad():
        for name, grad in grads.items():
            p = params[name]
            n_elem = p.numel()
            count = min(samples_per_param, n_elem)
            n_top = (count + 1) // 2
            top = torch.topk(grad.view(-1).abs(), n_top).indices.tolist()
            remaining = np.setdiff1d(np.arange(n_elem), np.asarray(top))
            n_rand = min(count - n_top, remaining.size)
            picked = list(top) + [
                int(i) for i in rng.choice(remaining, size=n_rand, replace=False)
            ]
            flat = p.view(-1)
            for idx in picked:
                analytic = float(grad.view(-1)[idx])
                original = float(flat[idx])
                best = None
                for eps in eps_ladder:
                    flat[idx] = original + eps
                    f_plus = float(loss_fn())
                    flat[idx] = original - eps
                    f_minus = float(loss_fn())
                    flat[idx] = original
                    numeric = (f_plus - f_minus) / (2.0 * eps)
                    rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
                    best = rel if best is None else min(best, rel)
                    if best < accept:
                        break
                worst = max(worst, best)
                elements += 1
    module.zero_grad()
    return worst, elements


def _weighted_sum(out: torch.Tensor, seed: int) -> torch.Tensor:
    gen = torch.Generator().manual_seed(seed)
    w = torch.randn(out.shape, generator=gen, dtype=out.dtype)
    return (out * w).sum()


def _rand(shape, seed, scale=1.0):
    gen = torch.Generator().manual_seed(seed)
    return scale * torch.randn(shape, generator=gen, dtype=torch.float64)


def _priors_16(b: int = 1) -> LatentPriors:
    shapes = [(b, 40, 16, 16), (b, 80, 8, 8), (b, 160, 4, 4), (b, 320, 2, 2)]
    stages = [_rand(s, 90 + i, 0.5) for i, s in enumerate(shapes)]
    mu = _rand(shapes[-1], 99, 0.5)
    return LatentPriors(*stages, mu=mu, logvar=torch.zeros(shapes[-1], dtype=torch.float64))


def _build(name: str):
    """Block + deterministic double-precision loss closure."""
    if name == "res_attn":
        torch.manual_seed(100)
        block = ResAttnBlock(8).double()
        x = _rand((1, 8, 8, 8), 1)
        return block, lambda: _weighted_sum(block(x), 2)
    if name == "self_attention":
        torch.manual_seed(101)
        block = MultiHeadSelfAttention(8, heads=2).double()
        x = _rand((1, 8, 4, 4), 3)
        return block, lambda: _weighted_sum(block(x), 4)
    if name == "modulated_attention":
        torch.manual_seed(102)
        block = ValueModulatedAttention(8, heads=2).double()
        f = _rand((1, 8, 4, 4), 5)
        x = torch.sigmoid(_rand((1, 8, 4, 4), 6))
        return block, lambda: _weighted_sum(block(f, x), 7)
    if name == "degradation_map":
        torch.manual_seed(103)
        block = DegradationMapBlock(8).double()
        args = [_rand((1, 8, 8, 8), 8 + i) for i in range(3)]
        return block, lambda: _weighted_sum(block(*args), 11)
    if name == "latent_fusion":
        torch.manual_seed(104)
        block = LatentFusion(8, heads=2).double()
        l3, c3, mu = (_rand((1, 8, 4, 4), 12 + i) for i in range(3))
        return block, lambda: _weighted_sum(block(l3, c3, mu), 15)
    if name == "decoder_stage":
        torch.manual_seed(105)
        block = GatedDecoderStage(8).double()
        u = _rand((1, 8, 8, 8), 16)
        g = torch.sigmoid(_rand((1, 1, 8, 8), 17))
        e = _rand((1, 8, 8, 8), 18)
        return block, lambda: _weighted_sum(block(u, g, e), 19)
    if name == "restoration_forward":
        net = RestorationNet(heads=4, seed=11).double()
        # The zero-initialized reconstruction conv and FiLM head would make
        # every upstream analytic gradient identically zero (a vacuous
        # check); nudge them off zero. Small weights plus a sub-unit input
        # also keep the output clamp inactive, so the loss stays smooth.
        gen = torch.Generator().manual_seed(77)
        with torch.no_grad():
            for p in (net.w_rec.weight, net.w_rec.bias,
                      net.fusion.film2.weight, net.fusion.film2.bias):
                p.copy_(0.02 * torch.randn(p.shape, generator=gen, dtype=p.dtype))
        img = 0.5 * torch.tanh(_rand((1, 3, 16, 16), 20))
        priors = _priors_16()
        return net, lambda: _weighted_sum(net(img, priors), 21)
    raise ValueError(f"unknown block name: {name!r}")


BLOCKS = (
    "res_attn",
    "self_attention",
    "modulated_attention",
    "degradation_map",
    "latent_fusion",
    "decoder_stage",
    "restoration_forward",
)

# The full forward pass is expensive per evaluation; sample fewer elements.
_SAMPLES = {"restoration_forward": 2}


def check_block(name: str, samples_per_param: int | None = None, seed: int = 0) -> BlockCheck:
    module, loss_fn = _build(name)
    samples = samples_per_param or _SAMPLES.get(name, 4)
    worst, n = finite_difference_max_error(
        loss_fn, module, samples_per_param=samples, seed=seed
    )
    return BlockCheck(name=name, max_rel_error=worst, elements=n)


def run_all(names: Sequence[str] | None = None, seed: int = 0) -> list[BlockCheck]:
    return [check_block(name, seed=seed) for name in (names or BLOCKS)]
