"""Adam optimizer with explicitly serializable state.

The moment buffers live in plain per-parameter dicts so the checkpoint
container can persist them as named arrays and restore them bit-exactly,
which keeps resumed training identical to an uninterrupted run.
"""

from __future__ import annotations

import torch

__all__ = ["adam_step", "Adam"]


def adam_step(
    param: torch.Tensor,
    grad: torch.Tensor,
    exp_avg: torch.Tensor,
    exp_avg_sq: torch.Tensor,
    step: int,
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.99,
    eps: float = 1e-8,
) -> None:
    """One in-place Adam update; ``step`` is 1-based (post-increment count).

    m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
    p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
    """
    exp_avg.mul_(beta1).add_(grad, alpha=1.0 - beta1)
    exp_avg_sq.mul_(beta2).addcmul_(grad, grad, value=1.0 - beta2)
    bias1 = 1.0 - beta1**step
    bias2 = 1.0 - beta2**step
    denom = (exp_avg_sq / bias2).sqrt_().add_(eps)
    param.addcdiv_(exp_avg, denom, value=-lr / bias1)


class Adam:
    """Minimal Adam over an ordered list of named parameters."""

    def __init__(self, named_params, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.99, eps: float = 1e-8):
        self.named_params = [(name, p) for name, p in named_params if p.requires_grad]
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.exp_avg = {name: torch.zeros_like(p) for name, p in self.named_params}
        self.exp_avg_sq = {name: torch.zeros_like(p) for name, p in self.named_params}

    @torch.no_grad()
    def step(self) -> None:
        self.step_count += 1
        for name, p in self.named_params:
            if p.grad is None:
                continue
            adam_step(
                p, p.grad, self.exp_avg[name], self.exp_avg_sq[name],
                self.step_count, self.lr, self.beta1, self.beta2, self.eps,
            )

    def zero_grad(self) -> None:
        for _, p in self.named_params:
            p.grad = None

    def state_arrays(self) -> dict[str, torch.Tensor]:
        """Flat name -> tensor view of the moment buffers, for checkpoints."""
        out: dict[str, torch.Tensor] = {}
        for name, _ in self.named_params:
            out[f"m/{name}"] = self.exp_avg[name]
            out[f"v/{name}"] = self.exp_avg_sq[name]
        return out

    def load_state_arrays(self, arrays: dict[str, torch.Tensor], step_count: int) -> None:
        for name, p in self.named_params:
            for prefix, store in (("m", self.exp_avg), ("v", self.exp_avg_sq)):
                src = arrays[f"{prefix}/{name}"]
                if tuple(src.shape) != tuple(p.shape):
                    raise ValueError(
                        f"optimizer state {prefix}/{name} has shape {tuple(src.shape)}, "
                        f"parameter has {tuple(p.shape)}"
                    )
                store[name] = src.clone().to(p.dtype)
        self.step_count = int(step_count)
