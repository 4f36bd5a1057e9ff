"""Training objectives: KL, supervised contrastive, SSIM, and the phase
loss assemblies.

All losses are differentiable torch expressions (phase-2 needs SSIM
gradients). The SSIM here matches the classic Gaussian-window form
(window 11, sigma 1.5, valid-region statistics); tests pin it against
scikit-image.
"""

from __future__ import annotations

import warnings

import torch
import torch.nn.functional as F

from .errors import ShapeError
from .images import to_unit

__all__ = [
    "kl_divergence",
    "kl_beta",
    "supcon_loss",
    "contrastive_features",
    "ssim",
    "vae_loss",
    "restoration_loss",
]


def kl_divergence(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """KL(q || N(0, I)): -1/2 sum(1 + logvar - mu^2 - exp(logvar)),
    summed over latent elements, averaged over the batch."""
    per_sample = 0.5 * (mu.pow(2) + logvar.exp() - 1.0 - logvar).flatten(1).sum(dim=1)
    return per_sample.mean()


def kl_beta(step: int, t1: int, beta_max: float = 0.3) -> float:
    """Linear KL annealing: 0 at step 0, beta_max from step t1 onward."""
    if t1 <= 0:
        return beta_max
    return min(beta_max, beta_max * step / t1)


def contrastive_features(x3: torch.Tensor) -> torch.Tensor:
    """L2-normalized global average pool of the deepest encoder features."""
    return F.normalize(x3.mean(dim=(2, 3)), dim=1, eps=1e-12)


def supcon_loss(features: torch.Tensor, labels, tau: float = 0.1) -> torch.Tensor:
    """Supervised contrastive loss with the positive sum inside the log.

    loss_i = -log( sum_{j in P_i} exp(s_ij / tau) / sum_{k != i} exp(s_ik / tau) )

    averaged over anchors that have at least one positive; anchors without
    positives are excluded. If no anchor qualifies (singleton batch or all
    classes unique) the loss is 0 and a RuntimeWarning is emitted.

    Args:
        features: (N, D), rows L2-normalized by the caller.
        labels: (N,) integer class ids.
        tau: temperature.
    """
    if features.ndim != 2:
        raise ShapeError(f"features must be (N, D), got {tuple(features.shape)}")
    n = features.shape[0]
    labels = torch.as_tensor(labels, device=features.device).reshape(-1)
    if labels.shape[0] != n:
        raise ShapeError(f"labels length {labels.shape[0]} != batch {n}")
    eye = torch.eye(n, dtype=torch.bool, device=features.device)
    positives = (labels[:, None] == labels[None, :]) & ~eye
    valid = positives.any(dim=1)
    if n < 2 or not bool(valid.any()):
        warnings.warn("supcon_loss: no anchor has a positive; returning 0", RuntimeWarning)
        return features.new_zeros(())
    sim = (features @ features.T) / tau
    denom = sim.masked_fill(eye, float("-inf")).logsumexp(dim=1)
    numer = sim.masked_fill(~positives, float("-inf")).logsumexp(dim=1)
    return (denom - numer)[valid].mean()


def _gaussian_window(size: int, sigma: float, dtype, device) -> torch.Tensor:
    ax = torch.arange(size, dtype=dtype, device=device) - (size - 1) / 2.0
    g = torch.exp(-(ax**2) / (2.0 * sigma**2))
    k = torch.outer(g, g)
    return k / k.sum()


def ssim(
    x: torch.Tensor,
    y: torch.Tensor,
    data_range: float = 1.0,
    window_size: int = 11,
    sigma: float = 1.5,
) -> torch.Tensor:
    """Mean structural similarity over a batch, Gaussian-weighted local
    statistics on the valid (un-padded) region, channels averaged.

    Inputs are (B, C, H, W) in [0, data_range].
    """
    if x.shape != y.shape:
        raise ShapeError(f"ssim inputs differ: {tuple(x.shape)} vs {tuple(y.shape)}")
    if x.shape[2] < window_size or x.shape[3] < window_size:
        raise ShapeError(f"ssim needs H,W >= {window_size}, got {tuple(x.shape[2:])}")
    c = x.shape[1]
    window = _gaussian_window(window_size, sigma, x.dtype, x.device)
    kernel = window.expand(c, 1, window_size, window_size)

    def filt(t):
        return F.conv2d(t, kernel, groups=c)

    mu_x, mu_y = filt(x), filt(y)
    var_x = filt(x * x) - mu_x * mu_x
    var_y = filt(y * y) - mu_y * mu_y
    cov = filt(x * y) - mu_x * mu_y
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return (num / den).mean()


def vae_loss(
    recon: torch.Tensor,
    target: torch.Tensor,
    mu: torch.Tensor,
    logvar: torch.Tensor,
    features: torch.Tensor,
    labels,
    step: int,
    t1: int,
    beta_max: float = 0.3,
    lambda_con: float = 0.01,
) -> tuple[torch.Tensor, dict]:
    """Phase-1 objective: L1 + beta(step) * KL + lambda_con * SupCon."""
    l1 = (recon - target).abs().mean()
    kl = kl_divergence(mu, logvar)
    con = supcon_loss(features, labels)
    beta = kl_beta(step, t1, beta_max)
    total = l1 + beta * kl + lambda_con * con
    parts = {
        "l1": float(l1.detach()),
        "kl": float(kl.detach()),
        "supcon": float(con.detach()),
        "beta": beta,
        "total": float(total.detach()),
    }
    return total, parts


def restoration_loss(
    pred: torch.Tensor,
    target: torch.Tensor,
    lambda_ssim: float = 1.0,
) -> tuple[torch.Tensor, dict]:
    """Phase-2 objective on [0,1]-renormalized images: L1 + lambda*(1 - SSIM)."""
    pred_u, target_u = to_unit(pred), to_unit(target)
    l1 = (pred_u - target_u).abs().mean()
    s = ssim(pred_u, target_u)
    total = l1 + lambda_ssim * (1.0 - s)
    parts = {
        "l1": float(l1.detach()),
        "ssim": float(s.detach()),
        "total": float(total.detach()),
    }
    return total, parts
