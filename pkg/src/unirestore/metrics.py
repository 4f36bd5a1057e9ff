"""Quality metrics, latent-cluster separation, and the evaluation report.

PSNR/SSIM operate on unit-range images; PSNR of a perfect prediction is
the +infinity sentinel, which reports serialize as a string and exclude
from means (with a count note). Silhouette is computed directly from
pairwise distances — small N makes the quadratic cost irrelevant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .dataset import PairedSample
from .errors import ConfigError, ShapeError
from .images import to_unit
from .losses import ssim
from .restoration import RestorationNet
from .training import ones_priors_like
from .vae import DegradationVAE

__all__ = [
    "psnr",
    "silhouette_score",
    "latent_embeddings",
    "latent_separation",
    "pca_2d",
    "EvalReport",
    "evaluate",
    "format_report",
]


def psnr(pred: torch.Tensor, target: torch.Tensor, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) in dB; +inf when the images are identical."""
    if pred.shape != target.shape:
        raise ShapeError(f"psnr shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    mse = (pred.double() - target.double()).pow(2).mean().item()
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def silhouette_score(features: np.ndarray, labels: Sequence[int]) -> float:
    """Mean silhouette over points: s = (b - a) / max(a, b).

    a is the mean distance to the point's own cluster (excluding itself),
    b the smallest mean distance to another cluster. Points in singleton
    clusters score 0, as do points where a = b = 0 (identical embeddings);
    a single cluster overall scores 0.
    """
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim != 2 or x.shape[0] != labels.shape[0]:
        raise ShapeError(
            f"features {x.shape} and labels {labels.shape} are inconsistent"
        )
    unique = np.unique(labels)
    if unique.size < 2:
        return 0.0
    diff = x[:, None, :] - x[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    scores = np.zeros(x.shape[0])
    for i in range(x.shape[0]):
        own = labels == labels[i]
        n_own = own.sum() - 1
        if n_own == 0:
            continue  # singleton cluster: s = 0
        a = dist[i, own].sum() / n_own
        b = min(dist[i, labels == other].mean() for other in unique if other != labels[i])
        denom = max(a, b)
        if denom > 0.0:
            scores[i] = (b - a) / denom
    return float(scores.mean())


def latent_embeddings(
    vae: DegradationVAE, dataset: Sequence[PairedSample], batch: int = 8
) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample GAP(mu) features and labels from degraded images."""
    if len(dataset) == 0:
        raise ConfigError("dataset is empty")
    feats, labels = [], []
    with torch.no_grad():
        for start in range(0, len(dataset), batch):
            chunk = dataset[start: start + batch]
            imgs = torch.from_numpy(np.stack([s.degraded for s in chunk]))
            priors = vae.infer_priors(imgs)
            feats.append(priors.mu.mean(dim=(2, 3)).numpy())
            labels.extend(s.label for s in chunk)
    return np.concatenate(feats, axis=0), np.asarray(labels)


def latent_separation(
    vae: DegradationVAE, dataset: Sequence[PairedSample], seed: int = 0
) -> tuple[float, float]:
    """Silhouette under true labels vs. a seeded label permutation."""
    feats, labels = latent_embeddings(vae, dataset)
    shuffled = np.random.default_rng(seed).permutation(labels)
    return silhouette_score(feats, labels), silhouette_score(feats, shuffled)


def pca_2d(features: np.ndarray) -> np.ndarray:
    """Project row vectors onto their top two principal components."""
    x = np.asarray(features, dtype=np.float64)
    centered = x - x.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    k = min(2, vt.shape[0])
    coords = centered @ vt[:k].T
    if k < 2:
        coords = np.pad(coords, ((0, 0), (0, 2 - k)))
    return coords


@dataclass
class EvalReport:
    """Per-sample metrics plus class and overall summaries."""

    samples: list[dict] = field(default_factory=list)
    class_means: dict[int, dict] = field(default_factory=dict)
    overall: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.samples)


_METRIC_KEYS = ("psnr_degraded", "ssim_degraded", "psnr_restored", "ssim_restored")


def _finite_mean(values: Sequence[float]) -> tuple[float, int]:
    """Mean over finite entries; returns (mean, number of infinite entries)."""
    finite = [v for v in values if math.isfinite(v)]
    n_inf = len(values) - len(finite)
    if not finite:
        return math.inf, n_inf
    return float(np.mean(finite)), n_inf


def evaluate(
    net: RestorationNet,
    vae: DegradationVAE,
    dataset: Sequence[PairedSample],
    batch: int = 4,
    use_priors: bool = True,
) -> EvalReport:
    """Restore every sample and score it against its clean counterpart."""
    if len(dataset) == 0:
        raise ConfigError("dataset is empty")
    report = EvalReport()
    with torch.no_grad():
        for start in range(0, len(dataset), batch):
            chunk = dataset[start: start + batch]
            degraded = torch.from_numpy(np.stack([s.degraded for s in chunk]))
            clean = torch.from_numpy(np.stack([s.clean for s in chunk]))
            priors = vae.infer_priors(degraded)
            if not use_priors:
                priors = ones_priors_like(priors)
            restored = net(degraded, priors)
            for j, sample in enumerate(chunk):
                clean_u = to_unit(clean[j: j + 1])
                deg_u = to_unit(degraded[j: j + 1])
                rest_u = to_unit(restored[j: j + 1])
                report.samples.append({
                    "index": start + j,
                    "label": sample.label,
                    "psnr_degraded": psnr(deg_u, clean_u),
                    "ssim_degraded": float(ssim(deg_u, clean_u)),
                    "psnr_restored": psnr(rest_u, clean_u),
                    "ssim_restored": float(ssim(rest_u, clean_u)),
                })

    for label in sorted({s["label"] for s in report.samples}):
        rows = [s for s in report.samples if s["label"] == label]
        entry: dict = {"count": len(rows)}
        for key in _METRIC_KEYS:
            mean, n_inf = _finite_mean([r[key] for r in rows])
            entry[key] = mean
            entry[f"{key}_infinite"] = n_inf
        report.class_means[label] = entry

    overall: dict = {"count": report.count}
    for key in _METRIC_KEYS:
        mean, n_inf = _finite_mean([s[key] for s in report.samples])
        overall[key] = mean
        overall[f"{key}_infinite"] = n_inf
    report.overall = overall
    return report


def _fmt(value: float) -> str:
    if value == math.inf:
        return "inf"
    return f"{value:.6f}"


def format_report(report: EvalReport) -> str:
    """Structured text: one record per sample, then a summary block."""
    lines = []
    for s in report.samples:
        metrics = " ".join(f"{k}={_fmt(s[k])}" for k in _METRIC_KEYS)
        lines.append(f"sample index={s['index']} label={s['label']} {metrics}")
    lines.append("")
    lines.append(f"summary samples={report.count} classes={len(report.class_means)}")
    for label, entry in report.class_means.items():
        metrics = " ".join(f"{k}={_fmt(entry[k])}" for k in _METRIC_KEYS)
        notes = sum(entry[f"{k}_infinite"] for k in _METRIC_KEYS)
        suffix = f" infinite_excluded={notes}" if notes else ""
        lines.append(f"class label={label} count={entry['count']} {metrics}{suffix}")
    metrics = " ".join(f"{k}={_fmt(report.overall[k])}" for k in _METRIC_KEYS)
    notes = sum(report.overall[f"{k}_infinite"] for k in _METRIC_KEYS)
    suffix = f" infinite_excluded={notes}" if notes else ""
    lines.append(f"overall count={report.overall['count']} {metrics}{suffix}")
    return "\n".join(lines) + "\n"
