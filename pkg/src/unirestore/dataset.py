"""Paired (clean, degraded, label) datasets from procedural base textures.

Everything is generated on the fly from seeds: no external data. Samples
hand the networks signed-range float32 arrays; the on-disk form is 8-bit
PNG pairs plus a JSONL manifest (one record per sample: paths, label,
serialized degradation specs).
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .degradations import DegradationSpec, Recipe, compose
from .errors import DataError
from .images import load_png, require_spatial_multiple, save_png, to_signed, to_unit

__all__ = [
    "PairedSample",
    "base_textures",
    "make_dataset",
    "save_dataset",
    "load_dataset",
    "toy_degradation_classes",
]


@dataclass
class PairedSample:
    """One training pair in signed range, with its provenance."""

    clean: np.ndarray  # (3, H, W) float32, signed range
    degraded: np.ndarray  # same shape/range
    label: int
    specs: tuple[DegradationSpec, ...]

    def __post_init__(self):
        if self.clean.shape != self.degraded.shape:
            raise DataError(
                f"clean/degraded shape mismatch: {self.clean.shape} vs {self.degraded.shape}"
            )


def base_textures(count: int, size: int = 64, seed: int = 0) -> list[np.ndarray]:
    """Generate procedural clean images: gradients, checkerboards,
    filtered noise, and geometric shapes, cycling through the families.

    Returns unit-range float32 (3, size, size) arrays, deterministic
    under ``seed``.
    """
    streams = np.random.SeedSequence(seed).spawn(count)
    out = []
    for i, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        family = i % 4
        if family == 0:
            img = _gradient(size, rng)
        elif family == 1:
            img = _checkerboard(size, rng)
        elif family == 2:
            img = _filtered_noise(size, rng)
        else:
            img = _shapes(size, rng)
        out.append(np.clip(img, 0.0, 1.0).astype(np.float32))
    return out


def _gradient(size: int, rng) -> np.ndarray:
    theta = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / max(size - 1, 1)
    ramp = xx * np.cos(theta) + yy * np.sin(theta)
    ramp = (ramp - ramp.min()) / max(float(np.ptp(ramp)), 1e-6)
    c0 = rng.uniform(0.05, 0.95, size=3).astype(np.float32)
    c1 = rng.uniform(0.05, 0.95, size=3).astype(np.float32)
    return c0[:, None, None] + (c1 - c0)[:, None, None] * ramp[None]


def _checkerboard(size: int, rng) -> np.ndarray:
    cell = int(rng.integers(4, max(5, size // 4)))
    yy, xx = np.mgrid[0:size, 0:size]
    board = ((yy // cell + xx // cell) % 2).astype(np.float32)
    c0 = rng.uniform(0.05, 0.95, size=3).astype(np.float32)
    c1 = rng.uniform(0.05, 0.95, size=3).astype(np.float32)
    return c0[:, None, None] + (c1 - c0)[:, None, None] * board[None]


def _filtered_noise(size: int, rng) -> np.ndarray:
    # Smooth colored blobs: upsampled low-resolution noise.
    low = max(4, size // 8)
    coarse = rng.uniform(0.1, 0.9, size=(3, low, low)).astype(np.float32)
    img = np.array([np.kron(c, np.ones((size // low, size // low), np.float32)) for c in coarse])
    # Light box smoothing to soften the block edges.
    pad = np.pad(img, ((0, 0), (2, 2), (2, 2)), mode="reflect")
    win = np.lib.stride_tricks.sliding_window_view(pad, (5, 5), axis=(1, 2))
    return win.mean(axis=(-1, -2)).astype(np.float32)


def _shapes(size: int, rng) -> np.ndarray:
    img = _gradient(size, rng)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    for _ in range(int(rng.integers(3, 7))):
        color = rng.uniform(0.05, 0.95, size=3).astype(np.float32)
        cx, cy = rng.uniform(0, size, size=2)
        if rng.random() < 0.5:
            r = rng.uniform(size * 0.06, size * 0.2)
            inside = (xx - cx) ** 2 + (yy - cy) ** 2 < r * r
        else:
            hw = rng.uniform(size * 0.05, size * 0.18, size=2)
            inside = (np.abs(xx - cx) < hw[0]) & (np.abs(yy - cy) < hw[1])
        img[:, inside] = color[:, None]
    return img


def toy_degradation_classes() -> list[tuple[DegradationSpec, ...]]:
    """The default 4-class task: noise, haze, low light, rain.

    Parameter choices keep the classes statistically well separated.
    """
    return [
        (DegradationSpec("noise", {"sigma": 25.0 / 255.0}),),
        (DegradationSpec("haze", {"transmission": 0.6, "airlight": 0.9}),),
        (DegradationSpec("lowlight", {"gamma": 2.2, "gain": 0.35}),),
        (DegradationSpec("rain", {"density": 0.15, "intensity": 0.7}),),
    ]


def _as_recipe(entry: DegradationSpec | Recipe) -> tuple[DegradationSpec, ...]:
    if isinstance(entry, DegradationSpec):
        return (entry,)
    return tuple(entry)


def make_dataset(
    base_images: Sequence[np.ndarray],
    class_specs: Sequence[DegradationSpec | Recipe],
    per_class: int,
    seed: int = 0,
) -> list[PairedSample]:
    """Assemble a balanced labeled dataset.

    Each class is one recipe (a spec or an ordered compound). Per-sample
    seeds are derived from ``(seed, label, sample index, part index)`` so
    generation is deterministic and order-independent; the derived seeds
    are stored back into the sample's specs for exact reproducibility.

    Args:
        base_images: unit-range (3, H, W) arrays; cycled across samples.
        class_specs: one recipe per class; the list index is the label.
        per_class: samples per class (0 gives an empty dataset).
        seed: master seed.

    Returns:
        ``len(class_specs) * per_class`` samples in signed range, ordered
        by (label, index).
    """
    if per_class < 0:
        raise DataError(f"per_class must be >= 0, got {per_class}")
    if per_class > 0 and not base_images:
        raise DataError("make_dataset needs at least one base image")
    for img in base_images:
        if img.ndim != 3 or img.shape[0] != 3:
            raise DataError(f"base images must be (3, H, W), got {img.shape}")
        require_spatial_multiple(img.shape[1], img.shape[2])

    samples: list[PairedSample] = []
    for label, entry in enumerate(class_specs):
        recipe = _as_recipe(entry)
        for j in range(per_class):
            clean = np.asarray(base_images[(label * per_class + j) % len(base_images)], np.float32)
            parts = []
            for p_idx, part in enumerate(recipe):
                derived = np.random.SeedSequence([seed, label, j, p_idx, part.seed])
                parts.append(
                    dataclasses.replace(part, seed=int(derived.generate_state(1)[0]), label=label)
                )
            degraded = compose(clean[None], parts)[0]
            samples.append(
                PairedSample(
                    clean=to_signed(clean).astype(np.float32),
                    degraded=to_signed(degraded).astype(np.float32),
                    label=label,
                    specs=tuple(parts),
                )
            )
    return samples


def save_dataset(out_dir: str | os.PathLike, samples: Sequence[PairedSample]) -> Path:
    """Write PNG pairs plus a JSONL manifest; returns the manifest path."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    manifest = out / "dataset.jsonl"
    with open(manifest, "w") as fh:
        for i, s in enumerate(samples):
            clean_rel = f"images/clean_{i:04d}.png"
            deg_rel = f"images/deg_{i:04d}.png"
            save_png(out / clean_rel, to_unit(s.clean))
            save_png(out / deg_rel, to_unit(s.degraded))
            record = {
                "index": i,
                "clean": clean_rel,
                "degraded": deg_rel,
                "label": s.label,
                "specs": [json.loads(sp.to_json()) for sp in s.specs],
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    return manifest


def load_dataset(data_dir: str | os.PathLike) -> list[PairedSample]:
    """Load a saved dataset (values re-quantized to the 8-bit grid)."""
    root = Path(data_dir)
    manifest = root / "dataset.jsonl"
    if not manifest.is_file():
        raise DataError(f"no dataset manifest at {manifest}")
    samples = []
    with open(manifest) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            samples.append(
                PairedSample(
                    clean=to_signed(load_png(root / rec["clean"])).astype(np.float32),
                    degraded=to_signed(load_png(root / rec["degraded"])).astype(np.float32),
                    label=int(rec["label"]),
                    specs=tuple(DegradationSpec(**sp) for sp in rec["specs"]),
                )
            )
    return samples
