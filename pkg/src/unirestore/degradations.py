"""Synthetic degradation operators on unit-range images.

Every operator is a pure function: identical arguments (including seed)
produce bit-identical outputs, and outputs are clipped back into [0, 1].
Images are rank-4 float32 (B, C, H, W).

The haze/low-light/streak/blur models are simple physically-motivated
stand-ins chosen so the degradation classes are statistically distinct;
they make the repo self-contained without external datasets.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import ConfigError
from .images import validate_image

__all__ = [
    "DegradationSpec",
    "Recipe",
    "apply_gaussian_noise",
    "apply_haze",
    "apply_lowlight",
    "apply_streaks",
    "apply_blur",
    "apply_spec",
    "compose",
    "gaussian_kernel",
]

KINDS = ("noise", "haze", "lowlight", "rain", "snow", "blur")


@dataclass(frozen=True)
class DegradationSpec:
    """Declarative description of one corruption.

    Attributes:
        kind: one of ``noise, haze, lowlight, rain, snow, blur``.
        params: kind-specific parameters (see the ``apply_*`` operators).
        seed: drives any randomness in the operator.
        label: dense class id, assigned by dataset assembly.
    """

    kind: str
    params: dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    label: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown degradation kind {self.kind!r}; expected one of {KINDS}")

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DegradationSpec":
        return cls(**json.loads(text))


# A class recipe is one spec or an ordered compound of specs.
Recipe = Sequence[DegradationSpec]


def _check_input(img: np.ndarray) -> np.ndarray:
    validate_image(img, "unit")
    return np.asarray(img, dtype=np.float32)


def apply_gaussian_noise(img: np.ndarray, sigma: float, seed: int = 0) -> np.ndarray:
    """Additive i.i.d. Gaussian noise, clipped to [0, 1].

    Args:
        img: (B, C, H, W) unit-range image.
        sigma: noise standard deviation on the unit scale (8-bit sigma / 255).
        seed: RNG seed; same seed reproduces the noise field exactly.
    """
    img = _check_input(img)
    if sigma < 0:
        raise ConfigError(f"noise sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return img.copy()
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=img.shape).astype(np.float32)
    return np.clip(img + noise, 0.0, 1.0)


def apply_haze(img: np.ndarray, transmission: float, airlight: float) -> np.ndarray:
    """Atmospheric scattering: ``out = img * t + A * (1 - t)``.

    ``t`` must be in (0, 1]; t=0 would destroy the image entirely.
    """
    img = _check_input(img)
    if not 0.0 < transmission <= 1.0:
        raise ConfigError(f"transmission must be in (0, 1], got {transmission}")
    if not 0.0 <= airlight <= 1.0:
        raise ConfigError(f"airlight must be in [0, 1], got {airlight}")
    out = img * np.float32(transmission) + np.float32(airlight * (1.0 - transmission))
    return np.clip(out, 0.0, 1.0)


def apply_lowlight(img: np.ndarray, gamma: float, gain: float) -> np.ndarray:
    """Under-exposure model: ``out = gain * img ** gamma``."""
    img = _check_input(img)
    if gamma < 1.0:
        raise ConfigError(f"gamma must be >= 1, got {gamma}")
    if not 0.0 < gain <= 1.0:
        raise ConfigError(f"gain must be in (0, 1], got {gain}")
    out = np.float32(gain) * np.power(img, np.float32(gamma))
    return np.clip(out, 0.0, 1.0)


def apply_streaks(
    img: np.ndarray,
    kind: str,
    density: float,
    intensity: float,
    angle: float = 105.0,
    seed: int = 0,
) -> np.ndarray:
    """Additive rain streaks (oriented line segments) or snow (elliptical blobs).

    The particle count is calibrated via a Poisson coverage model so the
    fraction of touched pixels approximates ``density``. Deterministic
    under ``seed``.

    Args:
        img: (B, C, H, W) unit-range image.
        kind: "rain" or "snow".
        density: target fraction of pixels covered by streaks, >= 0.
        intensity: additive brightness of the overlay, in [0, 1].
        angle: streak orientation in degrees (rain fall direction /
            snow ellipse orientation).
        seed: RNG seed.
    """
    img = _check_input(img)
    if kind not in ("rain", "snow"):
        raise ConfigError(f"streak kind must be 'rain' or 'snow', got {kind!r}")
    if density < 0:
        raise ConfigError(f"density must be >= 0, got {density}")
    if density == 0:
        return img.copy()
    b, _, h, w = img.shape
    rng = np.random.default_rng(seed)
    out = img.copy()
    for i in range(b):
        mask = _streak_mask(kind, h, w, density, angle, rng)
        out[i] = np.clip(out[i] + np.float32(intensity) * mask[None], 0.0, 1.0)
    return out


def _streak_mask(kind: str, h: int, w: int, density: float, angle: float, rng) -> np.ndarray:
    """Accumulate anti-aliased particle weights into an (H, W) float32 mask."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    mask = np.zeros((h, w), dtype=np.float32)
    theta = math.radians(angle)
    if kind == "rain":
        # Mean streak footprint: length * ~1.6 px anti-aliased width.
        mean_len = max(6.0, 0.18 * min(h, w))
        area = mean_len * 1.6
    else:
        # Mean blob footprint: pi * a * b with jittered axes.
        area = math.pi * 2.2 * 1.3
    # Poisson coverage: covered fraction = 1 - exp(-n * area / (h * w)).
    target = min(density, 0.95)
    count = max(1, int(round(-math.log(1.0 - target) * h * w / area)))
    for _ in range(count):
        cx = rng.uniform(0, w)
        cy = rng.uniform(0, h)
        bright = rng.uniform(0.7, 1.0)
        if kind == "rain":
            half = 0.5 * mean_len * rng.uniform(0.7, 1.3)
            jitter = math.radians(rng.uniform(-4.0, 4.0))
            dx, dy = math.cos(theta + jitter), math.sin(theta + jitter)
            # Signed projection onto the segment axis, clamped to its extent,
            # yields the distance field of a capsule (rounded line segment).
            px, py = xx - cx, yy - cy
            along = np.clip(px * dx + py * dy, -half, half)
            dist = np.hypot(px - along * dx, py - along * dy)
            weight = np.clip(1.3 - dist, 0.0, 1.0)
        else:
            a = 2.2 * rng.uniform(0.7, 1.4)
            bb = 1.3 * rng.uniform(0.7, 1.4)
            rot = theta + math.radians(rng.uniform(-20.0, 20.0))
            ca, sa = math.cos(rot), math.sin(rot)
            px, py = xx - cx, yy - cy
            u = (px * ca + py * sa) / a
            v = (-px * sa + py * ca) / bb
            weight = np.clip(1.2 * (1.0 - (u * u + v * v)), 0.0, 1.0)
        np.maximum(mask, np.float32(bright) * weight.astype(np.float32), out=mask)
    return mask


def gaussian_kernel(kernel_size: int, sigma: float) -> np.ndarray:
    """2-D Gaussian kernel normalized to sum 1, float32 (k, k)."""
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ConfigError(f"kernel_size must be a positive odd integer, got {kernel_size}")
    if sigma <= 0:
        raise ConfigError(f"blur sigma must be > 0, got {sigma}")
    half = kernel_size // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    g1 = np.exp(-(ax**2) / (2.0 * sigma**2))
    k2 = np.outer(g1, g1)
    return (k2 / k2.sum()).astype(np.float32)


def apply_blur(img: np.ndarray, kernel_size: int, sigma: float) -> np.ndarray:
    """2-D Gaussian convolution with reflect padding.

    ``kernel_size=1`` is the identity; the kernel always sums to 1 so
    constant images pass through unchanged.
    """
    img = _check_input(img)
    kernel = gaussian_kernel(kernel_size, sigma)
    if kernel_size == 1:
        return img.copy()
    half = kernel_size // 2
    padded = np.pad(img, ((0, 0), (0, 0), (half, half), (half, half)), mode="reflect")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kernel_size, kernel_size), axis=(2, 3))
    out = np.einsum("bchwij,ij->bchw", windows, kernel, optimize=True).astype(np.float32)
    return np.clip(out, 0.0, 1.0)


def apply_spec(img: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Apply a single degradation spec to a unit-range image."""
    p = spec.params
    if spec.kind == "noise":
        return apply_gaussian_noise(img, sigma=p["sigma"], seed=spec.seed)
    if spec.kind == "haze":
        return apply_haze(img, transmission=p["transmission"], airlight=p["airlight"])
    if spec.kind == "lowlight":
        return apply_lowlight(img, gamma=p["gamma"], gain=p["gain"])
    if spec.kind in ("rain", "snow"):
        return apply_streaks(
            img,
            kind=spec.kind,
            density=p["density"],
            intensity=p["intensity"],
            angle=p.get("angle", 105.0),
            seed=spec.seed,
        )
    if spec.kind == "blur":
        return apply_blur(img, kernel_size=p["kernel_size"], sigma=p["sigma"])
    raise ConfigError(f"unknown degradation kind {spec.kind!r}")


def compose(img: np.ndarray, specs: Recipe) -> np.ndarray:
    """Apply specs left to right; order is part of the recipe."""
    out = _check_input(img).copy()
    for spec in specs:
        out = apply_spec(out, spec)
    return out
