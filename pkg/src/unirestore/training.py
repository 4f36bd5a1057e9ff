"""Two-phase training: VAE pretraining with KL annealing and supervised
contrast, then restoration training against frozen priors.

Every stochastic choice (batch membership, crop offsets, reparameterization
noise) is derived from ``(seed, step)`` alone, so a resumed run replays the
exact arithmetic of an uninterrupted one and two runs with the same config
produce identical traces.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .checkpoint import (
    check_config_hash,
    config_hash,
    load_checkpoint,
    load_module_arrays,
    module_arrays,
    module_byte_hash,
    save_checkpoint,
)
from .dataset import PairedSample
from .errors import ConfigError, DataError, NumericError
from .losses import contrastive_features, restoration_loss, vae_loss
from .optim import Adam
from .restoration import RestorationNet
from .vae import DegradationVAE, LatentPriors

__all__ = [
    "TrainConfig",
    "parse_config_file",
    "make_config",
    "batch_indices",
    "sample_batch",
    "ones_priors_like",
    "train_vae",
    "train_restoration",
    "load_vae",
    "load_restoration",
    "write_trace_csv",
]

logger = logging.getLogger("unirestore.training")

# Fixed salts separating the independent per-step random streams.
_ORDER_SALT = 7919
_CROP_SALT = 104729
_EPS_SALT = 15485863


@dataclass
class TrainConfig:
    """Hyperparameters for both phases; defaults are desk-scale."""

    t1: int = 3000
    t2: int = 5000
    beta_max: float = 0.3
    lambda_con: float = 0.01
    lambda_ssim: float = 1.0
    lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    batch: int = 4
    patch: int = 64
    seed: int = 0
    grad_clip: float = 1.0
    ckpt_every: int = 500
    heads: int = 4

    def __post_init__(self):
        for name in ("t1", "t2", "batch", "patch", "ckpt_every", "heads"):
            value = getattr(self, name)
            if not isinstance(value, int) or value <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        for name in ("beta_max", "lambda_con", "lambda_ssim", "lr",
                     "adam_beta1", "adam_beta2", "grad_clip"):
            value = getattr(self, name)
            if not value > 0:
                raise ConfigError(f"{name} must be positive, got {value!r}")
        if self.patch % 8 != 0:
            raise ConfigError(f"patch must be a multiple of 8, got {self.patch}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def parse_config_file(path) -> dict[str, str]:
    """Read a flat ``key = value`` file; '#' starts a comment."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    mapping: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        mapping[key] = value
    return mapping


def make_config(mapping: dict | None = None, **overrides) -> TrainConfig:
    """Build a TrainConfig from string/typed values; unknown keys rejected."""
    fields = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    merged: dict = dict(mapping or {})
    merged.update({k: v for k, v in overrides.items() if v is not None})
    kwargs = {}
    for key, value in merged.items():
        if key not in fields:
            raise ConfigError(f"unknown config key: {key!r}")
        target = int if fields[key] == "int" else float
        try:
            kwargs[key] = target(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config key {key!r}: cannot parse {value!r}") from exc
    return TrainConfig(**kwargs)


def batch_indices(step: int, batch: int, n: int, seed: int) -> list[int]:
    """Dataset indices for one step under per-epoch shuffling.

    Sample ``step*batch + k`` lives in epoch ``pos // n`` at position
    ``pos % n`` of that epoch's permutation, seeded from (seed, epoch).
    """
    out = []
    for k in range(batch):
        pos = step * batch + k
        epoch, offset = divmod(pos, n)
        order = np.random.default_rng([seed, _ORDER_SALT, epoch]).permutation(n)
        out.append(int(order[offset]))
    return out


def sample_batch(
    dataset: Sequence[PairedSample], step: int, config: TrainConfig
) -> tuple[torch.Tensor, torch.Tensor, list[int]]:
    """Assemble one (clean, degraded, labels) batch of random crops."""
    n = len(dataset)
    rng = np.random.default_rng([config.seed, _CROP_SALT, step])
    clean_crops, deg_crops, labels = [], [], []
    for idx in batch_indices(step, config.batch, n, config.seed):
        sample = dataset[idx]
        _, h, w = sample.clean.shape
        if h < config.patch or w < config.patch:
            raise ConfigError(
                f"patch {config.patch} exceeds image size {h}x{w} (sample {idx})"
            )
        top = int(rng.integers(0, h - config.patch + 1))
        left = int(rng.integers(0, w - config.patch + 1))
        sl = np.s_[:, top: top + config.patch, left: left + config.patch]
        clean_crops.append(torch.from_numpy(sample.clean[sl].copy()))
        deg_crops.append(torch.from_numpy(sample.degraded[sl].copy()))
        labels.append(sample.label)
    return torch.stack(clean_crops), torch.stack(deg_crops), labels


def _eps_generator(seed: int, step: int) -> torch.Generator:
    derived = np.random.SeedSequence([seed, _EPS_SALT, step]).generate_state(1, np.uint64)
    gen = torch.Generator()
    gen.manual_seed(int(derived[0]))
    return gen


def ones_priors_like(priors: LatentPriors) -> LatentPriors:
    """Ablation conditioning: every stage map and mu replaced by ones."""
    return LatentPriors(
        *(torch.ones_like(t) for t in priors.stages()),
        mu=torch.ones_like(priors.mu),
        logvar=torch.zeros_like(priors.logvar),
    )


def write_trace_csv(trace: Sequence[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    keys: list[str] = []
    for record in trace:
        for key in record:
            if key not in keys:
                keys.append(key)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(trace)
    return path


def _check_dataset(dataset: Sequence[PairedSample]) -> None:
    if len(dataset) == 0:
        raise ConfigError("dataset is empty")


def _finite_or_raise(parts: dict, step: int, phase: str) -> None:
    if not math.isfinite(parts["total"]):
        raise NumericError(
            f"non-finite loss at {phase} step {step}: {parts} "
            f"(last-good checkpoint, if any, is preserved on disk)"
        )


def _log_step(phase: str, record: dict) -> None:
    parts = " ".join(
        f"{k}={v:.6f}" if isinstance(v, float) else f"{k}={v}"
        for k, v in record.items()
    )
    logger.info("%s %s", phase, parts)


def train_vae(
    dataset: Sequence[PairedSample],
    config: TrainConfig,
    out_dir=None,
    resume=None,
) -> tuple[DegradationVAE, list[dict]]:
    """Phase 1: pretrain the VAE on degraded crops.

    Writes/refreshes ``vae.ckpt`` under ``out_dir`` every ``ckpt_every``
    steps and at the end; ``resume`` continues from such a checkpoint with
    arithmetic identical to an uninterrupted run.
    """
    _check_dataset(dataset)
    vae = DegradationVAE(heads=config.heads, seed=config.seed)
    opt = Adam(vae.named_parameters(), config.lr, config.adam_beta1,
               config.adam_beta2)
    start = 0
    if resume is not None:
        arrays, meta = load_checkpoint(resume)
        check_config_hash(meta, config.to_dict())
        load_module_arrays(vae, arrays, "vae")
        opt.load_state_arrays(
            {k[len("opt/"):]: torch.from_numpy(v) for k, v in arrays.items()
             if k.startswith("opt/")},
            meta["step"],
        )
        start = int(meta["step"])

    ckpt_path = Path(out_dir) / "vae.ckpt" if out_dir is not None else None

    def save(step_done: int) -> None:
        if ckpt_path is None:
            return
        arrays = module_arrays(vae, "vae")
        arrays.update({f"opt/{k}": v for k, v in opt.state_arrays().items()})
        save_checkpoint(ckpt_path, arrays, meta={
            "phase": "vae",
            "step": step_done,
            "config": config.to_dict(),
            "config_hash": config_hash(config.to_dict()),
        })

    trace: list[dict] = []
    for step in range(start, config.t1):
        t0 = time.perf_counter()
        _, degraded, labels = sample_batch(dataset, step, config)
        recon, priors = vae(degraded, generator=_eps_generator(config.seed, step))
        features = contrastive_features(priors.x3)
        total, parts = vae_loss(
            recon, degraded, priors.mu, priors.logvar, features, labels,
            step, config.t1, config.beta_max, config.lambda_con,
        )
        _finite_or_raise(parts, step, "phase1")
        opt.zero_grad()
        total.backward()
        torch.nn.utils.clip_grad_norm_(
            [p for _, p in opt.named_params], config.grad_clip
        )
        opt.step()
        record = {"step": step, **parts, "wall": time.perf_counter() - t0}
        trace.append(record)
        _log_step("phase1", record)
        if (step + 1) % config.ckpt_every == 0 or step + 1 == config.t1:
            save(step + 1)
    if start >= config.t1:
        save(start)
    return vae, trace


def train_restoration(
    dataset: Sequence[PairedSample],
    vae_ckpt,
    config: TrainConfig,
    out_dir=None,
    resume=None,
    use_priors: bool = True,
) -> tuple[RestorationNet, DegradationVAE, list[dict]]:
    """Phase 2: train the restoration network against frozen priors.

    The VAE is loaded from ``vae_ckpt``, frozen, and byte-hashed; the hash
    is re-verified after training. Priors are computed per batch without
    gradient tracking. ``use_priors=False`` replaces every stage map and mu
    with ones (the conditioning ablation). The phase-2 checkpoint embeds
    both the ``rest/`` and ``vae/`` namespaces, so it is self-contained.
    """
    _check_dataset(dataset)
    vae_arrays, vae_meta = load_checkpoint(vae_ckpt)
    vae = DegradationVAE(heads=config.heads, seed=config.seed)
    load_module_arrays(vae, vae_arrays, "vae")
    vae.requires_grad_(False)
    vae.eval()
    frozen_hash = module_byte_hash(vae)

    net = RestorationNet(heads=config.heads, seed=config.seed)
    opt = Adam(net.named_parameters(), config.lr, config.adam_beta1,
               config.adam_beta2)
    start = 0
    if resume is not None:
        arrays, meta = load_checkpoint(resume)
        check_config_hash(meta, config.to_dict())
        load_module_arrays(net, arrays, "rest")
        opt.load_state_arrays(
            {k[len("opt/"):]: torch.from_numpy(v) for k, v in arrays.items()
             if k.startswith("opt/")},
            meta["step"],
        )
        start = int(meta["step"])

    ckpt_path = Path(out_dir) / "rest.ckpt" if out_dir is not None else None

    def save(step_done: int) -> None:
        if ckpt_path is None:
            return
        arrays = module_arrays(net, "rest")
        arrays.update(module_arrays(vae, "vae"))
        arrays.update({f"opt/{k}": v for k, v in opt.state_arrays().items()})
        save_checkpoint(ckpt_path, arrays, meta={
            "phase": "rest",
            "step": step_done,
            "config": config.to_dict(),
            "config_hash": config_hash(config.to_dict()),
            "vae_hash": frozen_hash,
            "vae_step": int(vae_meta.get("step", -1)),
            "use_priors": bool(use_priors),
        })

    trace: list[dict] = []
    for step in range(start, config.t2):
        t0 = time.perf_counter()
        clean, degraded, _ = sample_batch(dataset, step, config)
        with torch.no_grad():
            priors = vae.infer_priors(degraded)
        if not use_priors:
            priors = ones_priors_like(priors)
        pred = net(degraded, priors)
        total, parts = restoration_loss(pred, clean, config.lambda_ssim)
        _finite_or_raise(parts, step, "phase2")
        opt.zero_grad()
        total.backward()
        torch.nn.utils.clip_grad_norm_(
            [p for _, p in opt.named_params], config.grad_clip
        )
        opt.step()
        record = {"step": step, **parts, "wall": time.perf_counter() - t0}
        trace.append(record)
        _log_step("phase2", record)
        if (step + 1) % config.ckpt_every == 0 or step + 1 == config.t2:
            save(step + 1)
    if start >= config.t2:
        save(start)

    if module_byte_hash(vae) != frozen_hash:
        raise NumericError("frozen VAE parameters changed during phase 2")
    return net, vae, trace


def load_vae(path, heads: int = 4) -> tuple[DegradationVAE, dict]:
    """Rebuild a VAE from any checkpoint carrying the ``vae/`` namespace."""
    arrays, meta = load_checkpoint(path)
    vae = DegradationVAE(heads=heads, seed=0)
    load_module_arrays(vae, arrays, "vae")
    vae.requires_grad_(False)
    vae.eval()
    return vae, meta


def load_restoration(path, heads: int = 4) -> tuple[RestorationNet, DegradationVAE, dict]:
    """Rebuild the restoration net and its VAE from a phase-2 checkpoint.

    Raises DataError when the ``vae/`` namespace is absent: restoration
    always conditions on priors, so a checkpoint without the VAE that
    produced them is unusable.
    """
    arrays, meta = load_checkpoint(path)
    net = RestorationNet(heads=heads, seed=0)
    load_module_arrays(net, arrays, "rest")
    net.requires_grad_(False)
    net.eval()
    vae = DegradationVAE(heads=heads, seed=0)
    load_module_arrays(vae, arrays, "vae")
    vae.requires_grad_(False)
    vae.eval()
    return net, vae, meta
