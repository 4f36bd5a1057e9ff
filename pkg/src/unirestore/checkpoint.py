"""Single-file checkpoint container for named arrays plus JSON metadata.

Layout: 8-byte magic, uint64 little-endian header size, a UTF-8 JSON
header ``{"meta": ..., "arrays": {name: {dtype, shape, offset, nbytes}}}``,
then the raw C-order array payload. Round trips are bit-exact; top-level
namespaces (``vae/``, ``rest/``, ``opt/``) keep the two networks and the
optimizer state in one file without collisions.
"""

from __future__ import annotations

import hashlib
import json
import sys
import warnings
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

from .errors import DataError

__all__ = [
    "save_checkpoint",
    "load_checkpoint",
    "config_hash",
    "check_config_hash",
    "module_arrays",
    "load_module_arrays",
    "module_byte_hash",
]

MAGIC = b"URCKPT01"


def _as_numpy(value) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        return value.detach().cpu().numpy()
    return np.asarray(value)


def save_checkpoint(path, arrays: Mapping[str, object], meta: dict | None = None) -> Path:
    """Write named arrays (numpy or torch) and JSON-serializable metadata."""
    if sys.byteorder != "little":
        raise DataError("checkpoint format requires a little-endian platform")
    path = Path(path)
    entries: dict[str, dict] = {}
    blobs: list[bytes] = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(_as_numpy(arrays[name]))
        blob = arr.tobytes()
        entries[name] = {
            "dtype": arr.dtype.name,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(blob),
        }
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {"byteorder": "little", "meta": meta or {}, "arrays": entries},
        sort_keys=True,
    ).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint back as ``(name -> array, meta)``."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < len(MAGIC) + 8 or raw[: len(MAGIC)] != MAGIC:
        raise DataError(f"not a checkpoint file: {path}")
    header_len = int.from_bytes(raw[len(MAGIC): len(MAGIC) + 8], "little")
    header_end = len(MAGIC) + 8 + header_len
    if len(raw) < header_end:
        raise DataError(f"truncated checkpoint header: {path}")
    header = json.loads(raw[len(MAGIC) + 8: header_end].decode("utf-8"))
    payload = raw[header_end:]
    arrays: dict[str, np.ndarray] = {}
    for name, entry in header["arrays"].items():
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(payload):
            raise DataError(f"truncated checkpoint payload for {name!r}: {path}")
        arr = np.frombuffer(payload[start: start + nbytes], dtype=np.dtype(entry["dtype"]))
        arrays[name] = arr.reshape(entry["shape"]).copy()
    return arrays, header["meta"]


def config_hash(config: Mapping) -> str:
    """SHA-256 of the canonical JSON rendering of a config mapping."""
    canon = json.dumps(dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def check_config_hash(meta: Mapping, config: Mapping) -> bool:
    """Warn (and return False) when the stored config hash disagrees."""
    stored = meta.get("config_hash")
    current = config_hash(config)
    if stored is not None and stored != current:
        warnings.warn(
            f"checkpoint was written with a different config "
            f"(stored hash {stored[:12]}…, current {current[:12]}…)",
            UserWarning,
            stacklevel=2,
        )
        return False
    return True


def module_arrays(module: torch.nn.Module, prefix: str) -> dict[str, np.ndarray]:
    """Flatten a module's state dict into ``prefix/name`` arrays."""
    return {
        f"{prefix}/{name}": tensor.detach().cpu().numpy()
        for name, tensor in module.state_dict().items()
    }


def load_module_arrays(
    module: torch.nn.Module, arrays: Mapping[str, np.ndarray], prefix: str
) -> None:
    """Load ``prefix/name`` arrays into a module; all entries must exist."""
    state = module.state_dict()
    missing = [name for name in state if f"{prefix}/{name}" not in arrays]
    if missing:
        raise DataError(
            f"checkpoint is missing {len(missing)} required arrays under "
            f"{prefix!r} (first: {prefix}/{missing[0]})"
        )
    with torch.no_grad():
        for name, tensor in state.items():
            src = np.asarray(arrays[f"{prefix}/{name}"])
            if tuple(src.shape) != tuple(tensor.shape):
                raise DataError(
                    f"array {prefix}/{name} has shape {tuple(src.shape)}, "
                    f"module expects {tuple(tensor.shape)}"
                )
            tensor.copy_(torch.from_numpy(src.copy()))


def module_byte_hash(module: torch.nn.Module) -> str:
    """SHA-256 over the module's state-dict bytes, in sorted name order."""
    digest = hashlib.sha256()
    state = module.state_dict()
    for name in sorted(state):
        digest.update(name.encode("utf-8"))
        digest.update(np.ascontiguousarray(state[name].detach().cpu().numpy()).tobytes())
    return digest.hexdigest()
