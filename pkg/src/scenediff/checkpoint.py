"""Checkpoint persistence: named tensors as raw little-endian bytes plus a
human-readable JSON manifest (shape, dtype, 64-byte-aligned offsets, config
echo, step counter). Round trips are bitwise exact.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .errors import DataError

_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}
_ALIGN = 64

MANIFEST_NAME = "manifest.json"
PAYLOAD_NAME = "tensors.bin"


def _to_numpy(value) -> np.ndarray:
    arr = value.detach().cpu().numpy() if torch.is_tensor(value) else np.asarray(value)
    name = str(arr.dtype)
    if name not in _DTYPES:
        raise DataError(f"unsupported checkpoint dtype {name}")
    return np.ascontiguousarray(arr.astype(_DTYPES[name]))


def save_checkpoint(tensors: dict, path, config: Optional[dict] = None, step: int = 0) -> Path:
    """Write a checkpoint directory with manifest.json and tensors.bin."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    entries = {}
    offset = 0
    blobs = []
    for name in sorted(tensors):
        arr = _to_numpy(tensors[name])
        pad = (-offset) % _ALIGN
        offset += pad
        blobs.append((pad, arr.tobytes()))
        entries[name] = {
            "shape": list(arr.shape),
            "dtype": str(arr.dtype.name),
            "offset": offset,
            "nbytes": arr.nbytes,
        }
        offset += arr.nbytes
    with open(out / PAYLOAD_NAME, "wb") as f:
        for pad, blob in blobs:
            f.write(b"\x00" * pad)
            f.write(blob)
    manifest = {"step": step, "config": config or {}, "tensors": entries}
    with open(out / MANIFEST_NAME, "w") as f:
        json.dump(manifest, f, indent=2)
    return out


def load_checkpoint(path) -> tuple[dict, dict]:
    """Read back (tensors, manifest); errors name the offending tensor."""
    base = Path(path)
    manifest_path = base / MANIFEST_NAME
    payload_path = base / PAYLOAD_NAME
    if not manifest_path.exists():
        raise DataError(f"missing checkpoint manifest {manifest_path}")
    if not payload_path.exists():
        raise DataError(f"missing checkpoint payload {payload_path}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    payload = payload_path.read_bytes()
    tensors = {}
    for name, entry in manifest.get("tensors", {}).items():
        try:
            dtype = np.dtype(_DTYPES[entry["dtype"]])
            shape = tuple(entry["shape"])
            offset, nbytes = entry["offset"], entry["nbytes"]
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed manifest entry for tensor {name!r}: {exc}") from exc
        if offset + nbytes > len(payload):
            raise DataError(f"truncated payload for tensor {name!r}")
        arr = np.frombuffer(payload, dtype=dtype, count=nbytes // dtype.itemsize, offset=offset)
        expected = int(np.prod(shape)) if shape else 1
        if arr.size != expected:
            raise DataError(f"size mismatch for tensor {name!r}")
        tensors[name] = arr.reshape(shape).copy()
    return tensors, manifest


def module_tensors(module: torch.nn.Module, prefix: str = "") -> dict:
    """Flatten a module's state dict into checkpoint-ready named arrays."""
    out = {}
    for key, value in module.state_dict().items():
        out[f"{prefix}{key}"] = value
    return out


def load_module(module: torch.nn.Module, tensors: dict, prefix: str = "") -> None:
    """Restore a module from checkpoint tensors written by `module_tensors`."""
    state = {}
    for key, ref in module.state_dict().items():
        name = f"{prefix}{key}"
        if name not in tensors:
            raise DataError(f"checkpoint is missing tensor {name!r}")
        state[key] = torch.as_tensor(tensors[name]).to(ref.dtype).reshape(ref.shape)
    module.load_state_dict(state)
