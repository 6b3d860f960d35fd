"""Single-file checkpoint container.

Layout::

    b"HFDCKPT1\\n"
    uint64 little-endian: length of the JSON manifest
    JSON manifest: {"meta": {...}, "tensors": [{name, shape, dtype, offset, nbytes}, ...]}
    payload: little-endian float32 values, tensors back to back

Offsets are relative to the start of the payload.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Mapping, Tuple

import numpy as np
import torch

from .errors import FormatError

MAGIC = b"HFDCKPT1\n"
_DTYPE = np.dtype("<f4")


def _to_numpy(t) -> np.ndarray:
    if isinstance(t, torch.Tensor):
        t = t.detach().cpu().numpy()
    return np.array(t, dtype=_DTYPE, order="C")  # keeps 0-d shapes, unlike ascontiguousarray


def save_checkpoint(path, tensors: Mapping[str, object], meta: Mapping | None = None) -> Path:
    path = Path(path)
    entries, chunks, offset = [], [], 0
    for name, value in tensors.items():
        arr = _to_numpy(value)
        raw = arr.tobytes(order="C")
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": "float32", "offset": offset, "nbytes": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": dict(meta or {}), "tensors": entries}, sort_keys=True).encode()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in chunks:
            fh.write(raw)
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> Tuple[dict, dict]:
    """Returns ``(tensors, meta)`` with tensors as float32 numpy arrays."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    if not blob.startswith(MAGIC) or len(blob) < len(MAGIC) + 8:
        raise FormatError(f"{path} is not a checkpoint file")
    pos = len(MAGIC)
    (hlen,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    try:
        header = json.loads(blob[pos:pos + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint manifest in {path}") from exc
    payload = memoryview(blob)[pos + hlen:]
    tensors = {}
    for e in header["tensors"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        if e["dtype"] != "float32" or e["nbytes"] != 4 * n or e["offset"] + e["nbytes"] > len(payload):
            raise FormatError(f"bad manifest entry for {e['name']!r} in {path}")
        arr = np.frombuffer(payload, dtype=_DTYPE, count=n, offset=e["offset"])
        tensors[e["name"]] = arr.reshape(tuple(e["shape"])).astype(np.float32)
    return tensors, header["meta"]


def module_tensors(module: torch.nn.Module, prefix: str) -> dict:
    return {f"{prefix}.{k}": v for k, v in module.state_dict().items()}


def restore_module(module: torch.nn.Module, tensors: Mapping[str, np.ndarray], prefix: str) -> None:
    state = module.state_dict()
    missing = [k for k in state if f"{prefix}.{k}" not in tensors]
    if missing:
        raise FormatError(f"checkpoint lacks {prefix} entries: {missing[:5]}")
    loaded = {
        k: torch.from_numpy(np.array(tensors[f"{prefix}.{k}"])).to(v.dtype).reshape(v.shape)
        for k, v in state.items()
    }
    module.load_state_dict(loaded)
