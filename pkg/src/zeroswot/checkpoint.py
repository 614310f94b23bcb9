"""Single-file checkpoint container.

Layout: an 8-byte magic, a little-endian uint64 header length, a UTF-8
JSON manifest listing (name, shape, frozen) per parameter in order, then
the row-major little-endian float64 payloads concatenated in manifest
order.  Round trips are bit-exact.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .autodiff import Parameter

__all__ = ["save_checkpoint", "load_checkpoint", "restore_parameters",
           "BadCheckpoint", "ManifestMismatch"]

_MAGIC = b"ZSWTCKP1"


class BadCheckpoint(Exception):
    """File is not a valid checkpoint container."""


class ManifestMismatch(Exception):
    """Checkpoints disagree on parameter names, shapes or frozen flags."""


def _entries(params) -> list[tuple[str, np.ndarray, bool]]:
    if isinstance(params, dict):
        out = []
        for name, value in params.items():
            arr, frozen = value
            out.append((name, np.asarray(arr, dtype=np.float64), bool(frozen)))
        return out
    return [(p.name, p.data, p.frozen) for p in params]


def save_checkpoint(path, params) -> None:
    """``params``: list[Parameter] or dict name -> (array, frozen)."""
    entries = _entries(params)
    names = [n for n, _, _ in entries]
    if len(set(names)) != len(names):
        raise ValueError("duplicate parameter names in checkpoint")
    manifest = {
        "version": 1,
        "params": [{"name": n, "shape": list(a.shape), "frozen": f}
                   for n, a, f in entries],
    }
    header = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for _, arr, _ in entries:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> dict[str, tuple[np.ndarray, bool]]:
    """Returns an ordered dict name -> (float64 array, frozen flag)."""
    path = Path(path)
    blob = path.read_bytes()
    if blob[: len(_MAGIC)] != _MAGIC:
        raise BadCheckpoint(f"{path}: bad magic")
    off = len(_MAGIC)
    (hlen,) = struct.unpack("<Q", blob[off:off + 8])
    off += 8
    try:
        manifest = json.loads(blob[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise BadCheckpoint(f"{path}: bad manifest") from e
    off += hlen
    out: dict[str, tuple[np.ndarray, bool]] = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if off + nbytes > len(blob):
            raise BadCheckpoint(f"{path}: truncated payload")
        arr = np.frombuffer(blob[off:off + nbytes], dtype="<f8").reshape(shape)
        off += nbytes
        out[entry["name"]] = (arr.astype(np.float64), bool(entry["frozen"]))
    if off != len(blob):
        raise BadCheckpoint(f"{path}: trailing bytes")
    return out


def restore_parameters(params: list[Parameter], path) -> None:
    """Load values into an existing parameter list, matching by name."""
    loaded = load_checkpoint(path)
    for p in params:
        if p.name not in loaded:
            raise ManifestMismatch(f"checkpoint missing parameter {p.name!r}")
        arr, _ = loaded[p.name]
        if arr.shape != p.data.shape:
            raise ManifestMismatch(
                f"shape mismatch for {p.name!r}: {arr.shape} vs {p.data.shape}")
        p.data = arr.copy()
