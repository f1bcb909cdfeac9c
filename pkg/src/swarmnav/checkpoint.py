"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"SWRMCKPT"
    8       4     format version (uint32), currently 1
    12      8     header length H (uint64)
    20      H     UTF-8 JSON header
    20+H    P     payload: raw array bytes, concatenated
    end-32  32    SHA-256 of every preceding byte

The header holds the flat experiment config under ``"config"`` and the
trainer state under ``"state"``. Arrays inside the state are replaced by
``{"__array__": name}`` and described in ``"arrays"`` as
``{name: {"dtype", "shape", "offset", "nbytes"}}`` relative to the payload
start. Float arrays are stored as ``<f8``, boolean arrays as ``|b1``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import ConfigurationError

MAGIC = b"SWRMCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(RuntimeError):
    pass


class DimensionMismatch(ConfigurationError):
    pass


@dataclass
class Checkpoint:
    config: dict
    state: dict


def _pack(obj, arrays, path="root"):
    if isinstance(obj, np.ndarray):
        name = f"{path}#{len(arrays)}"
        arrays[name] = obj
        return {"__array__": name}
    if isinstance(obj, dict):
        return {str(k): _pack(v, arrays, f"{path}.{k}") for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_pack(v, arrays, f"{path}[{i}]") for i, v in enumerate(obj)]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _unpack(obj, arrays):
    if isinstance(obj, dict):
        if set(obj) == {"__array__"}:
            return arrays[obj["__array__"]]
        return {k: _unpack(v, arrays) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_unpack(v, arrays) for v in obj]
    return obj


def save_checkpoint(path, config: dict, state: dict):
    arrays = {}
    packed = _pack(state, arrays)
    table, chunks, offset = {}, [], 0
    for name, arr in arrays.items():
        dtype = np.dtype("|b1") if arr.dtype == bool else np.dtype("<f8")
        raw = np.ascontiguousarray(arr, dtype=dtype).tobytes()
        table[name] = {"dtype": dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"config": config, "state": packed, "arrays": table}, sort_keys=True).encode()
    body = _PREFIX.pack(MAGIC, VERSION, len(header)) + header + b"".join(chunks)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(body + hashlib.sha256(body).digest())
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    if len(blob) < _PREFIX.size + 32:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupt")
    start = _PREFIX.size
    header = json.loads(body[start : start + hlen])
    payload = body[start + hlen :]
    arrays = {}
    for name, meta in header["arrays"].items():
        chunk = payload[meta["offset"] : meta["offset"] + meta["nbytes"]]
        arrays[name] = np.frombuffer(chunk, dtype=np.dtype(meta["dtype"])).reshape(meta["shape"]).copy()
    return Checkpoint(config=header["config"], state=_unpack(header["state"], arrays))
