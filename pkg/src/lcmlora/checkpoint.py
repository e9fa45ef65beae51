"""Binary tensor container.

Layout (all integers little-endian)::

    b"LCLB"  u32 version  u32 tensor_count
    per tensor: u32 name_len, name (UTF-8), u8 dtype (0 = float32 LE),
                u8 rank, u64 * rank dims, raw data
    u64 metadata_len, metadata (UTF-8 JSON)

The file must end exactly after the metadata blob.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct

import numpy as np

from .errors import CheckpointError, MergeError
from .lora import LoraDelta

MAGIC = b"LCLB"
VERSION = 1
DTYPE_F32 = 0


def encode_tensors(tensors, metadata):
    names = list(tensors)
    if len(set(names)) != len(names):
        raise CheckpointError("duplicate tensor names")
    parts = [MAGIC, struct.pack("<II", VERSION, len(names))]
    for name in names:
        arr = np.asarray(tensors[name])
        if arr.dtype != np.float32:
            raise CheckpointError(f"tensor {name!r} has dtype {arr.dtype}; only float32 is stored")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BB", DTYPE_F32, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    meta = json.dumps(metadata, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<Q", len(meta)))
    parts.append(meta)
    return b"".join(parts)


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise CheckpointError(
                f"truncated checkpoint: need {n} bytes for {what} at offset {self.pos}, "
                f"only {len(self.buf) - self.pos} left")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_tensors(buf):
    r = _Reader(memoryview(buf).tobytes())
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r} at offset 0 (expected {MAGIC!r})")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} at offset 4")
    (count,) = r.unpack("<I", "tensor count")
    tensors = {}
    for i in range(count):
        at = r.pos
        (name_len,) = r.unpack("<I", f"name length of tensor {i}")
        try:
            name = r.take(name_len, f"name of tensor {i}").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"tensor name at offset {at + 4} is not valid UTF-8") from exc
        if name in tensors:
            raise CheckpointError(f"duplicate tensor name {name!r} at offset {at}")
        dtype, rank = r.unpack("<BB", f"dtype/rank of {name!r}")
        if dtype != DTYPE_F32:
            raise CheckpointError(f"unknown dtype code {dtype} for {name!r} at offset {r.pos - 2}")
        dims = r.unpack(f"<{rank}Q", f"dims of {name!r}")
        size = 4
        for d in dims:
            size *= d
        if size > len(r.buf):
            raise CheckpointError(f"tensor {name!r} at offset {at} declares {size} bytes, larger than the file")
        data = r.take(size, f"data of {name!r}")
        tensors[name] = np.frombuffer(data, dtype="<f4").astype(np.float32).reshape(dims)
    (meta_len,) = r.unpack("<Q", "metadata length")
    meta_at = r.pos
    blob = r.take(meta_len, "metadata")
    if r.pos != len(r.buf):
        raise CheckpointError(f"{len(r.buf) - r.pos} trailing bytes after metadata at offset {r.pos}")
    try:
        metadata = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"metadata at offset {meta_at} is not valid JSON: {exc}") from exc
    return tensors, metadata


# structured save/load ---------------------------------------------------------

def _delta_tensors(prefix, delta):
    out = {}
    for layer, (b, a) in delta.factors.items():
        out[f"{prefix}/{layer}/B"] = b
        out[f"{prefix}/{layer}/A"] = a
    return out


def save_checkpoint(path, params=None, deltas=None, metadata=None):
    """Write base parameters and/or named LoRA deltas plus JSON metadata.

    ``deltas`` maps a name to a :class:`LoraDelta`; the tag and weight go
    into the metadata so the delta reloads unchanged.
    """
    tensors = {}
    for k, v in (params or {}).items():
        tensors[f"param/{k}"] = np.asarray(v, dtype=np.float32)
    info = {}
    for name, delta in (deltas or {}).items():
        if "/" in name:
            raise CheckpointError(f"delta name {name!r} may not contain '/'")
        tensors.update(_delta_tensors(f"delta/{name}", delta))
        info[name] = {"tag": delta.tag, "weight": delta.weight, "layers": sorted(delta.factors)}
    meta = dict(metadata or {})
    meta["deltas"] = info
    buf = encode_tensors(tensors, meta)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf)
    os.replace(tmp, path)
    return hashlib.sha256(buf).hexdigest()


def load_checkpoint(path):
    """Return ``(params, deltas, metadata)``."""
    with open(path, "rb") as fh:
        buf = fh.read()
    try:
        tensors, meta = decode_tensors(buf)
    except CheckpointError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    params = {k[len("param/"):]: v for k, v in tensors.items() if k.startswith("param/")}
    deltas = {}
    for name, info in meta.get("deltas", {}).items():
        factors = {}
        for layer in info["layers"]:
            try:
                factors[layer] = (tensors[f"delta/{name}/{layer}/B"], tensors[f"delta/{name}/{layer}/A"])
            except KeyError:
                raise CheckpointError(f"{path}: delta {name!r} is missing factors for {layer!r}") from None
        deltas[name] = LoraDelta(factors, info["weight"], info["tag"])
    return params, deltas, meta


def check_delta_against(delta, params):
    """Validate layer names and shapes of an adapter-only checkpoint against a base."""
    for layer, (b, a) in delta.factors.items():
        if layer not in params:
            raise MergeError(f"adapter layer {layer!r} is not in the base model")
        if (b.shape[0], a.shape[1]) != params[layer].shape:
            raise MergeError(f"adapter layer {layer!r} has shape {(b.shape[0], a.shape[1])}, "
                             f"base has {params[layer].shape}")


def config_hash(cfg_dict):
    return hashlib.sha256(json.dumps(cfg_dict, sort_keys=True).encode()).hexdigest()[:16]
