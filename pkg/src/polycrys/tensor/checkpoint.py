"""Parameter checkpoint files: one JSON manifest line followed by the raw
little-endian payloads concatenated in manifest order.  Round trips are
bit-exact."""

from __future__ import annotations

import json

import numpy as np

from ..errors import FormatError
from .core import Tensor

CHECKPOINT_MAGIC = "PCK1"
_DTYPES = {"f32le": "<f4", "f64le": "<f8"}
_DTYPE_NAMES = {np.dtype(np.float32): "f32le", np.dtype(np.float64): "f64le"}


def save_checkpoint(path, params: dict, step: int = 0, meta: dict | None = None) -> None:
    entries = []
    payloads = []
    for name in sorted(params):
        p = params[name]
        arr = p.data if isinstance(p, Tensor) else np.asarray(p)
        dtype_name = _DTYPE_NAMES.get(arr.dtype)
        if dtype_name is None:
            raise FormatError(f"checkpoint supports float32/float64, got {arr.dtype} for {name!r}")
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dtype_name})
        payloads.append(np.ascontiguousarray(arr, dtype=_DTYPES[dtype_name]).tobytes())
    header = {"magic": CHECKPOINT_MAGIC, "step": int(step),
              "meta": meta or {}, "params": entries}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        for blob in payloads:
            fh.write(blob)


def load_checkpoint(path):
    """Returns ``(params, step, meta)`` with params as name -> float array."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unrecognized checkpoint header in {path}") from exc
    if header.get("magic") != CHECKPOINT_MAGIC:
        raise FormatError(f"unrecognized checkpoint magic {header.get('magic')!r}")
    params = {}
    offset = 0
    for entry in header["params"]:
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise FormatError(f"unknown dtype {entry['dtype']!r} in checkpoint")
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * np.dtype(dtype).itemsize
        blob = payload[offset:offset + nbytes]
        if len(blob) != nbytes:
            raise FormatError(f"truncated checkpoint payload for {entry['name']!r}")
        params[entry["name"]] = np.frombuffer(blob, dtype=dtype).reshape(shape).copy()
        offset += nbytes
    if offset != len(payload):
        raise FormatError(f"checkpoint payload has {len(payload) - offset} trailing bytes")
    return params, int(header.get("step", 0)), header.get("meta", {})
