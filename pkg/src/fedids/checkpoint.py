"""``FIDS`` checkpoint container.

Layout::

    b"FIDS" | u32 version (LE) | u64 header length (LE) | JSON header | payloads

The header carries the model config, free-form metadata and an ordered tensor
directory of ``{name, shape, dtype, offset, nbytes}``; offsets are relative to
the first payload byte. ``dtype`` is ``f32`` or ``i8``. Every ``i8`` tensor
``W`` is immediately followed by its per-channel ``f32`` companion
``W.scales``, and the header records the channel axis in ``quant_axes``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"FIDS"
VERSION = 1
SCALES_SUFFIX = ".scales"
_DTYPES = {"f32": np.dtype("<f4"), "i8": np.dtype("i1")}


class CheckpointError(ValueError):
    pass


@dataclass
class QuantizedTensor:
    q_values: np.ndarray  # int8, same shape as the source tensor
    scales: np.ndarray  # one positive scale per channel along ``axis``
    axis: int

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.q_values.shape)

    @property
    def zero_points(self) -> np.ndarray:
        return np.zeros_like(self.scales, dtype=np.int8)


@dataclass
class Checkpoint:
    config: dict
    tensors: dict[str, np.ndarray | QuantizedTensor]
    meta: dict = field(default_factory=dict)

    def float_weights(self) -> dict[str, np.ndarray]:
        """All tensors as float32; quantized ones are dequantized."""
        from .quantize import dequantize

        out = {}
        for name, t in self.tensors.items():
            out[name] = dequantize(t).astype(np.float32) if isinstance(t, QuantizedTensor) else t
        return out


def _entries(tensors: Mapping[str, np.ndarray | QuantizedTensor]):
    for name, t in tensors.items():
        if isinstance(t, QuantizedTensor):
            yield name, "i8", np.ascontiguousarray(t.q_values, dtype=_DTYPES["i8"])
            yield name + SCALES_SUFFIX, "f32", np.ascontiguousarray(t.scales, dtype=_DTYPES["f32"])
        else:
            arr = np.asarray(t)
            if arr.dtype.kind != "f":
                raise CheckpointError(f"{name}: only float or quantized tensors can be stored")
            yield name, "f32", np.ascontiguousarray(arr, dtype=_DTYPES["f32"])


def to_bytes(ckpt: Checkpoint) -> bytes:
    directory = []
    payloads = []
    offset = 0
    for name, dtype, arr in _entries(ckpt.tensors):
        raw = arr.tobytes()
        directory.append({"name": name, "shape": list(arr.shape), "dtype": dtype, "offset": offset, "nbytes": len(raw)})
        payloads.append(raw)
        offset += len(raw)
    header = {
        "config": ckpt.config,
        "meta": ckpt.meta,
        "tensors": directory,
        "quant_axes": {n: t.axis for n, t in ckpt.tensors.items() if isinstance(t, QuantizedTensor)},
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return b"".join([MAGIC, struct.pack("<IQ", VERSION, len(head)), head, *payloads])


def from_bytes(data: bytes) -> Checkpoint:
    if len(data) < 16 or data[:4] != MAGIC:
        raise CheckpointError("not a FIDS checkpoint (bad magic)")
    version, head_len = struct.unpack_from("<IQ", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported FIDS version {version}")
    start = 16 + head_len
    if start > len(data):
        raise CheckpointError("truncated header")
    header = json.loads(data[16:start].decode("utf-8"))
    raw: dict[str, tuple[str, np.ndarray]] = {}
    for entry in header["tensors"]:
        dt = _DTYPES.get(entry["dtype"])
        if dt is None:
            raise CheckpointError(f"{entry['name']}: unknown dtype {entry['dtype']!r}")
        lo = start + entry["offset"]
        hi = lo + entry["nbytes"]
        if hi > len(data):
            raise CheckpointError(f"{entry['name']}: payload runs past end of file")
        arr = np.frombuffer(data[lo:hi], dtype=dt).reshape(entry["shape"])
        raw[entry["name"]] = (entry["dtype"], arr.astype(np.float32) if entry["dtype"] == "f32" else arr.copy())
    axes = header.get("quant_axes", {})
    companions = {n + SCALES_SUFFIX for n, (dt, _) in raw.items() if dt == "i8"}
    tensors: dict[str, np.ndarray | QuantizedTensor] = {}
    for name, (dtype, arr) in raw.items():
        if name in companions:
            continue
        if dtype == "i8":
            if name + SCALES_SUFFIX not in raw:
                raise CheckpointError(f"{name}: int8 tensor without {SCALES_SUFFIX} companion")
            scales = raw[name + SCALES_SUFFIX][1]
            tensors[name] = QuantizedTensor(arr, scales.astype(np.float64), int(axes.get(name, 1)))
        else:
            tensors[name] = arr
    return Checkpoint(header["config"], tensors, header.get("meta", {}))


def save(ckpt: Checkpoint, path: str | Path) -> int:
    data = to_bytes(ckpt)
    Path(path).write_bytes(data)
    return len(data)


def load(path: str | Path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())


def payload_bytes(ckpt: Checkpoint) -> dict[str, int]:
    """Stored bytes per logical tensor (int8 values plus their scales)."""
    out = {}
    for name, t in ckpt.tensors.items():
        if isinstance(t, QuantizedTensor):
            out[name] = t.q_values.size + 4 * np.asarray(t.scales).size
        else:
            out[name] = 4 * np.asarray(t).size
    return out
