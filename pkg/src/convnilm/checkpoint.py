"""Versioned binary checkpoint files.

Layout (all integers little-endian)::

    magic     8 bytes   b"CNILMCK\\x00"
    version   u32
    length    u64       payload byte count
    crc32     u32       zlib.crc32 of the payload
    payload:
      u32 header_len, header_len bytes of UTF-8 JSON
          {"config": ..., "dtype": ..., "metadata": ..., "standardizer": ...}
      u32 n_tensors, then per tensor:
          u16 name_len, name (UTF-8)
          u8  dtype code (1 = float32, 2 = float64)
          u8  ndim, ndim x u32 dims
          u64 nbytes, raw little-endian data

Tensor names are model parameter names; optimizer moments are stored under
``opt.m.<name>`` and ``opt.v.<name>``.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import IntegrityError, StructuralError
from .model import Model, ModelConfig

MAGIC = b"CNILMCK\x00"
FORMAT_VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    code = _CODES.get(arr.dtype)
    if code is None:
        raise StructuralError(f"tensor {name}: unsupported dtype {arr.dtype}")
    raw = arr.astype(_DTYPES[code], copy=False).tobytes()
    bname = name.encode()
    head = struct.pack("<H", len(bname)) + bname + struct.pack("<BB", code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + struct.pack("<Q", len(raw)) + raw


def save_checkpoint(
    model: Model,
    path: str | os.PathLike,
    metadata: dict | None = None,
    optimizer=None,
) -> None:
    """Write ``model`` (and optionally the optimizer state) to ``path`` atomically."""
    header = {
        "config": model.config.to_dict(),
        "dtype": model.dtype.name,
        "standardizer": model.standardizer,
        "metadata": metadata or {},
        "optimizer": None,
    }
    tensors = dict(model.params)
    if optimizer is not None:
        header["optimizer"] = optimizer.hyper_state()
        for k, v in optimizer.m.items():
            tensors[f"opt.m.{k}"] = v
        for k, v in optimizer.v.items():
            tensors[f"opt.v.{k}"] = v
    hbytes = json.dumps(header, sort_keys=True).encode()
    body = [struct.pack("<I", len(hbytes)), hbytes, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        body.append(_pack_tensor(name, tensors[name]))
    payload = b"".join(body)
    blob = MAGIC + struct.pack("<IQI", FORMAT_VERSION, len(payload), zlib.crc32(payload)) + payload

    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise IntegrityError("checkpoint payload ends early")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path: str | os.PathLike) -> tuple[dict, dict[str, np.ndarray]]:
    """Validate and decode a checkpoint into ``(header, tensors)``."""
    blob = Path(path).read_bytes()
    prefix = len(MAGIC) + struct.calcsize("<IQI")
    if len(blob) < prefix:
        raise IntegrityError(f"{path}: file too short to be a checkpoint")
    if blob[: len(MAGIC)] != MAGIC:
        raise IntegrityError(f"{path}: bad magic, not a checkpoint file")
    version, length, crc = struct.unpack("<IQI", blob[len(MAGIC) : prefix])
    if version != FORMAT_VERSION:
        raise IntegrityError(f"{path}: unsupported checkpoint version {version}")
    payload = blob[prefix:]
    if len(payload) != length:
        raise IntegrityError(f"{path}: truncated ({len(payload)} of {length} payload bytes)")
    if zlib.crc32(payload) != crc:
        raise IntegrityError(f"{path}: CRC mismatch, file is corrupt")

    r = _Reader(payload)
    (hlen,) = r.unpack("<I")
    header = json.loads(r.take(hlen).decode())
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        code, ndim = r.unpack("<BB")
        if code not in _DTYPES:
            raise IntegrityError(f"{path}: tensor {name} has unknown dtype code {code}")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        (nbytes,) = r.unpack("<Q")
        dt = _DTYPES[code]
        if nbytes != int(np.prod(shape)) * dt.itemsize:
            raise IntegrityError(f"{path}: tensor {name} byte count does not match its shape")
        arr = np.frombuffer(r.take(nbytes), dtype=dt).reshape(shape)
        tensors[name] = arr.astype(dt.newbyteorder("="), copy=True)
    if r.pos != len(payload):
        raise IntegrityError(f"{path}: trailing bytes after last tensor")
    return header, tensors


def load_checkpoint(path: str | os.PathLike, expected_config: ModelConfig | None = None):
    """Load a model; returns ``(model, header)``.

    With ``expected_config`` the stored tensors are checked against that
    config's parameter shapes instead of the embedded one.
    """
    header, tensors = read_checkpoint(path)
    cfg = ModelConfig.from_dict(header["config"])
    params = {k: v for k, v in tensors.items() if not k.startswith("opt.")}
    model = Model(expected_config or cfg, params, np.dtype(header["dtype"]))
    model.standardizer = header.get("standardizer")
    opt = {k: v for k, v in tensors.items() if k.startswith("opt.")}
    header["optimizer_tensors"] = opt
    return model, header
