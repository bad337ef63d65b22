"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    magic        8 bytes  b"REPCKPT\\0"
    version      u32
    digest       32 bytes sha256 of the canonical config JSON
    header       u32 length + UTF-8 JSON {config, vocab, meta}
    parameters   u32 count, then blocks
    optimizer    u8 present flag; if 1: u64 step, 4 x f64 (lr, beta1, beta2, eps),
                 u32 count, then first-moment blocks, then second-moment blocks

    block        u16 name length, name, u8 dtype code, u8 ndim, ndim x u64 dims, raw data
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rep.autodiff.optim import AdamState

MAGIC = b"REPCKPT\x00"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class CheckpointError(ValueError):
    pass


def config_digest(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


@dataclass
class Checkpoint:
    config: dict
    params: dict[str, np.ndarray]
    vocab: dict[str, list[str]] = field(default_factory=dict)
    optimizer: AdamState | None = None
    meta: dict = field(default_factory=dict)

    @property
    def digest(self) -> str:
        return config_digest(self.config)

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<I", VERSION))
        buf.write(bytes.fromhex(self.digest))
        header = json.dumps({"config": self.config, "vocab": self.vocab, "meta": self.meta}, sort_keys=True).encode()
        buf.write(struct.pack("<I", len(header)))
        buf.write(header)
        buf.write(struct.pack("<I", len(self.params)))
        for name, arr in self.params.items():
            _write_block(buf, name, arr)
        if self.optimizer is None:
            buf.write(b"\x00")
        else:
            opt = self.optimizer
            buf.write(b"\x01")
            buf.write(struct.pack("<Q4d", opt.step, opt.lr, opt.beta1, opt.beta2, opt.eps))
            names = list(opt.m)
            buf.write(struct.pack("<I", len(names)))
            for name in names:
                _write_block(buf, name, opt.m[name])
            for name in names:
                _write_block(buf, name, opt.v[name])
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        buf = io.BytesIO(data)
        if buf.read(8) != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        (version,) = _unpack(buf, "<I")
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        digest = buf.read(32).hex()
        (n,) = _unpack(buf, "<I")
        header = json.loads(buf.read(n).decode())
        ckpt = cls(header["config"], {}, header.get("vocab", {}), None, header.get("meta", {}))
        if ckpt.digest != digest:
            raise CheckpointError("config digest does not match the stored config")
        (count,) = _unpack(buf, "<I")
        for _ in range(count):
            name, arr = _read_block(buf)
            ckpt.params[name] = arr
        if buf.read(1) == b"\x01":
            step, lr, b1, b2, eps = _unpack(buf, "<Q4d")
            opt = AdamState(lr, b1, b2, eps, step)
            (count,) = _unpack(buf, "<I")
            names = []
            for _ in range(count):
                name, arr = _read_block(buf)
                opt.m[name] = arr
                names.append(name)
            for _ in range(count):
                name, arr = _read_block(buf)
                opt.v[name] = arr
            ckpt.optimizer = opt
        return ckpt

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())


def _unpack(buf: io.BytesIO, fmt: str):
    size = struct.calcsize(fmt)
    raw = buf.read(size)
    if len(raw) != size:
        raise CheckpointError("truncated checkpoint")
    return struct.unpack(fmt, raw)


def _write_block(buf: io.BytesIO, name: str, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    code = _CODES.get(arr.dtype)
    if code is None:
        raise CheckpointError(f"cannot store {name} with dtype {arr.dtype}")
    raw_name = name.encode()
    buf.write(struct.pack("<H", len(raw_name)))
    buf.write(raw_name)
    buf.write(struct.pack("<BB", code, arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


def _read_block(buf: io.BytesIO) -> tuple[str, np.ndarray]:
    (n,) = _unpack(buf, "<H")
    name = buf.read(n).decode()
    code, ndim = _unpack(buf, "<BB")
    if code not in _DTYPES:
        raise CheckpointError(f"unknown dtype code {code} for {name}")
    shape = _unpack(buf, f"<{ndim}Q") if ndim else ()
    dtype = _DTYPES[code]
    count = int(np.prod(shape)) if shape else 1
    raw = buf.read(count * dtype.itemsize)
    if len(raw) != count * dtype.itemsize:
        raise CheckpointError("truncated checkpoint")
    return name, np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
