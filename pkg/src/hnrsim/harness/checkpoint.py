"""Binary checkpoint files.

Layout (all integers little-endian):

    b"HNR1"  u32 version
    u32 len + UTF-8 fingerprint
    u32 len + UTF-8 JSON metadata (sorted keys)
    u32 array count, then per array:
        u32 len + UTF-8 name, u32 ndim, ndim x u64 extents, float64 data (C order)

Optimizer moments, when present, are stored as arrays named ``opt.m/<param>``
and ``opt.v/<param>``; the optimizer kind, step count and hyperparameters go
in the metadata under ``"optimizer"``.  Nothing time-dependent is written, so
identical training runs give identical files.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..hnr.receiver import FingerprintError

MAGIC = b"HNR1"
VERSION = 1
OPT_PREFIX = "opt."


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointFormatError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    fingerprint: str
    metadata: dict
    params: dict[str, np.ndarray]
    optimizer: dict[str, np.ndarray] = field(default_factory=dict)

    def check_fingerprint(self, expected: str) -> None:
        if self.fingerprint != expected:
            raise FingerprintError(f"checkpoint fingerprint {self.fingerprint[:12]} does not "
                                   f"match this configuration ({expected[:12]})")

    def num_parameters(self) -> int:
        return int(sum(a.size for a in self.params.values()))


def _str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def to_bytes(ckpt: Checkpoint) -> bytes:
    arrays = dict(ckpt.params)
    for k, v in ckpt.optimizer.items():
        arrays[OPT_PREFIX + k] = v
    parts = [MAGIC, struct.pack("<I", VERSION), _str(ckpt.fingerprint),
             _str(json.dumps(ckpt.metadata, sort_keys=True)), struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        a = np.array(arr, dtype="<f8", order="C")  # keeps 0-d shapes
        parts.append(_str(name))
        parts.append(struct.pack("<I", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}Q", *a.shape))
        parts.append(a.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError(
                f"checkpoint truncated at byte {len(self.data)} (needed {self.pos + n})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def text(self) -> str:
        try:
            return self.take(self.u32()).decode("utf-8")
        except UnicodeDecodeError as err:
            raise CheckpointFormatError(f"bad UTF-8 string: {err}") from None


def from_bytes(data: bytes) -> Checkpoint:
    r = _Reader(data)
    magic = r.take(4)
    if magic != MAGIC:
        raise CheckpointFormatError(f"not a checkpoint (magic {magic!r})")
    version = r.u32()
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, expected {VERSION}")
    fp = r.text()
    try:
        meta = json.loads(r.text())
    except json.JSONDecodeError as err:
        raise CheckpointFormatError(f"bad metadata: {err}") from None
    params, opt = {}, {}
    for _ in range(r.u32()):
        name = r.text()
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}Q", r.take(8 * ndim))
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
        if name.startswith(OPT_PREFIX):
            opt[name[len(OPT_PREFIX):]] = arr
        else:
            params[name] = arr
    if r.pos != len(data):
        raise CheckpointFormatError(f"{len(data) - r.pos} trailing bytes after the last array")
    return Checkpoint(fp, meta, params, opt)


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> None:
    """Write atomically: a partial file never replaces a good one."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(to_bytes(ckpt))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | os.PathLike, expected_fingerprint: str | None = None) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err}") from None
    ckpt = from_bytes(data)
    if expected_fingerprint is not None:
        ckpt.check_fingerprint(expected_fingerprint)
    return ckpt
