"""Score bundles: named float64 score columns plus JSON run metadata.

Binary layout (little-endian, ``SCB1``)::

    magic     4s   b"SCB1"
    version   u32  1
    N         u64
    ncols     u32
    meta_len  u32
    meta      meta_len bytes of UTF-8 JSON (sorted keys)
    per column: u16 name length, UTF-8 name, N float64
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._io import atomic_write_bytes
from .errors import FormatError, ValidationError

MAGIC = b"SCB1"
VERSION = 1
_HEADER = struct.Struct("<4sIQII")
_NAME_LEN = struct.Struct("<H")


@dataclass
class ScoreBundle:
    columns: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return next(iter(self.columns.values())).shape[0] if self.columns else 0

    def add(self, name: str, values) -> None:
        v = np.asarray(getattr(values, "values", values), dtype=np.float64)
        if v.ndim != 1:
            raise ValidationError(f"column {name!r} must be 1-D")
        if self.columns and v.shape[0] != self.n:
            raise ValidationError(f"column {name!r} has {v.shape[0]} rows, bundle has {self.n}")
        if not name or len(name.encode()) > 0xFFFF:
            raise ValidationError("column names must be non-empty and under 64 KiB")
        self.columns[name] = v

    def to_bytes(self) -> bytes:
        meta = json.dumps(self.metadata, sort_keys=True, allow_nan=False).encode()
        out = [_HEADER.pack(MAGIC, VERSION, self.n, len(self.columns), len(meta)), meta]
        for name, v in self.columns.items():
            raw = name.encode()
            out += [_NAME_LEN.pack(len(raw)), raw, v.astype("<f8").tobytes()]
        return b"".join(out)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "ScoreBundle":
        if len(buf) < _HEADER.size:
            raise FormatError(f"truncated bundle header: {len(buf)} bytes")
        magic, version, n, ncols, meta_len = _HEADER.unpack_from(buf, 0)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r} at offset 0, expected {MAGIC!r}")
        if version != VERSION:
            raise FormatError(f"unsupported bundle version {version} at offset 4")
        off = _HEADER.size
        try:
            metadata = json.loads(buf[off:off + meta_len].decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"bad metadata JSON at offset {off}: {exc}") from None
        off += meta_len
        b = cls(metadata=metadata)
        for _ in range(ncols):
            if off + _NAME_LEN.size > len(buf):
                raise FormatError(f"truncated column header at offset {off}")
            (ln,) = _NAME_LEN.unpack_from(buf, off)
            off += _NAME_LEN.size
            name = buf[off:off + ln].decode()
            off += ln
            if off + 8 * n > len(buf):
                raise FormatError(f"truncated column {name!r} at offset {off}")
            b.columns[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=off).astype(np.float64)
            off += 8 * n
        if off != len(buf):
            raise FormatError(f"{len(buf) - off} trailing bytes after offset {off}")
        return b

    def save(self, path: str | Path) -> None:
        atomic_write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "ScoreBundle":
        try:
            return cls.from_bytes(Path(path).read_bytes())
        except OSError as exc:
            raise ValidationError(f"cannot read bundle {path}: {exc}") from None


def score_csv(values) -> str:
    v = np.asarray(getattr(values, "values", values), dtype=np.float64)
    buf = io.StringIO()
    buf.write("index,score\n")
    for i, x in enumerate(v.tolist()):
        buf.write(f"{i},{x!r}\n")
    return buf.getvalue()
