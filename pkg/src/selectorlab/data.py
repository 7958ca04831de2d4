"""Dataset container, on-disk formats and sampling utilities.

A :class:`Dataset` holds precomputed model outputs for ``N`` samples: feature
embeddings, logits, true labels and the classifier's predictions.  Arrays are
stored as 32-bit floats (matching common embedding dumps) and are read-only
once constructed; every statistic downstream accumulates in float64.

Binary layout (little-endian, ``SCF1``)::

    magic   4s   b"SCF1"
    version u32  1
    N, d, K u64
    flags   u8   bit0: predictions present, bit1: provenance present
    features    N*d float32, row-major
    logits      N*K float32, row-major
    labels      N int64
    predictions N int64   (if bit0)
    provenance  N int64   (if bit1)
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from ._io import atomic_write_bytes, atomic_write_text
from .errors import FormatError, ValidationError

MAGIC = b"SCF1"
VERSION = 1
_HEADER = struct.Struct("<4sIQQQB")
FLAG_PREDICTIONS = 0b01
FLAG_PROVENANCE = 0b10


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Aligned features, logits, labels and predictions for ``N`` samples.

    ``predictions`` may be omitted, in which case they are the argmax of the
    logits with ties going to the lowest class index.  ``source`` is the
    optional provenance column written by :func:`mix_datasets`.
    """

    features: np.ndarray
    logits: np.ndarray
    labels: np.ndarray
    predictions: np.ndarray | None = None
    name: str = ""
    source: np.ndarray | None = None

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float32)
        logits = np.asarray(self.logits, dtype=np.float32)
        labels = np.asarray(self.labels)
        if features.ndim != 2 or logits.ndim != 2:
            raise ValidationError("features and logits must be 2-D matrices")
        n, d = features.shape
        k = logits.shape[1]
        if n < 1 or d < 1:
            raise ValidationError(f"need N >= 1 and d >= 1, got N={n}, d={d}")
        if k < 2:
            raise ValidationError(f"need K >= 2 classes, got K={k}")
        if logits.shape[0] != n or labels.shape != (n,):
            raise ValidationError(
                f"row count mismatch: features {n}, logits {logits.shape[0]}, labels {labels.shape}"
            )
        _check_finite(features, "features")
        _check_finite(logits, "logits")
        labels = _as_class_index(labels, k, "labels")
        if self.predictions is None:
            # np.argmax returns the first maximal index: lowest-index tie-break
            predictions = np.argmax(logits, axis=1).astype(np.int64)
        else:
            predictions = np.asarray(self.predictions)
            if predictions.shape != (n,):
                raise ValidationError(f"predictions must have shape ({n},), got {predictions.shape}")
            predictions = _as_class_index(predictions, k, "predictions")
        source = None
        if self.source is not None:
            source = np.asarray(self.source, dtype=np.int64)
            if source.shape != (n,):
                raise ValidationError(f"source must have shape ({n},)")
        object.__setattr__(self, "features", _readonly(features))
        object.__setattr__(self, "logits", _readonly(logits))
        object.__setattr__(self, "labels", _readonly(labels))
        object.__setattr__(self, "predictions", _readonly(predictions))
        object.__setattr__(self, "source", None if source is None else _readonly(source))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return self.logits.shape[1]

    @property
    def correct(self) -> np.ndarray:
        return self.predictions == self.labels

    def take(self, idx: np.ndarray, name: str | None = None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            self.features[idx],
            self.logits[idx],
            self.labels[idx],
            self.predictions[idx],
            name=self.name if name is None else name,
            source=None if self.source is None else self.source[idx],
        )

    def equals(self, other: "Dataset") -> bool:
        """Bit-exact comparison of every array (names ignored)."""
        pairs = [
            (self.features, other.features),
            (self.logits, other.logits),
            (self.labels, other.labels),
            (self.predictions, other.predictions),
        ]
        if (self.source is None) != (other.source is None):
            return False
        if self.source is not None:
            pairs.append((self.source, other.source))
        return all(a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in pairs)


def _check_finite(a: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(a)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise ValidationError(f"non-finite value in {what} at row {row}, column {col}")


def _as_class_index(a: np.ndarray, k: int, what: str) -> np.ndarray:
    if a.size and not np.issubdtype(a.dtype, np.integer):
        if not np.all(np.equal(np.mod(a, 1), 0)):
            raise ValidationError(f"{what} must be integers")
    a = a.astype(np.int64)
    bad = (a < 0) | (a >= k)
    if bad.any():
        i = int(np.argmax(bad))
        raise ValidationError(f"{what}[{i}]={a[i]} outside [0, {k})")
    return a


@dataclass(frozen=True)
class CorrectnessMask:
    mask: np.ndarray
    n_correct: int
    n_wrong: int


def split_by_correctness(ds: Dataset) -> tuple[np.ndarray, np.ndarray, CorrectnessMask]:
    """Partition feature rows into correctly and wrongly predicted samples.

    Row order inside each partition follows the original order.  Empty
    partitions are returned as ``(0, d)`` matrices.
    """
    mask = ds.correct
    n_correct = int(mask.sum())
    return (
        ds.features[mask],
        ds.features[~mask],
        CorrectnessMask(mask=mask, n_correct=n_correct, n_wrong=ds.n - n_correct),
    )


# --------------------------------------------------------------------------
# File formats


def save_dataset(ds: Dataset, path: str | Path, format: str = "binary") -> None:
    path = Path(path)
    if format == "binary":
        atomic_write_bytes(path, dataset_to_bytes(ds))
    elif format == "csv":
        atomic_write_text(path, dataset_to_csv(ds))
    else:
        raise ValidationError(f"unknown dataset format {format!r}")


def load_dataset(path: str | Path, format: str | None = None) -> Dataset:
    """Load a dataset; ``format`` defaults from the suffix (``.csv`` or binary)."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"dataset file not found: {path}")
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "binary"
    if format == "binary":
        return dataset_from_bytes(path.read_bytes(), name=path.stem)
    if format == "csv":
        return dataset_from_csv(path.read_text(), name=path.stem)
    raise ValidationError(f"unknown dataset format {format!r}")


def dataset_to_bytes(ds: Dataset) -> bytes:
    flags = FLAG_PREDICTIONS | (FLAG_PROVENANCE if ds.source is not None else 0)
    parts = [
        _HEADER.pack(MAGIC, VERSION, ds.n, ds.dim, ds.num_classes, flags),
        ds.features.astype("<f4").tobytes(),
        ds.logits.astype("<f4").tobytes(),
        ds.labels.astype("<i8").tobytes(),
        ds.predictions.astype("<i8").tobytes(),
    ]
    if ds.source is not None:
        parts.append(ds.source.astype("<i8").tobytes())
    return b"".join(parts)


def dataset_from_bytes(buf: bytes, name: str = "") -> Dataset:
    if len(buf) < _HEADER.size:
        raise FormatError(f"truncated header: {len(buf)} bytes, need {_HEADER.size}")
    magic, version, n, d, k, flags = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r} at offset 0, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version} at offset 4")
    if flags & ~(FLAG_PREDICTIONS | FLAG_PROVENANCE):
        raise FormatError(f"unknown flag bits {flags:#04x} at offset 32")
    offset = _HEADER.size

    def block(count: int, dtype: str, what: str) -> np.ndarray:
        nonlocal offset
        nbytes = count * np.dtype(dtype).itemsize
        if offset + nbytes > len(buf):
            raise FormatError(
                f"truncated {what} block at offset {offset}: need {nbytes} bytes, "
                f"{len(buf) - offset} available"
            )
        out = np.frombuffer(buf, dtype=dtype, count=count, offset=offset)
        start = offset
        offset += nbytes
        if dtype == "<f4" and not np.isfinite(out).all():
            i = int(np.argmax(~np.isfinite(out)))
            row = i // (d if what == "features" else k)
            raise FormatError(
                f"non-finite {what} value at row {row} (file offset {start + 4 * i})"
            )
        return out

    features = block(n * d, "<f4", "features").reshape(n, d)
    logits = block(n * k, "<f4", "logits").reshape(n, k)
    labels = block(n, "<i8", "labels")
    predictions = block(n, "<i8", "predictions") if flags & FLAG_PREDICTIONS else None
    source = block(n, "<i8", "provenance") if flags & FLAG_PROVENANCE else None
    if offset != len(buf):
        raise FormatError(f"{len(buf) - offset} trailing bytes after offset {offset}")
    try:
        return Dataset(features, logits, labels, predictions, name=name, source=source)
    except ValidationError as exc:
        raise FormatError(str(exc)) from exc


def dataset_to_csv(ds: Dataset) -> str:
    header = (
        ["label", "pred"]
        + [f"f{j}" for j in range(ds.dim)]
        + [f"l{j}" for j in range(ds.num_classes)]
    )
    lines = [",".join(header)]
    for i in range(ds.n):
        row = [str(int(ds.labels[i])), str(int(ds.predictions[i]))]
        # float(np.float32) repr round-trips back to the same float32
        row += [repr(float(v)) for v in ds.features[i]]
        row += [repr(float(v)) for v in ds.logits[i]]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def dataset_from_csv(text: str, name: str = "") -> Dataset:
    reader = csv.reader(text.splitlines())
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError("empty CSV file") from None
    header = [h.strip() for h in header]
    if header[:2] != ["label", "pred"]:
        raise FormatError(f"CSV header must start with 'label,pred', got {header[:2]}")
    fcols = [h for h in header[2:] if h.startswith("f")]
    lcols = [h for h in header[2:] if h.startswith("l")]
    d, k = len(fcols), len(lcols)
    expected = ["label", "pred"] + [f"f{j}" for j in range(d)] + [f"l{j}" for j in range(k)]
    if header != expected:
        raise FormatError("malformed CSV header: expected label,pred,f0..f{d-1},l0..l{K-1}")

    labels, preds, feats, logits = [], [], [], []
    for row_idx, row in enumerate(reader):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise FormatError(f"row {row_idx}: expected {len(header)} fields, got {len(row)}")
        try:
            labels.append(int(row[0]))
            preds.append(int(row[1]) if row[1].strip() else None)
            f = np.array([float(x) for x in row[2 : 2 + d]], dtype=np.float32)
            lg = np.array([float(x) for x in row[2 + d :]], dtype=np.float32)
        except ValueError as exc:
            raise FormatError(f"row {row_idx}: {exc}") from None
        if not np.isfinite(f).all():
            raise FormatError(f"row {row_idx}: non-finite feature value")
        if not np.isfinite(lg).all():
            raise FormatError(f"row {row_idx}: non-finite logit value")
        feats.append(f)
        logits.append(lg)
    if not labels:
        raise FormatError("CSV contains no data rows")
    given = [p is not None for p in preds]
    if any(given) and not all(given):
        raise FormatError(
            f"row {given.index(not given[0])}: pred column must be filled for all rows or none"
        )
    predictions = np.array(preds, dtype=np.int64) if all(given) else None
    try:
        return Dataset(np.stack(feats), np.stack(logits), np.array(labels), predictions, name=name)
    except ValidationError as exc:
        raise FormatError(str(exc)) from exc


# --------------------------------------------------------------------------
# Mixing and subsampling

Amount = Union[int, float]


@dataclass(frozen=True)
class MixSpec:
    """Sources to combine into one evaluation set.

    Each amount is either an ``int`` sample count or a ``float`` fraction in
    (0, 1]; note ``1`` means one sample while ``1.0`` means the whole source.
    """

    sources: Sequence[tuple[Dataset, Amount]]
    seed: int = 0
    name: str = "mixed"


def _draw_count(n: int, amount: Amount) -> int:
    if isinstance(amount, (bool, np.bool_)):
        raise ValidationError("amount must be a count or a fraction")
    if isinstance(amount, (int, np.integer)):
        if not 1 <= amount <= n:
            raise ValidationError(f"count {amount} outside [1, {n}]")
        return int(amount)
    if not 0.0 < amount <= 1.0:
        raise ValidationError(f"fraction {amount} outside (0, 1]")
    m = int(math.floor(amount * n + 0.5))
    if m < 1:
        raise ValidationError(f"fraction {amount} of {n} samples selects nothing")
    return m


def mix_datasets(spec: MixSpec) -> Dataset:
    """Concatenate (sub)samples of several datasets; ``source`` records origin.

    Rows drawn from each source keep their original relative order.  A single
    generator seeded with ``spec.seed`` is consumed source by source.
    """
    if not spec.sources:
        raise ValidationError("MixSpec needs at least one source")
    first = spec.sources[0][0]
    for ds, _ in spec.sources:
        if ds.dim != first.dim or ds.num_classes != first.num_classes:
            raise ValidationError(
                f"incompatible sources: {ds.name!r} has d={ds.dim}, K={ds.num_classes}; "
                f"{first.name!r} has d={first.dim}, K={first.num_classes}"
            )
    rng = np.random.default_rng(spec.seed)
    parts = []
    for i, (ds, amount) in enumerate(spec.sources):
        m = _draw_count(ds.n, amount)
        if m == ds.n:
            idx = np.arange(ds.n)
        else:
            idx = np.sort(rng.choice(ds.n, size=m, replace=False))
        parts.append((ds, idx, i))
    return Dataset(
        np.concatenate([ds.features[idx] for ds, idx, _ in parts]),
        np.concatenate([ds.logits[idx] for ds, idx, _ in parts]),
        np.concatenate([ds.labels[idx] for ds, idx, _ in parts]),
        np.concatenate([ds.predictions[idx] for ds, idx, _ in parts]),
        name=spec.name,
        source=np.concatenate([np.full(len(idx), i, dtype=np.int64) for _, idx, i in parts]),
    )


def subsample_labeled(ds: Dataset, fraction: float, seed: int = 0) -> Dataset:
    """Class-stratified subsample keeping ``fraction`` of each class.

    Every class that has samples keeps at least one.  ``fraction=1`` returns
    ``ds`` itself.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValidationError(f"fraction {fraction} outside (0, 1]")
    if fraction * ds.n < 1:
        raise ValidationError(f"fraction {fraction} of {ds.n} samples is below one sample")
    if fraction == 1.0:
        return ds
    rng = np.random.default_rng(seed)
    keep = []
    for c in np.unique(ds.labels):
        idx = np.flatnonzero(ds.labels == c)
        m = max(1, int(math.floor(fraction * len(idx) + 0.5)))
        keep.append(rng.choice(idx, size=m, replace=False))
    return ds.take(np.sort(np.concatenate(keep)), name=f"{ds.name}@{fraction:g}")


# --------------------------------------------------------------------------
# Manifest


@dataclass
class Manifest:
    """JSON file naming datasets and mixes of them.

    ``{"datasets": [{"name", "path", "format"?}], "mixes": [{"name", "seed",
    "sources": [{"dataset", "fraction" | "count"}]}]}``; paths are relative to
    the manifest's directory.
    """

    root: Path
    datasets: dict[str, dict] = field(default_factory=dict)
    mixes: dict[str, dict] = field(default_factory=dict)
    _cache: dict[str, Dataset] = field(default_factory=dict, repr=False)

    @classmethod
    def load(cls, path: str | Path) -> "Manifest":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise FormatError(f"cannot read manifest {path}: {exc}") from None
        m = cls(root=path.parent)
        for entry in raw.get("datasets", []):
            m.datasets[entry["name"]] = entry
        for entry in raw.get("mixes", []):
            m.mixes[entry["name"]] = entry
        return m

    def names(self) -> list[str]:
        return list(self.datasets) + list(self.mixes)

    def resolve(self, name: str) -> Dataset:
        if name in self._cache:
            return self._cache[name]
        if name in self.datasets:
            entry = self.datasets[name]
            ds = load_dataset(self.root / entry["path"], entry.get("format"))
            ds = Dataset(ds.features, ds.logits, ds.labels, ds.predictions, name=name, source=ds.source)
        elif name in self.mixes:
            entry = self.mixes[name]
            sources = []
            for src in entry["sources"]:
                amount = int(src["count"]) if "count" in src else float(src.get("fraction", 1.0))
                sources.append((self.resolve(src["dataset"]), amount))
            ds = mix_datasets(MixSpec(sources, seed=int(entry.get("seed", 0)), name=name))
        else:
            raise ValidationError(f"manifest has no dataset or mix named {name!r}")
        self._cache[name] = ds
        return ds
