"""Feature-space scores: MDS, KNN, SIRC and their correct-vs-wrong differences.

Δ-MDS fits one tied-covariance Gaussian model on correctly classified
training features and another on misclassified ones, then scores a test
feature by the difference of the two max-over-classes Mahalanobis scores.
Δ-KNN does the same non-parametrically with (averaged) log distances to the
nearest correct and wrong training features.
"""

from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.spatial.distance import cdist

from ._io import atomic_write_bytes
from .errors import FormatError, NotApplicableError, ValidationError
from .logit_scores import ScoreVector

DEFAULT_SHRINKAGE = 1e-6
SINGULAR_RTOL = 1e-10
DISTANCE_FLOOR = 1e-12
FALLBACK_HINT = "fall back to a logit-based score such as rlog or msp"


def _as_rows(z) -> tuple[np.ndarray, bool]:
    a = np.asarray(z, dtype=np.float64)
    if a.ndim == 1:
        return a[None, :], True
    if a.ndim != 2:
        raise ValidationError("expected a feature vector or an (n, d) matrix")
    return a, False


def _unwrap(values: np.ndarray, single: bool):
    return float(values[0]) if single else values


# --------------------------------------------------------------------------
# Gaussian statistics


@dataclass(frozen=True, eq=False)
class GaussianStats:
    """Class means with one shared covariance and its Cholesky factor.

    ``covariance`` is the matrix actually factored, i.e. after any shrinkage;
    ``shrinkage`` is the amount that was added to its diagonal.
    """

    means: np.ndarray  # (K, d)
    present: np.ndarray  # (K,) bool
    covariance: np.ndarray  # (d, d)
    chol: np.ndarray  # lower triangular, covariance = chol @ chol.T
    shrinkage: float
    sample_count: int

    @classmethod
    def from_parameters(cls, means, covariance, present=None, sample_count: int = 0) -> "GaussianStats":
        """Wrap known parameters (no estimation, no shrinkage)."""
        means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(covariance, dtype=np.float64))
        if present is None:
            present = np.ones(means.shape[0], dtype=bool)
        return cls(means, np.asarray(present, dtype=bool), cov, _factor(cov), 0.0, sample_count)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def logdet(self) -> float:
        return float(2.0 * np.log(np.diag(self.chol)).sum())

    def sq_mahalanobis(self, z) -> np.ndarray:
        """``(n, K)`` squared Mahalanobis distances; ``inf`` for absent classes."""
        rows, _ = _as_rows(z)
        if rows.shape[1] != self.dim:
            raise ValidationError(f"feature dimension {rows.shape[1]} != fitted dimension {self.dim}")
        zw = solve_triangular(self.chol, rows.T, lower=True)  # (d, n)
        out = np.full((rows.shape[0], self.means.shape[0]), np.inf)
        for i in np.flatnonzero(self.present):
            mw = solve_triangular(self.chol, self.means[i], lower=True)
            diff = zw - mw[:, None]
            out[:, i] = np.einsum("ij,ij->j", diff, diff)
        return out


def _factor(cov: np.ndarray) -> np.ndarray:
    try:
        return cholesky(cov, lower=True)
    except np.linalg.LinAlgError:
        raise ValidationError(
            "covariance is not positive definite; increase shrinkage"
        ) from None


def fit_gaussian_stats(features, labels, num_classes: int, shrinkage: float = DEFAULT_SHRINKAGE) -> GaussianStats:
    """Per-class means and the pooled (tied) within-class covariance.

    The covariance divides by ``n - K_present``.  When it is numerically
    singular (smallest eigenvalue at most ``1e-10`` times the largest),
    ``shrinkage * trace / d`` is added to the diagonal, or ``shrinkage`` itself
    when the trace is zero.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ValidationError("features must be (n, d) with n labels")
    if shrinkage < 0:
        raise ValidationError(f"shrinkage must be >= 0, got {shrinkage}")
    n, d = x.shape
    if n < 2:
        raise ValidationError(f"need at least 2 samples to fit Gaussian statistics, got {n}")
    if y.min() < 0 or y.max() >= num_classes:
        raise ValidationError(f"labels outside [0, {num_classes})")

    counts = np.bincount(y, minlength=num_classes)
    present = counts > 0
    sums = np.zeros((num_classes, d))
    np.add.at(sums, y, x)
    means = np.zeros((num_classes, d))
    means[present] = sums[present] / counts[present, None]

    dof = n - int(present.sum())
    if dof < 1:
        raise ValidationError(
            f"{n} samples over {int(present.sum())} classes leave no degrees of freedom "
            "for a pooled covariance"
        )
    centered = x - means[y]
    cov = centered.T @ centered / dof
    cov = 0.5 * (cov + cov.T)

    added = 0.0
    eig = np.linalg.eigvalsh(cov)
    if eig[0] <= SINGULAR_RTOL * max(eig[-1], 0.0):
        trace = float(np.trace(cov))
        added = shrinkage * trace / d if trace > 0 else shrinkage
        cov = cov + added * np.eye(d)
    return GaussianStats(means, present, cov, _factor(cov), added, n)


def mds_score(stats: GaussianStats, z):
    """Negative squared Mahalanobis distance to the closest present class mean."""
    if not stats.present.any():
        raise ValidationError("no class present in the fitted statistics")
    rows, single = _as_rows(z)
    return _unwrap(-stats.sq_mahalanobis(rows).min(axis=1), single)


def fit_delta_mds_stats(
    features, labels, correct, num_classes: int, shrinkage: float = DEFAULT_SHRINKAGE
) -> tuple[GaussianStats, GaussianStats]:
    """Fit the correct-side and wrong-side statistics, keyed by true label.

    Wrong-side classes with fewer than two samples are dropped; if fewer than
    two classes remain, one global mean and covariance over all wrong samples
    is used instead.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    correct = np.asarray(correct, dtype=bool)
    xw, yw = x[~correct], y[~correct]
    if xw.shape[0] == 0:
        raise NotApplicableError(f"Δ-MDS needs misclassified training samples, found none; {FALLBACK_HINT}")
    if correct.sum() == 0:
        raise NotApplicableError(f"Δ-MDS needs correctly classified training samples, found none; {FALLBACK_HINT}")
    try:
        stats_c = fit_gaussian_stats(x[correct], y[correct], num_classes, shrinkage)
    except ValidationError as exc:
        raise NotApplicableError(f"cannot fit correct-side statistics ({exc}); {FALLBACK_HINT}") from None

    counts = np.bincount(yw, minlength=num_classes)
    keep = counts[yw] >= 2
    try:
        if np.count_nonzero(counts >= 2) >= 2:
            stats_w = fit_gaussian_stats(xw[keep], yw[keep], num_classes, shrinkage)
        else:
            stats_w = fit_gaussian_stats(xw, np.zeros(len(xw), dtype=np.int64), 1, shrinkage)
    except ValidationError as exc:
        raise NotApplicableError(f"cannot fit wrong-side statistics ({exc}); {FALLBACK_HINT}") from None
    return stats_c, stats_w


def delta_mds(stats_c: GaussianStats, stats_w: GaussianStats, z):
    """MDS score against the correct-side fit minus the wrong-side one."""
    rows, single = _as_rows(z)
    return _unwrap(mds_score(stats_c, rows) - mds_score(stats_w, rows), single)


# --------------------------------------------------------------------------
# Nearest neighbours

_CHUNK_ELEMENTS = 1 << 22


def _thread_count() -> int:
    raw = os.environ.get("SELECTORLAB_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ValidationError(f"SELECTORLAB_THREADS must be an integer, got {raw!r}") from None
    return min(4, os.cpu_count() or 1)


def _normalize_rows(a: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(a, axis=1)
    if (norms == 0).any():
        raise ValidationError(f"zero-norm row {int(np.argmin(norms))} in {what} cannot be normalized")
    return a / norms[:, None]


@dataclass(frozen=True, eq=False)
class NeighborIndex:
    """Exact Euclidean k-NN over a fixed point set.

    ``method="exact"`` computes every distance from coordinate differences and
    is the reference; ``"blas"`` ranks candidates with the expanded
    ``|q|^2 + |p|^2 - 2 q.p`` form and recomputes the survivors exactly.
    """

    points: np.ndarray
    normalized: bool = False

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def query(self, z, k: int, method: str = "exact") -> np.ndarray:
        """Sorted distances to the ``k`` nearest points, shape ``(n, k)``."""
        rows, _ = _as_rows(z)
        if not 1 <= k <= self.size:
            raise ValidationError(f"k={k} must lie in [1, M] with M={self.size} indexed points")
        if rows.shape[1] != self.points.shape[1]:
            raise ValidationError("query dimension does not match the index")
        if self.normalized:
            rows = _normalize_rows(rows, "query features")
        if method == "exact":
            search = self._exact
        elif method == "blas":
            search = self._blas
        else:
            raise ValidationError(f"unknown search method {method!r}")
        step = max(1, _CHUNK_ELEMENTS // max(1, self.size))
        chunks = [rows[i : i + step] for i in range(0, rows.shape[0], step)]
        threads = _thread_count()
        if threads > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(threads) as pool:
                parts = list(pool.map(lambda c: search(c, k), chunks))
        else:
            parts = [search(c, k) for c in chunks]
        return np.concatenate(parts, axis=0)

    def _exact(self, q: np.ndarray, k: int) -> np.ndarray:
        dist = cdist(q, self.points)
        return np.sort(np.partition(dist, k - 1, axis=1)[:, :k], axis=1)

    def _blas(self, q: np.ndarray, k: int) -> np.ndarray:
        m = self.size
        n_cand = min(m, k + max(8, k // 4))
        if n_cand == m:
            cand = np.broadcast_to(np.arange(m), (q.shape[0], m))
        else:
            sq = (q * q).sum(1)[:, None] + (self.points * self.points).sum(1)[None, :] - 2.0 * q @ self.points.T
            cand = np.argpartition(sq, n_cand - 1, axis=1)[:, :n_cand]
        diff = self.points[cand] - q[:, None, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        return np.sort(dist, axis=1)[:, :k]


def build_index(features, normalize: bool = False) -> NeighborIndex:
    pts = np.array(features, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ValidationError("an index needs at least one point")
    if normalize:
        pts = _normalize_rows(pts, "indexed features")
    pts.setflags(write=False)
    return NeighborIndex(pts, bool(normalize))


def knn_score(index: NeighborIndex, z, k: int):
    """Negative distance to the k-th nearest indexed point."""
    rows, single = _as_rows(z)
    return _unwrap(-index.query(rows, k)[:, -1], single)


def fit_delta_knn_indices(features, correct, normalize: bool = True) -> tuple[NeighborIndex, NeighborIndex]:
    x = np.asarray(features, dtype=np.float64)
    correct = np.asarray(correct, dtype=bool)
    if not (~correct).any():
        raise NotApplicableError(f"Δ-KNN needs misclassified training samples, found none; {FALLBACK_HINT}")
    if not correct.any():
        raise NotApplicableError(f"Δ-KNN needs correctly classified training samples, found none; {FALLBACK_HINT}")
    return build_index(x[correct], normalize), build_index(x[~correct], normalize)


def log_knn_distance(index: NeighborIndex, z, k: int, averaged: bool = True) -> np.ndarray:
    """Mean log distance to the k nearest points, or the k-th log distance alone."""
    rows, _ = _as_rows(z)
    dist = np.maximum(index.query(rows, k), DISTANCE_FLOOR)
    logs = np.log(dist)
    return logs.mean(axis=1) if averaged else logs[:, -1]


def delta_knn(index_c: NeighborIndex, index_w: NeighborIndex, z, k: int, averaged: bool = True):
    """Negative log distance to correct neighbours minus that to wrong neighbours."""
    if k > index_c.size or k > index_w.size:
        raise ValidationError(
            f"k={k} exceeds a partition size (correct: {index_c.size}, wrong: {index_w.size})"
        )
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    rows, single = _as_rows(z)
    s = log_knn_distance(index_w, rows, k, averaged) - log_knn_distance(index_c, rows, k, averaged)
    return _unwrap(s, single)


# --------------------------------------------------------------------------
# SIRC


@dataclass(frozen=True)
class SircParams:
    a: float
    b: float
    s1_max: float = 1.0

    def __post_init__(self):
        if not self.b > 0:
            raise ValidationError(f"SIRC needs b > 0, got {self.b}")


def feature_l1_norm(features) -> np.ndarray:
    return np.abs(np.asarray(features, dtype=np.float64)).sum(axis=1)


def fit_sirc_params(s2_reference, s1_max: float = 1.0) -> SircParams:
    """``a = mean - 3 std`` and ``b = 1 / std`` of the auxiliary score on ID data."""
    s2 = np.asarray(getattr(s2_reference, "values", s2_reference), dtype=np.float64)
    if s2.size == 0:
        raise ValidationError("SIRC parameters need a non-empty reference sample")
    sigma = float(s2.std())
    if sigma == 0:
        raise ValidationError("auxiliary score has zero spread; SIRC b = 1/std is undefined")
    mu = float(s2.mean())
    return SircParams(a=mu - 3.0 * sigma, b=1.0 / sigma, s1_max=s1_max)


def sirc(s1, s2, params: SircParams) -> ScoreVector:
    v1 = np.asarray(getattr(s1, "values", s1), dtype=np.float64)
    v2 = np.asarray(getattr(s2, "values", s2), dtype=np.float64)
    if v1.shape != v2.shape:
        raise ValidationError(f"SIRC inputs are misaligned: {v1.shape} vs {v2.shape}")
    gap = params.s1_max - v1
    gate = 1.0 + np.exp(np.minimum(-params.b * (v2 - params.a), 700.0))
    values = np.where(gap == 0, 0.0, -gap * gate)
    return ScoreVector(values, "sirc", {"a": params.a, "b": params.b, "s1_max": params.s1_max})


# --------------------------------------------------------------------------
# Artifact files

_SST = struct.Struct("<4sIQQdQ")
_SNN = struct.Struct("<4sIBQQ")


def stats_to_bytes(stats: GaussianStats) -> bytes:
    k, d = stats.means.shape
    return b"".join(
        [
            _SST.pack(b"SST1", 1, k, d, stats.shrinkage, stats.sample_count),
            stats.present.astype(np.uint8).tobytes(),
            stats.means.astype("<f8").tobytes(),
            stats.covariance.astype("<f8").tobytes(),
        ]
    )


def stats_from_bytes(buf: bytes) -> GaussianStats:
    if len(buf) < _SST.size:
        raise FormatError("truncated stats header")
    magic, version, k, d, shrink, count = _SST.unpack_from(buf)
    if magic != b"SST1" or version != 1:
        raise FormatError(f"not a version-1 stats file (magic {magic!r})")
    expected = _SST.size + k + 8 * k * d + 8 * d * d
    if len(buf) != expected:
        raise FormatError(f"stats file has {len(buf)} bytes, expected {expected}")
    off = _SST.size
    present = np.frombuffer(buf, np.uint8, k, off).astype(bool)
    off += k
    means = np.frombuffer(buf, "<f8", k * d, off).reshape(k, d).copy()
    off += 8 * k * d
    cov = np.frombuffer(buf, "<f8", d * d, off).reshape(d, d).copy()
    return GaussianStats(means, present, cov, _factor(cov), shrink, count)


def index_to_bytes(index: NeighborIndex) -> bytes:
    m, d = index.points.shape
    return _SNN.pack(b"SNN1", 1, int(index.normalized), m, d) + index.points.astype("<f8").tobytes()


def index_from_bytes(buf: bytes) -> NeighborIndex:
    if len(buf) < _SNN.size:
        raise FormatError("truncated index header")
    magic, version, flags, m, d = _SNN.unpack_from(buf)
    if magic != b"SNN1" or version != 1:
        raise FormatError(f"not a version-1 index file (magic {magic!r})")
    if len(buf) != _SNN.size + 8 * m * d:
        raise FormatError("index payload size does not match its header")
    pts = np.frombuffer(buf, "<f8", m * d, _SNN.size).reshape(m, d).copy()
    pts.setflags(write=False)
    return NeighborIndex(pts, bool(flags & 1))


def save_stats(stats: GaussianStats, path: str | Path) -> None:
    atomic_write_bytes(path, stats_to_bytes(stats))


def load_stats(path: str | Path) -> GaussianStats:
    return stats_from_bytes(Path(path).read_bytes())


def save_index(index: NeighborIndex, path: str | Path) -> None:
    atomic_write_bytes(path, index_to_bytes(index))


def load_index(path: str | Path) -> NeighborIndex:
    return index_from_bytes(Path(path).read_bytes())
