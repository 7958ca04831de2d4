"""Confidence scores computed from logits alone: MSP, MaxLogit, Energy, RLog.

Every function accepts either a :class:`~selectorlab.data.Dataset` or an
``(N, K)`` logit array and reduces in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import logsumexp

from .data import Dataset
from .errors import ValidationError


@dataclass(frozen=True, eq=False)
class ScoreVector:
    """One confidence score per sample; larger means "more likely correct"."""

    values: np.ndarray
    method: str
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValidationError(f"score values must be 1-D, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ValidationError(f"score {self.method!r} has non-finite entries")
        v = np.ascontiguousarray(v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.shape[0]


def _logits(x) -> np.ndarray:
    a = x.logits if isinstance(x, Dataset) else x
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ValidationError("logits must be a 1-D row or a 2-D matrix")
    if a.shape[1] < 2:
        raise ValidationError(f"need K >= 2 logits per row, got K={a.shape[1]}")
    if not np.isfinite(a).all():
        raise ValidationError("logits contain non-finite entries")
    return a


def softmax(logits) -> np.ndarray:
    """Row-wise softmax with the row maximum subtracted first."""
    a = np.asarray(logits, dtype=np.float64)
    shifted = a - a.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def msp(x) -> ScoreVector:
    """Maximum softmax probability."""
    p = softmax(_logits(x))
    return ScoreVector(p.max(axis=1), "msp")


def max_logit(x) -> ScoreVector:
    return ScoreVector(_logits(x).max(axis=1), "maxlogit")


def energy(x, T: float = 1.0) -> ScoreVector:
    """Negative free energy ``T * logsumexp(l / T)``."""
    if not T > 0:
        raise ValidationError(f"temperature must be positive, got {T}")
    a = _logits(x)
    return ScoreVector(T * logsumexp(a / T, axis=1), "energy", {"T": float(T)})


def top2(x) -> tuple[np.ndarray, np.ndarray]:
    """Largest and second-largest logit of each row (class identity ignored)."""
    a = _logits(x)
    part = np.partition(a, a.shape[1] - 2, axis=1)
    return part[:, -1], part[:, -2]


def rlog(x) -> ScoreVector:
    """Margin between the two largest logits."""
    first, second = top2(x)
    return ScoreVector(first - second, "rlog")


def concentration_ratio(x) -> np.ndarray:
    """Per-sample ``L / d2``: softmax mass outside the top two over the runner-up mass.

    RLog tracks the posterior odds closely when this ratio is small.  Reported
    as a diagnostic only.
    """
    p = np.sort(softmax(_logits(x)), axis=1)[:, ::-1]
    rest = p[:, 2:].sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(rest == 0, 0.0, rest / p[:, 1])
