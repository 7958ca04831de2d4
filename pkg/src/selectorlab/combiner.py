"""Linear combinations ``t = s1 + lam * s2`` of two selector scores."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import ValidationError
from .logit_scores import ScoreVector

# name -> (first parent, second parent); the second is scaled by lambda
COMBINATIONS: dict[str, tuple[str, str]] = {
    "delta-mds-rlog": ("delta-mds", "rlog"),
    "delta-knn-rlog": ("delta-knn", "rlog"),
    "delta-mds-msp": ("delta-mds", "msp"),
    "delta-knn-msp": ("delta-knn", "msp"),
    "msp-rlog": ("msp", "rlog"),
    "delta-mds-delta-knn": ("delta-mds", "delta-knn"),
}


def combine(s1: ScoreVector, s2: ScoreVector, lam: float, method: str | None = None) -> ScoreVector:
    if len(s1) != len(s2):
        raise ValidationError(f"cannot combine scores of length {len(s1)} and {len(s2)}")
    lam = float(lam)
    if not np.isfinite(lam):
        raise ValidationError(f"lambda must be finite, got {lam}")
    # lam == 0 returns s1 bit-for-bit (keeps -0.0 and ignores non-finite s2)
    values = s1.values.copy() if lam == 0.0 else s1.values + lam * s2.values
    return ScoreVector(
        values,
        method or f"{s1.method}+{s2.method}",
        {"first": s1.method, "second": s2.method, "lambda": lam},
    )


def fit_lambda_balance(s1, s2) -> float:
    """``mean|s1| / mean|s2|`` so neither score dominates the sum."""
    return balance_report(s1, s2)["lambda"]


def balance_report(s1, s2) -> dict[str, float | None]:
    """Mean-based lambda plus the median-based alternative, for diagnostics."""
    a = np.abs(np.asarray(getattr(s1, "values", s1), dtype=np.float64))
    b = np.abs(np.asarray(getattr(s2, "values", s2), dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise ValidationError("lambda balancing needs non-empty calibration scores")
    mean_b = b.mean()
    if mean_b == 0:
        raise ValidationError("second score is identically zero; cannot balance magnitudes")
    med_b = float(np.median(b))
    with np.errstate(over="ignore"):
        lam = float(a.mean() / mean_b)
        lam_median = float(np.median(a) / med_b) if med_b > 0 else None
    if not np.isfinite(lam):
        raise ValidationError("score magnitudes differ beyond float64 range; cannot balance lambda")
    if lam_median is not None and not np.isfinite(lam_median):
        lam_median = None
    return {"lambda": lam, "lambda_median": lam_median}


@dataclass(frozen=True)
class Profile:
    """Default hyperparameters for one model family."""

    name: str
    k: dict[str, int]
    lambdas: dict[str, float]
    description: str = ""

    def lambda_for(self, combination: str) -> float | None:
        return self.lambdas.get(combination)

    def k_for(self, score: str, default: int = 25) -> int:
        return int(self.k.get(score, default))


PROFILE_NAMES = ("vision-clip", "vision-supervised", "language")


def load_profile(name: str) -> Profile:
    if name not in PROFILE_NAMES:
        raise ValidationError(f"unknown profile {name!r}; choose from {', '.join(PROFILE_NAMES)}")
    raw = json.loads(resources.files("selectorlab").joinpath(f"profiles/{name}.json").read_text())
    return Profile(
        name=raw["name"],
        k={key: int(v) for key, v in raw["k"].items()},
        lambdas={key: float(v) for key, v in raw["lambda"].items()},
        description=raw.get("description", ""),
    )
