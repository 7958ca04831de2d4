"""Fit-once, score-many pipeline over the full score registry."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .combiner import COMBINATIONS, Profile, combine, fit_lambda_balance, load_profile
from .data import Dataset, dataset_to_bytes
from .distance_scores import (
    DEFAULT_SHRINKAGE,
    GaussianStats,
    NeighborIndex,
    build_index,
    delta_knn,
    delta_mds,
    feature_l1_norm,
    fit_delta_knn_indices,
    fit_delta_mds_stats,
    fit_gaussian_stats,
    fit_sirc_params,
    knn_score,
    load_index,
    load_stats,
    mds_score,
    save_index,
    save_stats,
    sirc,
)
from .errors import SelectorLabError, ValidationError
from .logit_scores import ScoreVector, energy, max_logit, msp, rlog

log = logging.getLogger(__name__)

LOGIT_SCORES = ("msp", "maxlogit", "energy", "rlog")
FEATURE_SCORES = ("mds", "knn", "sirc", "delta-mds", "delta-knn")
SCORE_NAMES = LOGIT_SCORES + FEATURE_SCORES + tuple(COMBINATIONS)

# k used when neither the flag nor a profile sets one
DEFAULT_K = {"knn": 50, "delta-knn": 25}


@dataclass
class ScoringConfig:
    """Hyperparameters shared by every score in one run.

    ``k`` and ``lam`` of ``None`` defer to the profile, then to the defaults
    (``lam`` is balanced on a calibration split when one is supplied).
    """

    k: int | None = None
    lam: float | None = None
    temperature: float = 1.0
    normalize_knn: bool = True
    normalize_mds: bool = False
    shrinkage: float = DEFAULT_SHRINKAGE
    averaged: bool = True
    profile: str | None = None

    def resolved_profile(self) -> Profile | None:
        return load_profile(self.profile) if self.profile else None

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "lambda": self.lam,
            "temperature": self.temperature,
            "normalize_knn": self.normalize_knn,
            "normalize_mds": self.normalize_mds,
            "shrinkage": self.shrinkage,
            "averaged": self.averaged,
            "profile": self.profile,
        }


def parse_score_list(text: str) -> list[str]:
    names = [s.strip() for s in text.split(",") if s.strip()]
    if not names:
        raise ValidationError("no scores requested")
    unknown = [s for s in names if s not in SCORE_NAMES]
    if unknown:
        raise ValidationError(f"unknown score(s) {', '.join(unknown)}; known: {', '.join(SCORE_NAMES)}")
    return names


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if (norms == 0).any():
        raise ValidationError(f"row {int(np.flatnonzero(norms[:, 0] == 0)[0])} has zero norm; cannot normalize")
    return x / norms


class ArtifactCache:
    """Stores fitted statistics and indices keyed by training data and settings."""

    def __init__(self, directory: str | Path | None):
        self.directory = Path(directory) if directory else None

    def _path(self, kind: str, key: str, suffix: str) -> Path | None:
        return self.directory / f"{kind}-{key}{suffix}" if self.directory else None

    def stats(self, kind: str, key: str, fit: Callable[[], GaussianStats]) -> GaussianStats:
        path = self._path(kind, key, ".sst")
        if path is not None and path.exists():
            return load_stats(path)
        obj = fit()
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            save_stats(obj, path)
        return obj

    def index(self, kind: str, key: str, fit: Callable[[], NeighborIndex]) -> NeighborIndex:
        path = self._path(kind, key, ".snn")
        if path is not None and path.exists():
            return load_index(path)
        obj = fit()
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            save_index(obj, path)
        return obj


@dataclass
class Scorer:
    """Scores test sets using artifacts fitted on ``train`` only.

    Artifacts are fitted lazily on first use and reused across calls.
    """

    train: Dataset
    config: ScoringConfig = field(default_factory=ScoringConfig)
    calib: Dataset | None = None
    cache: ArtifactCache = field(default_factory=lambda: ArtifactCache(None))
    _fitted: dict = field(default_factory=dict, repr=False)
    _train_key: str = field(default="", repr=False)

    def __post_init__(self):
        self.profile = self.config.resolved_profile()
        self._train_key = hashlib.sha256(dataset_to_bytes(self.train)).hexdigest()[:16]

    # -- hyperparameters --------------------------------------------------

    def k_for(self, name: str) -> int:
        if self.config.k is not None:
            return int(self.config.k)
        if self.profile is not None and name in self.profile.k:
            return self.profile.k_for(name)
        return DEFAULT_K[name]

    def lambda_for(self, name: str) -> tuple[float, str]:
        if self.config.lam is not None:
            return float(self.config.lam), "flag"
        if self.profile is not None and self.profile.lambda_for(name) is not None:
            return float(self.profile.lambda_for(name)), f"profile:{self.profile.name}"
        if self.calib is not None:
            first, second = COMBINATIONS[name]
            lam = fit_lambda_balance(self._base(first, self.calib), self._base(second, self.calib))
            return lam, "balanced-on-calibration"
        log.warning("no lambda for %s from flag, profile or calibration split; using 1.0", name)
        return 1.0, "default"

    # -- fitted artifacts -------------------------------------------------

    def _key(self, *parts) -> str:
        h = hashlib.sha256(self._train_key.encode())
        for p in parts:
            h.update(repr(p).encode())
        return h.hexdigest()[:16]

    def _mds_features(self, ds: Dataset) -> np.ndarray:
        x = ds.features.astype(np.float64)
        return _unit_rows(x) if self.config.normalize_mds else x

    def _artifact(self, kind: str):
        if kind in self._fitted:
            return self._fitted[kind]
        cfg, tr = self.config, self.train
        if kind == "mds":
            key = self._key(kind, cfg.normalize_mds, cfg.shrinkage)
            obj = self.cache.stats(
                kind, key,
                lambda: fit_gaussian_stats(self._mds_features(tr), tr.labels, tr.num_classes, cfg.shrinkage),
            )
        elif kind == "knn":
            key = self._key(kind, cfg.normalize_knn)
            obj = self.cache.index(kind, key, lambda: build_index(tr.features, cfg.normalize_knn))
        elif kind == "delta-mds":
            key = self._key(kind, cfg.normalize_mds, cfg.shrinkage)
            pair: list = []

            def fit_pair():
                if not pair:
                    pair.extend(
                        fit_delta_mds_stats(
                            self._mds_features(tr), tr.labels, tr.correct, tr.num_classes, cfg.shrinkage
                        )
                    )
                return pair

            obj = (
                self.cache.stats("delta-mds-correct", key, lambda: fit_pair()[0]),
                self.cache.stats("delta-mds-wrong", key, lambda: fit_pair()[1]),
            )
        elif kind == "delta-knn":
            key = self._key(kind, cfg.normalize_knn)
            pair = []

            def fit_pair():
                if not pair:
                    pair.extend(fit_delta_knn_indices(tr.features, tr.correct, cfg.normalize_knn))
                return pair

            obj = (
                self.cache.index("delta-knn-correct", key, lambda: fit_pair()[0]),
                self.cache.index("delta-knn-wrong", key, lambda: fit_pair()[1]),
            )
        elif kind == "sirc":
            obj = fit_sirc_params(feature_l1_norm(tr.features), s1_max=1.0)
        else:  # pragma: no cover - guarded by callers
            raise ValidationError(f"no artifact for {kind!r}")
        self._fitted[kind] = obj
        return obj

    # -- scoring ----------------------------------------------------------

    def _base(self, name: str, ds: Dataset) -> ScoreVector:
        cfg = self.config
        if name == "msp":
            return msp(ds)
        if name == "maxlogit":
            return max_logit(ds)
        if name == "energy":
            return energy(ds, cfg.temperature)
        if name == "rlog":
            return rlog(ds)
        if name == "mds":
            return ScoreVector(mds_score(self._artifact("mds"), self._mds_features(ds)), "mds",
                               {"normalize": cfg.normalize_mds, "shrinkage": cfg.shrinkage})
        if name == "knn":
            k = self.k_for("knn")
            return ScoreVector(knn_score(self._artifact("knn"), ds.features, k), "knn",
                               {"k": k, "normalize": cfg.normalize_knn})
        if name == "sirc":
            params = self._artifact("sirc")
            return sirc(msp(ds), feature_l1_norm(ds.features), params)
        if name == "delta-mds":
            stats_c, stats_w = self._artifact("delta-mds")
            return ScoreVector(delta_mds(stats_c, stats_w, self._mds_features(ds)), "delta-mds",
                               {"normalize": cfg.normalize_mds, "shrinkage": cfg.shrinkage})
        if name == "delta-knn":
            k = self.k_for("delta-knn")
            idx_c, idx_w = self._artifact("delta-knn")
            return ScoreVector(delta_knn(idx_c, idx_w, ds.features, k, cfg.averaged), "delta-knn",
                               {"k": k, "averaged": cfg.averaged, "normalize": cfg.normalize_knn})
        raise ValidationError(f"unknown score {name!r}")

    def score(self, name: str, ds: Dataset) -> ScoreVector:
        """Score ``ds``; errors are re-raised with the score name attached."""
        try:
            if name in COMBINATIONS:
                first, second = COMBINATIONS[name]
                lam, source = self.lambda_for(name)
                out = combine(self._base(first, ds), self._base(second, ds), lam, method=name)
                out.params["lambda_source"] = source
                return out
            return self._base(name, ds)
        except SelectorLabError as exc:
            raise type(exc)(f"{name}: {exc}") from None

    def score_all(self, names, ds: Dataset) -> dict[str, ScoreVector]:
        return {name: self.score(name, ds) for name in names}
