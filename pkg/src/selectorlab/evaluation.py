"""Risk-coverage curves, AURC, oracle AURC, NAURC and empirical NP error rates.

Acceptance is strict: a sample is accepted iff its score exceeds the
threshold.  The curve has one point per prefix of the score-sorted order
(descending, ties broken by original index), and AURC is the mean of the
prefix risks.  For a curve, AURC is the correctly rounded value of the exact
rational mean, so it does not depend on summation order or platform.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import UndefinedMetricError, ValidationError


def _values(scores) -> np.ndarray:
    v = np.asarray(getattr(scores, "values", scores), dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValidationError("scores must be a non-empty 1-D vector")
    return v


def _aligned(scores, correct) -> tuple[np.ndarray, np.ndarray]:
    s = _values(scores)
    c = np.asarray(correct, dtype=bool)
    if c.shape != s.shape:
        raise ValidationError(f"scores ({s.shape[0]}) and correctness ({c.shape}) are misaligned")
    return s, c


@dataclass(frozen=True)
class Selection:
    accepted: np.ndarray
    coverage: float
    risk: float


def select(scores, correct, gamma: float) -> Selection:
    """Accept samples with ``score > gamma`` and report coverage and selective risk."""
    s, c = _aligned(scores, correct)
    accepted = s > gamma
    n_acc = int(accepted.sum())
    if n_acc == 0:
        raise UndefinedMetricError(f"threshold {gamma} rejects every sample; selective risk is undefined")
    errors = int((accepted & ~c).sum())
    return Selection(accepted, n_acc / s.size, errors / n_acc)


@dataclass(frozen=True)
class RiskCoverageCurve:
    """Point ``n`` (1-based) accepts the ``n`` top-scored samples.

    ``threshold[n-1]`` is the score of the next sample in the order, the
    largest strict threshold accepting exactly that prefix when untied
    (``-inf`` for the full set).
    """

    coverage: np.ndarray
    risk: np.ndarray
    threshold: np.ndarray
    order: np.ndarray

    def __len__(self) -> int:
        return self.coverage.shape[0]


def risk_coverage_curve(scores, correct) -> RiskCoverageCurve:
    s, c = _aligned(scores, correct)
    order = np.argsort(-s, kind="stable")
    errors = np.cumsum(~c[order])
    n = np.arange(1, s.size + 1)
    threshold = np.append(s[order][1:], -np.inf)
    return RiskCoverageCurve(n / s.size, errors / n, threshold, order)


def _two_product(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Dekker's error-free product: ``a * b == p + err`` exactly."""
    p = a * b

    def split(x):
        c = 134217729.0 * x
        hi = c - (c - x)
        return hi, x - hi

    ah, al = split(a)
    bh, bl = split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def _exact_ratio_mean(errors: np.ndarray, sizes: np.ndarray) -> float:
    # sum_i errors_i / (sizes_i * N), each ratio carried as quotient plus residual
    denom = sizes * float(sizes.size)
    q = errors / denom
    p, perr = _two_product(q, denom)
    residual = ((errors - p) - perr) / denom
    return math.fsum(q.tolist() + residual.tolist())


def aurc(curve) -> float:
    """Mean of the prefix risks; accepts a curve or a risk array.

    A curve whose risks are error counts over prefix sizes is averaged
    exactly and rounded once.  A bare risk array is averaged with ``fsum``.
    """
    risk = np.asarray(getattr(curve, "risk", curve), dtype=np.float64)
    if risk.size == 0:
        raise ValidationError("empty risk-coverage curve")
    if isinstance(curve, RiskCoverageCurve) and risk.size < 2**26:
        sizes = np.arange(1, risk.size + 1, dtype=np.float64)
        errors = np.rint(risk * sizes)
        if np.array_equal(errors / sizes, risk):
            return _exact_ratio_mean(errors, sizes)
    return math.fsum(risk.tolist()) / risk.size


def oracle_aurc(correct) -> float:
    """AURC of the ordering that ranks every correct sample first."""
    c = np.asarray(correct, dtype=bool)
    return aurc(risk_coverage_curve(c.astype(np.float64), c))


def naurc(aurc_value: float, oracle: float, full_risk: float) -> float:
    """AURC rescaled so the oracle maps to 0 and the full-coverage risk to 1."""
    denom = full_risk - oracle
    if not denom > 0:
        raise UndefinedMetricError(
            "NAURC is undefined when every sample is correct or every sample is wrong"
        )
    return (aurc_value - oracle) / denom


def count_ties(scores) -> int:
    """Number of distinct score values shared by more than one sample."""
    _, counts = np.unique(_values(scores), return_counts=True)
    return int((counts > 1).sum())


@dataclass(frozen=True)
class RiskCoverageReport:
    curve: RiskCoverageCurve
    aurc: float
    oracle_aurc: float
    naurc: float | None
    full_risk: float
    ties: int
    n: int

    def to_dict(self, method: str = "") -> dict:
        out = {
            "aurc": self.aurc,
            "aurc_x100": self.aurc * 100.0,
            "naurc": self.naurc,
            "naurc_defined": self.naurc is not None,
            "oracle_aurc": self.oracle_aurc,
            "full_risk": self.full_risk,
            "ties": self.ties,
            "n": self.n,
        }
        if method:
            out["method"] = method
        return out


def evaluate(scores, correct) -> RiskCoverageReport:
    s, c = _aligned(scores, correct)
    curve = risk_coverage_curve(s, c)
    a = aurc(curve)
    oracle = oracle_aurc(c)
    full = float(curve.risk[-1])
    try:
        n_value = naurc(a, oracle, full)
    except UndefinedMetricError:
        n_value = None
    return RiskCoverageReport(curve, a, oracle, n_value, full, count_ties(s), s.size)


def np_error_rates(scores, h0, gamma: float) -> tuple[float, float]:
    """Empirical type-I and type-II rates of the test ``accept iff score > gamma``.

    ``h0`` marks samples drawn under the null (prediction correct).  Returns
    ``(alpha, beta)``: the fraction of null samples rejected and the fraction
    of alternative samples accepted.
    """
    s, h = _aligned(scores, h0)
    n0, n1 = int(h.sum()), int((~h).sum())
    if n0 == 0 or n1 == 0:
        raise ValidationError("both hypotheses need at least one sample")
    alpha = int((s[h] <= gamma).sum()) / n0
    beta = int((s[~h] > gamma).sum()) / n1
    return alpha, beta


def grouped_mean(values: Mapping[str, float], groups: Mapping[str, str]) -> float:
    """Average within each group first, then across groups.

    ``values`` maps subset name to metric; ``groups`` maps subset name to its
    category (subsets without an entry form their own category).
    """
    by_group: dict[str, list[float]] = {}
    for subset, v in values.items():
        by_group.setdefault(groups.get(subset, subset), []).append(v)
    if not by_group:
        raise ValidationError("nothing to aggregate")
    means = [math.fsum(vs) / len(vs) for _, vs in sorted(by_group.items())]
    return math.fsum(means) / len(means)


# --------------------------------------------------------------------------
# Emitters


def curve_to_csv(curve: RiskCoverageCurve) -> str:
    buf = io.StringIO()
    buf.write("coverage,risk,threshold\n")
    for cov, risk, thr in zip(curve.coverage.tolist(), curve.risk.tolist(), curve.threshold.tolist()):
        buf.write(f"{cov!r},{risk!r},{thr!r}\n")
    return buf.getvalue()


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")


def curves_to_svg(curves: Mapping[str, RiskCoverageCurve], width: int = 480, height: int = 360,
                  max_points: int = 400) -> str:
    """Risk against coverage for several scores as a plain SVG line plot."""
    pad = 48
    top = max((float(c.risk.max()) for c in curves.values()), default=1.0) or 1.0
    iw, ih = width - 2 * pad, height - 2 * pad

    def xy(cov: float, risk: float) -> str:
        return f"{pad + cov * iw:.2f},{height - pad - risk / top * ih:.2f}"

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="{pad}" y="{pad}" width="{iw}" height="{ih}" fill="none" stroke="#444"/>',
        f'<text x="{width / 2:.0f}" y="{height - 10}" text-anchor="middle" font-size="12">coverage</text>',
        f'<text x="14" y="{height / 2:.0f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {height / 2:.0f})">selective risk</text>',
        f'<text x="{pad}" y="{height - pad + 14}" font-size="10">0</text>',
        f'<text x="{width - pad}" y="{height - pad + 14}" font-size="10" text-anchor="end">1</text>',
        f'<text x="{pad - 4}" y="{pad + 4}" font-size="10" text-anchor="end">{top:.3g}</text>',
    ]
    for i, (name, c) in enumerate(curves.items()):
        step = max(1, len(c) // max_points)
        idx = np.unique(np.append(np.arange(0, len(c), step), len(c) - 1))
        pts = " ".join(xy(float(c.coverage[j]), float(c.risk[j])) for j in idx)
        color = _PALETTE[i % len(_PALETTE)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        out.append(
            f'<text x="{pad + 6}" y="{pad + 14 + 14 * i}" font-size="11" fill="{color}">{_escape(name)}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def ranking_table(reports: Sequence[tuple[str, RiskCoverageReport]]) -> str:
    """CSV of all scores sorted by NAURC ascending (undefined NAURC last)."""
    rows = sorted(
        reports,
        key=lambda item: (item[1].naurc is None, item[1].naurc if item[1].naurc is not None else 0.0, item[0]),
    )
    buf = io.StringIO()
    buf.write("rank,method,aurc,aurc_x100,naurc,oracle_aurc,full_risk,ties\n")
    for rank, (name, r) in enumerate(rows, start=1):
        nv = "undefined" if r.naurc is None else repr(r.naurc)
        buf.write(f"{rank},{name},{r.aurc!r},{r.aurc * 100.0!r},{nv},{r.oracle_aurc!r},{r.full_risk!r},{r.ties}\n")
    return buf.getvalue()
