import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from selectorlab.combiner import (
    COMBINATIONS,
    PROFILE_NAMES,
    balance_report,
    combine,
    fit_lambda_balance,
    load_profile,
)
from selectorlab.errors import ValidationError
from selectorlab.logit_scores import ScoreVector

vectors = hnp.arrays(np.float64, 25, elements=st.floats(-1e3, 1e3))
lams = st.floats(-1e3, 1e3)


def sv(values, name="s"):
    return ScoreVector(np.asarray(values, dtype=np.float64), name)


def test_lambda_zero_is_identity():
    s1, s2 = sv([1.0, -2.0, 3.5], "a"), sv([9.0, 9.0, -9.0], "b")
    assert combine(s1, s2, 0.0).values.tobytes() == s1.values.tobytes()


def test_self_combination_doubles():
    s = sv([3.0, 1.0, 2.0])
    t = combine(s, s, 1.0)
    assert t.values.tolist() == [6.0, 2.0, 4.0]
    assert np.array_equal(np.argsort(-t.values), np.argsort(-s.values))


def test_metadata_and_errors():
    t = combine(sv([1.0], "delta-mds"), sv([2.0], "rlog"), 3.0, method="delta-mds-rlog")
    assert t.method == "delta-mds-rlog"
    assert t.params == {"first": "delta-mds", "second": "rlog", "lambda": 3.0}
    with pytest.raises(ValidationError):
        combine(sv([1.0, 2.0]), sv([1.0]), 1.0)
    with pytest.raises(ValidationError):
        combine(sv([1.0]), sv([1.0]), float("inf"))


@given(vectors, vectors, lams, st.floats(1e-3, 1e3))
def test_joint_positive_rescale(a, b, lam, c):
    t = combine(sv(a), sv(b), lam).values
    scaled = combine(sv(c * a), sv(c * b), lam).values
    np.testing.assert_allclose(scaled, c * t, rtol=1e-9, atol=1e-6)


@given(vectors, vectors, vectors, lams)
def test_zero_weight_third_score_is_exact(a, b, c, lam):
    t = combine(sv(a), sv(b), lam)
    assert combine(t, sv(c), 0.0).values.tobytes() == t.values.tobytes()


def test_balance_examples():
    assert fit_lambda_balance([1.0, -1.0], [-1.0, 1.0]) == 1.0
    assert fit_lambda_balance([10.0, -10.0], [0.1, 0.1]) == pytest.approx(100.0)
    with pytest.raises(ValidationError):
        fit_lambda_balance([1.0], [0.0])
    with pytest.raises(ValidationError):
        fit_lambda_balance([], [])
    with pytest.raises(ValidationError, match="range"):
        fit_lambda_balance([1.0], [1e-320])
    r = balance_report([1.0, 2.0, 30.0], [1.0, 1.0, 1.0])
    assert r["lambda"] == pytest.approx(11.0) and r["lambda_median"] == 2.0


@given(vectors, vectors, st.floats(1e-2, 1e2))
def test_balance_scale_covariant(a, b, c):
    if np.abs(b).mean() == 0 or np.abs(a).mean() == 0:
        return
    try:
        lam = fit_lambda_balance(a, b)
        fit_lambda_balance(a, c * b)
    except ValidationError:
        # only when the ratio of magnitudes leaves float64 range
        assert np.abs(a).mean() / np.finfo(np.float64).max > np.abs(b).mean() * min(c, 1.0) / 2
        return
    assert fit_lambda_balance(a, c * b) == pytest.approx(lam / c, rel=1e-9)
    np.testing.assert_allclose(
        combine(sv(a), sv(c * b), lam / c).values, combine(sv(a), sv(b), lam).values, rtol=1e-9, atol=1e-9
    )


def test_registry_names():
    assert set(COMBINATIONS) == {
        "delta-mds-rlog", "delta-knn-rlog", "delta-mds-msp", "delta-knn-msp", "msp-rlog", "delta-mds-delta-knn",
    }


def test_profile_presets():
    clip = load_profile("vision-clip")
    assert clip.lambda_for("delta-mds-rlog") == 10000
    assert clip.lambda_for("delta-knn-rlog") == 10
    assert clip.k_for("delta-knn") == 25 and clip.k_for("knn") == 50
    sup = load_profile("vision-supervised")
    assert (sup.lambda_for("delta-mds-rlog"), sup.lambda_for("delta-knn-rlog")) == (1000, 0.5)
    lang = load_profile("language")
    assert lang.lambda_for("delta-knn-rlog") == 0.05 and lang.lambda_for("delta-mds-msp") == 1000
    assert set(PROFILE_NAMES) >= {"vision-clip", "vision-supervised"}
    with pytest.raises(ValidationError):
        load_profile("nope")
