"""Acceptance gate: each test carries a criterion marker and its own time budget."""

import hashlib
import itertools
import time
from contextlib import contextmanager
from fractions import Fraction

import numpy as np
import pytest

from selectorlab.bundle import ScoreBundle
from selectorlab.cli import main
from selectorlab.combiner import fit_lambda_balance
from selectorlab.data import Dataset, dataset_from_bytes, dataset_to_bytes, load_dataset, save_dataset
from selectorlab.evaluation import aurc, evaluate, risk_coverage_curve, select
from selectorlab.logit_scores import rlog
from selectorlab.np_oracle import (
    LikelihoodOracle,
    SelectiveBenchmarkSpec,
    VerifyConfig,
    as_mixture,
    Gaussian,
    selective_benchmark,
    verify_np_beta,
    verify_theorem,
)
from selectorlab.pipeline import Scorer, ScoringConfig


@contextmanager
def budget(seconds):
    start = time.perf_counter()
    yield
    elapsed = time.perf_counter() - start
    assert elapsed < seconds, f"took {elapsed:.2f}s, budget {seconds}s"


def all_thresholds_aurc(scores, correct):
    """Average selective risk over every distinct non-empty acceptance set, in exact arithmetic."""
    levels = sorted(set(scores), reverse=True)
    total = Fraction(0)
    for hi, lo in zip(levels, levels[1:] + [levels[-1] - 1]):
        sel = select(scores, correct, (hi + lo) / 2)
        accepted = [i for i, s in enumerate(scores) if s > (hi + lo) / 2]
        errors = sum(1 for i in accepted if not correct[i])
        assert sel.coverage == len(accepted) / len(scores)
        total += Fraction(errors, len(accepted))
    return total / len(levels)


@pytest.mark.criterion(1, "AURC equals brute-force all-thresholds average")
def test_aurc_oracle_equivalence():
    rng = np.random.default_rng(1)
    with budget(1.0):
        for bits in itertools.product([0, 1], repeat=8):
            correct = np.array(bits, dtype=bool)
            scores = rng.permutation(8).astype(np.float64)
            exact = all_thresholds_aurc(scores.tolist(), correct.tolist())
            # the float result is the exact rational rounded once
            assert aurc(risk_coverage_curve(scores, correct)) == float(exact)


@pytest.mark.criterion(2, "monotone transforms leave curve, AURC and NAURC bit-identical")
def test_monotone_invariance():
    transforms = (
        lambda x: 3.0 * x + 1.0,
        lambda x: np.exp(x / 4.0),
        lambda x: x**3,
        lambda x: np.arctan(x / 8.0),
        lambda x: x + x**3 / 100.0,
    )
    rng = np.random.default_rng(2)
    with budget(5.0):
        for _ in range(100):
            s = rng.normal(size=1000)
            c = rng.random(1000) < 0.75
            base = evaluate(s, c)
            order = np.argsort(s)
            for f in transforms:
                fs = f(s)
                assert (np.diff(fs[order]) > 0).all()
                r = evaluate(fs, c)
                assert r.curve.risk.tobytes() == base.curve.risk.tobytes()
                assert r.curve.coverage.tobytes() == base.curve.coverage.tobytes()
                assert (r.aurc, r.naurc) == (base.aurc, base.naurc)


@pytest.mark.criterion(3, "delta-MDS with true parameters is an affine map of the log-LR")
def test_delta_mds_identity():
    with budget(5.0):
        r = verify_theorem("T2_delta_mds", VerifyConfig(t2_n_fit=2_000))
    assert r["stats"]["identity_max_abs_error"] <= 1e-9
    assert r["stats"]["rho_true_parameters"] == 1.0


@pytest.mark.criterion(4, "delta-MDS fitted on 10^4 samples ranks like the log-LR")
def test_delta_mds_estimated():
    with budget(10.0):
        r = verify_theorem("T2_delta_mds")
    assert r["stats"]["n_fit"] == 10_000
    assert r["stats"]["rho_estimated"] >= 0.99
    assert r["stats"]["rho_estimated"] == pytest.approx(0.9992754632754633, abs=1e-9)


@pytest.mark.criterion(5, "delta-KNN rank agreement grows with training size")
def test_delta_knn_consistency():
    with budget(60.0):
        r = verify_theorem("T3_delta_knn")
    rhos = r["stats"]["spearman_rho"]
    assert r["stats"]["sizes"] == [1_000, 10_000, 50_000]
    assert r["stats"]["k"] == [32, 100, 224]
    assert all(b >= a - 0.005 for a, b in zip(rhos, rhos[1:]))
    assert rhos[-1] >= 0.95


@pytest.mark.criterion(6, "exact LR score beats random competitors on type-II error")
def test_likelihood_ratio_beta():
    with budget(10.0):
        rng = np.random.default_rng(6)
        n = 20_000
        h0 = rng.random(n) < 0.5
        z = np.where(h0, rng.normal(0.0, 1.0, n), rng.normal(4.0, 1.0, n))
        oracle = LikelihoodOracle(as_mixture(Gaussian([0.0], [[1.0]])), as_mixture(Gaussian([4.0], [[1.0]])))
        competitors = [np.random.default_rng(600 + i).random(n) for i in range(20)]
        r = verify_np_beta(oracle.log_lr(z[:, None]), h0, [0.01, 0.05, 0.1], competitors, tolerance=0.1)
    assert r["passed"] and r["min_margin"] >= 0.1
    assert len(r["per_alpha"]) == 3


@pytest.mark.criterion(7, "msp and rlog order calibrated binary samples by posterior odds")
def test_binary_exactness():
    with budget(5.0):
        reports = [verify_theorem(t) for t in ("T1_msp", "T1_rlog")]
    for r in reports:
        assert r["stats"]["kendall_tau"] == 1.0, r


@pytest.mark.criterion(8, "linear combination of log-LRs equals the tilted log-ratio")
def test_tilted_identity():
    with budget(5.0):
        r = verify_theorem("L2_combination")
    assert len(r["stats"]["lambdas"]) == 5
    assert r["stats"]["kendall_tau"] == [1.0] * 5


@pytest.mark.criterion(9, "rlog ordering does not depend on temperature")
def test_rlog_temperature_invariance():
    rng = np.random.default_rng(9)
    with budget(5.0):
        for _ in range(50):
            logits = rng.normal(scale=3.0, size=(200, 10))
            orders = [np.argsort(-rlog(logits / t).values, kind="stable") for t in (0.5, 1.0, 2.0, 10.0)]
            for o in orders[1:]:
                assert np.array_equal(o, orders[0])


@pytest.mark.criterion(10, "feature/logit combinations match or beat both parents")
def test_end_to_end_superiority():
    with budget(30.0):
        spec = SelectiveBenchmarkSpec()
        train, calib, test = (selective_benchmark(spec, 6000, seed)[0] for seed in (1, 2, 3))
        scorer = Scorer(train, ScoringConfig(), calib=calib)
        naurc = {name: evaluate(scorer.score(name, test), test.correct).naurc
                 for name in ("rlog", "delta-mds", "delta-knn", "delta-mds-rlog", "delta-knn-rlog")}
        lam = scorer.lambda_for("delta-mds-rlog")
        assert lam == (fit_lambda_balance(scorer.score("delta-mds", calib), scorer.score("rlog", calib)),
                       "balanced-on-calibration")
    for combo, feature in (("delta-mds-rlog", "delta-mds"), ("delta-knn-rlog", "delta-knn")):
        assert naurc[combo] <= naurc[feature] + 0.01, naurc
        assert naurc[combo] <= naurc["rlog"] + 0.01, naurc


def _tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode() + b"\0" + p.read_bytes())
    return h.hexdigest()


def _run_all_commands(root):
    d = root / "data"
    assert main(["synth", "benchmark", "--n", "400", "--seed", "5", "--out", str(d)]) == 0
    assert main(["synth", "class-gaussians", "--n", "300", "--seed", "5", "--out", str(root / "cg")]) == 0
    m = ["--manifest", str(d / "manifest.json"), "--train", "train", "--test", "test", "--calib", "calib"]
    assert main(["score", *m, "--scores", "msp,rlog,delta-mds,delta-knn,delta-knn-rlog,sirc",
                 "--out", str(root / "s")]) == 0
    assert main(["eval", "--bundle", str(root / "s" / "scores.scb"), "--plot", "--out", str(root / "e")]) == 0
    assert main(["sweep", *m, "--scores", "delta-knn,delta-mds-rlog", "--k-grid", "5,10",
                 "--lambda-grid", "0.5,2", "--fractions", "0.5,1.0", "--out", str(root / "w")]) == 0
    assert main(["verify", "T1_msp", "T1_rlog", "L2_combination", "--out", str(root / "v.json")]) == 0
    assert main(["report", str(root / "e"), "--out", str(root / "r")]) == 0


@pytest.mark.criterion(11, "binary formats round-trip and CLI output is reproducible")
def test_round_trip_and_determinism(tmp_path):
    rng = np.random.default_rng(11)
    with budget(5.0):
        ds = Dataset(rng.normal(size=(50, 6)).astype(np.float32), rng.normal(size=(50, 3)).astype(np.float32),
                     rng.integers(0, 3, 50))
        raw = dataset_to_bytes(ds)
        assert dataset_to_bytes(dataset_from_bytes(raw)) == raw
        save_dataset(ds, tmp_path / "d.scf")
        back = load_dataset(tmp_path / "d.scf")
        assert back.features.tobytes() == ds.features.tobytes() and back.logits.tobytes() == ds.logits.tobytes()
        b = ScoreBundle(metadata={"seed": 1})
        b.add("x", rng.normal(size=50))
        assert ScoreBundle.from_bytes(b.to_bytes()).to_bytes() == b.to_bytes()

        _run_all_commands(tmp_path / "a")
        _run_all_commands(tmp_path / "b")
    assert _tree_digest(tmp_path / "a") == _tree_digest(tmp_path / "b")
