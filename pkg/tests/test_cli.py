import json

import numpy as np
import pytest

from selectorlab.bundle import ScoreBundle, score_csv
from selectorlab.cli import main
from selectorlab.data import Dataset, load_dataset, save_dataset
from selectorlab.errors import FormatError
from selectorlab.evaluation import evaluate
from selectorlab.pipeline import Scorer, ScoringConfig


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("bench")
    assert main(["synth", "benchmark", "--n", "900", "--seed", "2", "--out", str(d)]) == 0
    return d


def _score(data_dir, out, *extra):
    return main([
        "score", "--manifest", str(data_dir / "manifest.json"), "--train", "train", "--test", "test",
        "--out", str(out), *extra,
    ])


def test_synth_writes_manifest(data_dir):
    manifest = json.loads((data_dir / "manifest.json").read_text())
    assert [d["name"] for d in manifest["datasets"]] == ["train", "calib", "test"]
    assert load_dataset(data_dir / "train.scf").n == 900


def test_score_two_columns(data_dir, tmp_path):
    assert _score(data_dir, tmp_path, "--scores", "msp,rlog") == 0
    b = ScoreBundle.load(tmp_path / "scores.scb")
    assert [c for c in b.columns if not c.startswith("_")] == ["msp", "rlog"]
    assert (tmp_path / "msp.csv").read_text().startswith("index,score\n0,")


def test_score_records_k_and_profile_default(data_dir, tmp_path):
    assert _score(data_dir, tmp_path / "a", "--scores", "delta-knn", "--k", "25") == 0
    meta = ScoreBundle.load(tmp_path / "a" / "scores.scb").metadata
    assert meta["params"]["delta-knn"]["k"] == 25
    assert _score(data_dir, tmp_path / "b", "--scores", "delta-knn", "--profile", "vision-clip") == 0
    assert ScoreBundle.load(tmp_path / "b" / "scores.scb").metadata["params"]["delta-knn"]["k"] == 25
    assert any((tmp_path / "b" / "artifacts").iterdir())


def test_score_all_correct_train_fails_with_advice(tmp_path, capsys):
    rng = np.random.default_rng(0)
    ds = Dataset(rng.normal(size=(20, 3)), np.eye(2)[np.arange(20) % 2] * 3, np.arange(20) % 2)
    save_dataset(ds, tmp_path / "d.scf")
    code = main(["score", "--train", str(tmp_path / "d.scf"), "--test", str(tmp_path / "d.scf"),
                 "--scores", "delta-mds", "--out", str(tmp_path / "o")])
    assert code == 2
    assert "fall back" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["score", "--train", "missing.scf", "--test", "missing.scf", "--scores", "msp", "--out", "o"],
    ["verify", "T9"],
    ["eval", "--bundle", "nope.scb", "--out", "o"],
    ["frobnicate"],
])
def test_invalid_input_exit_code(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2


def test_score_then_eval_matches_fused_pipeline(data_dir, tmp_path):
    names = "rlog,delta-mds,delta-knn-rlog"
    assert _score(data_dir, tmp_path / "s", "--scores", names, "--calib", "calib") == 0
    assert main(["eval", "--bundle", str(tmp_path / "s" / "scores.scb"), "--out", str(tmp_path / "e")]) == 0
    train, calib, test = (load_dataset(data_dir / f"{n}.scf") for n in ("train", "calib", "test"))
    scorer = Scorer(train, ScoringConfig(), calib=calib)
    for name in names.split(","):
        fused = evaluate(scorer.score(name, test), test.correct).to_dict(name)
        written = json.loads((tmp_path / "e" / f"report-{name}.json").read_text())
        assert written == json.loads(json.dumps(fused))


def test_eval_worked_example(tmp_path):
    b = ScoreBundle()
    b.add("s", [3.0, 2.0, 1.0])
    b.add("_correct", [1.0, 1.0, 0.0])
    b.save(tmp_path / "b.scb")
    assert main(["eval", "--bundle", str(tmp_path / "b.scb"), "--out", str(tmp_path / "e")]) == 0
    rep = json.loads((tmp_path / "e" / "report-s.json").read_text())
    assert rep["aurc"] == pytest.approx(1 / 9) and rep["naurc"] == 0.0


def test_eval_monotone_transforms_give_identical_rows(tmp_path):
    rng = np.random.default_rng(0)
    s = rng.normal(size=200)
    b = ScoreBundle()
    b.add("raw", s)
    b.add("exp", np.exp(s))
    b.add("_correct", (rng.random(200) < 0.7).astype(float))
    b.save(tmp_path / "b.scb")
    assert main(["eval", "--bundle", str(tmp_path / "b.scb"), "--out", str(tmp_path / "e")]) == 0
    rows = (tmp_path / "e" / "ranking.csv").read_text().splitlines()[1:]
    assert rows[0].split(",")[2:] == rows[1].split(",")[2:]


def test_eval_undefined_naurc(tmp_path):
    b = ScoreBundle()
    b.add("s", [1.0, 2.0])
    b.add("_correct", [1.0, 1.0])
    b.save(tmp_path / "b.scb")
    assert main(["eval", "--bundle", str(tmp_path / "b.scb"), "--out", str(tmp_path / "e")]) == 0
    assert ",undefined," in (tmp_path / "e" / "ranking.csv").read_text()


def test_eval_group_by(tmp_path):
    b = ScoreBundle()
    b.add("s", [4.0, 3.0, 2.0, 1.0, 4.0, 3.0, 2.0, 1.0])
    b.add("_correct", [1, 0, 1, 0, 1, 1, 0, 0])
    b.save(tmp_path / "b.scb")
    (tmp_path / "g.csv").write_text(
        "index,subset,category\n" + "".join(f"{i},{'fog' if i < 4 else 'blur'},{'w' if i < 4 else 'c'}\n"
                                            for i in range(8))
    )
    assert main(["eval", "--bundle", str(tmp_path / "b.scb"), "--group-by", str(tmp_path / "g.csv"),
                 "--out", str(tmp_path / "e")]) == 0
    fog = evaluate([4.0, 3.0, 2.0, 1.0], [1, 0, 1, 0])
    blur = evaluate([4.0, 3.0, 2.0, 1.0], [1, 1, 0, 0])
    line = (tmp_path / "e" / "grouped.csv").read_text().splitlines()[1]
    assert float(line.split(",")[1]) == pytest.approx((fog.aurc + blur.aurc) / 2)


def test_sweep_k_grid_shape(data_dir, tmp_path):
    assert main(["sweep", "--manifest", str(data_dir / "manifest.json"), "--train", "train", "--test", "test",
                 "--scores", "delta-knn", "--k-grid", "1,25,50", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "sweep.csv").read_text().splitlines()[1:]
    assert len(rows) == 3 and sum(r.endswith(",1") for r in rows) == 1


def test_sweep_auto_lambda_matches_grid_cell(data_dir, tmp_path):
    train, calib = (load_dataset(data_dir / f"{n}.scf") for n in ("train", "calib"))
    s = Scorer(train, ScoringConfig(), calib=calib)
    from selectorlab.combiner import fit_lambda_balance

    auto = fit_lambda_balance(s.score("delta-mds", calib), s.score("rlog", calib))
    assert main(["sweep", "--manifest", str(data_dir / "manifest.json"), "--train", "train", "--test", "test",
                 "--calib", "calib", "--scores", "delta-mds-rlog", "--lambda-grid", f"1.0,{auto!r}",
                 "--out", str(tmp_path)]) == 0
    rows = [r.split(",") for r in (tmp_path / "sweep.csv").read_text().splitlines()[1:]]
    grid_cell = next(r for r in rows if r[1] == repr(auto))
    auto_cell = next(r for r in rows if r[1].startswith("auto="))
    assert grid_cell[3:5] == auto_cell[3:5]


def test_sweep_fractions_table(data_dir, tmp_path):
    assert main(["sweep", "--manifest", str(data_dir / "manifest.json"), "--train", "train", "--test", "test",
                 "--scores", "rlog,delta-mds", "--fractions", "0.005,0.01,0.1,0.5,1.0", "--out", str(tmp_path)]) == 0
    table = (tmp_path / "fraction_table.csv").read_text().splitlines()
    assert table[0] == "method,0.005,0.01,0.1,0.5,1.0"
    assert table[2].startswith("delta-mds,n/a,")


def test_sweep_rejects_out_of_range(data_dir, tmp_path):
    base = ["sweep", "--manifest", str(data_dir / "manifest.json"), "--train", "train", "--test", "test",
            "--scores", "delta-knn", "--out", str(tmp_path)]
    assert main(base + ["--k-grid", "0,5"]) == 2
    assert main(base + ["--k-grid", "100000"]) == 2
    assert main(base + ["--fractions", "1.5"]) == 2


def test_verify_all_has_six_entries(tmp_path):
    assert main(["verify", "--all", "--out", str(tmp_path / "v.json")]) == 0
    report = json.loads((tmp_path / "v.json").read_text())
    assert len(report["theorems"]) == 6
    t2 = next(t for t in report["theorems"] if t["theorem"] == "T2_delta_mds")
    assert t2["stats"]["rho_true_parameters"] == 1.0


def test_report_merges_runs(tmp_path):
    for run, shift in (("a", 0.0), ("b", 1.0)):
        b = ScoreBundle()
        b.add("s", [3.0, 2.0 + shift, 1.0])
        b.add("_correct", [1.0, 0.0, 1.0])
        b.save(tmp_path / f"{run}.scb")
        assert main(["eval", "--bundle", str(tmp_path / f"{run}.scb"), "--out", str(tmp_path / run)]) == 0
    assert main(["report", str(tmp_path / "a"), str(tmp_path / "b"), "--out", str(tmp_path / "r")]) == 0
    lines = (tmp_path / "r" / "report.csv").read_text().splitlines()
    assert lines[0] == "method,a,b,mean"


def test_bundle_format(tmp_path):
    b = ScoreBundle(metadata={"x": 1})
    b.add("msp", [0.5, 0.25])
    raw = b.to_bytes()
    assert raw[:4] == b"SCB1"
    back = ScoreBundle.from_bytes(raw)
    assert back.metadata == {"x": 1} and back.columns["msp"].tolist() == [0.5, 0.25]
    with pytest.raises(FormatError):
        ScoreBundle.from_bytes(raw[:-1])
    assert score_csv([1.5]) == "index,score\n0,1.5\n"


def test_verify_failure_exits_three(monkeypatch, tmp_path, capsys):
    import selectorlab.cli as cli

    monkeypatch.setattr(cli, "verify_theorem", lambda tid, config=None: {
        "theorem": tid, "seed": 0, "passed": False, "stats": {}, "criteria": {}})
    assert main(["verify", "T1_msp", "--out", str(tmp_path / "v.json")]) == 3
    assert "FAIL" in capsys.readouterr().out
