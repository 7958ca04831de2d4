"""``selectorlab`` command line: score, eval, sweep, synth, verify, report.

Exit status is 0 on success, 2 on invalid input (including scores that are
not applicable to the data) and 3 when a theorem verification fails.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from ._io import atomic_write_text, write_json
from .bundle import ScoreBundle, score_csv
from .combiner import COMBINATIONS, PROFILE_NAMES, fit_lambda_balance
from .data import Dataset, Manifest, load_dataset, save_dataset, subsample_labeled
from .errors import SelectorLabError, ValidationError
from .evaluation import (
    RiskCoverageReport,
    curve_to_csv,
    curves_to_svg,
    evaluate,
    grouped_mean,
    ranking_table,
)
from .np_oracle import (
    THEOREMS,
    SelectiveBenchmarkSpec,
    VerifyConfig,
    calibrated_binary_spec,
    class_gaussian_spec,
    gaussian_vs_mixture_spec,
    generate,
    selective_benchmark,
    verify_theorem,
)
from .pipeline import SCORE_NAMES, ArtifactCache, Scorer, ScoringConfig, parse_score_list

EXIT_OK, EXIT_INVALID, EXIT_VERIFY_FAILED = 0, 2, 3
CORRECT_COLUMN = "_correct"

log = logging.getLogger("selectorlab")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# Shared helpers


def _load(args, name: str | None, what: str) -> Dataset | None:
    if name is None:
        return None
    if args.manifest:
        return Manifest.load(args.manifest).resolve(name)
    path = Path(name)
    if not path.exists():
        raise ValidationError(f"{what} dataset {path} does not exist")
    return load_dataset(path)


def _normalize_flags(text: str) -> tuple[bool, bool]:
    parts = {p.strip() for p in text.split(",") if p.strip()}
    if parts == {"none"}:
        return False, False
    unknown = parts - {"knn", "mds"}
    if unknown:
        raise ValidationError(f"--normalize takes knn, mds or none; got {', '.join(sorted(unknown))}")
    return "knn" in parts, "mds" in parts


def _scoring_config(args) -> ScoringConfig:
    knn, mds = _normalize_flags(args.normalize)
    if args.k is not None and args.k < 1:
        raise ValidationError(f"--k must be >= 1, got {args.k}")
    return ScoringConfig(
        k=args.k,
        lam=args.lam,
        temperature=args.temperature,
        normalize_knn=knn,
        normalize_mds=mds,
        shrinkage=args.shrinkage,
        averaged=not args.plain_knn,
        profile=args.profile,
    )


def _train_split(args) -> Dataset:
    train = _load(args, args.train, "training")
    if args.fraction is not None:
        train = subsample_labeled(train, args.fraction, args.seed)
    return train


def _versions() -> dict:
    return {"selectorlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def _parse_grid(text: str | None, kind) -> list:
    if not text:
        return []
    try:
        return [kind(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"cannot parse grid {text!r}") from None


def _read_group_map(path: str, n: int) -> tuple[np.ndarray, dict[str, str]]:
    """CSV ``index,subset,category`` -> per-sample subset names and subset->category."""
    subsets = np.empty(n, dtype=object)
    categories: dict[str, str] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"index", "subset", "category"} <= set(reader.fieldnames):
            raise ValidationError(f"{path}: group map needs columns index,subset,category")
        for row_no, row in enumerate(reader):
            try:
                i = int(row["index"])
            except ValueError:
                raise ValidationError(f"{path}: row {row_no} has a non-integer index") from None
            if not 0 <= i < n:
                raise ValidationError(f"{path}: row {row_no} index {i} outside [0, {n})")
            subsets[i] = row["subset"]
            prev = categories.setdefault(row["subset"], row["category"])
            if prev != row["category"]:
                raise ValidationError(f"{path}: subset {row['subset']!r} assigned to two categories")
    missing = [i for i in range(n) if subsets[i] is None]
    if missing:
        raise ValidationError(f"{path}: sample {missing[0]} has no subset")
    return subsets, categories


# --------------------------------------------------------------------------
# Commands


def cmd_score(args) -> int:
    names = parse_score_list(args.scores)
    train = _train_split(args)
    test = _load(args, args.test, "test")
    calib = _load(args, args.calib, "calibration")
    out = Path(args.out)
    cache = ArtifactCache(None if args.no_cache else out / "artifacts")
    scorer = Scorer(train, _scoring_config(args), calib=calib, cache=cache)
    bundle = ScoreBundle()
    params = {}
    for name in names:
        sv = scorer.score(name, test)
        bundle.add(name, sv)
        params[name] = sv.params
        atomic_write_text(out / f"{name}.csv", score_csv(sv))
    bundle.add(CORRECT_COLUMN, test.correct.astype(np.float64))
    bundle.metadata = {
        "command": "score",
        "scores": names,
        "params": params,
        "config": scorer.config.to_dict(),
        "seed": args.seed,
        "fraction": args.fraction,
        "train": {"name": train.name, "n": train.n},
        "test": {"name": test.name, "n": test.n},
        "calib": None if calib is None else {"name": calib.name, "n": calib.n},
        "versions": _versions(),
    }
    bundle.save(out / "scores.scb")
    print(f"wrote {len(names)} score column(s) for {test.n} samples to {out / 'scores.scb'}")
    return EXIT_OK


def _grouped_rows(reports_by_subset: dict[str, dict[str, RiskCoverageReport]], categories) -> list[dict]:
    rows = []
    for method, by_subset in reports_by_subset.items():
        aurcs = {s: r.aurc for s, r in by_subset.items()}
        naurcs = {s: r.naurc for s, r in by_subset.items()}
        defined = all(v is not None for v in naurcs.values())
        rows.append({
            "method": method,
            "aurc": grouped_mean(aurcs, categories),
            "naurc": grouped_mean(naurcs, categories) if defined else None,
        })
    return rows


def cmd_eval(args) -> int:
    bundle = ScoreBundle.load(args.bundle)
    if args.test:
        correct = _load(args, args.test, "test").correct
    elif CORRECT_COLUMN in bundle.columns:
        correct = bundle.columns[CORRECT_COLUMN] > 0.5
    else:
        raise ValidationError("bundle has no correctness column; pass --test")
    if correct.shape[0] != bundle.n:
        raise ValidationError(f"correctness has {correct.shape[0]} rows, bundle has {bundle.n}")
    names = parse_score_list(args.scores) if args.scores else [c for c in bundle.columns if c != CORRECT_COLUMN]
    missing = [n for n in names if n not in bundle.columns]
    if missing:
        raise ValidationError(f"bundle lacks score column(s) {', '.join(missing)}")

    out = Path(args.out)
    reports = []
    summary = {}
    for name in names:
        rep = evaluate(bundle.columns[name], correct)
        reports.append((name, rep))
        summary[name] = rep.to_dict(name)
        write_json(out / f"report-{name}.json", summary[name])
        atomic_write_text(out / f"curve-{name}.csv", curve_to_csv(rep.curve))
    atomic_write_text(out / "ranking.csv", ranking_table(reports))
    if args.plot:
        atomic_write_text(out / "risk_coverage.svg", curves_to_svg({n: r.curve for n, r in reports}))

    if args.group_by:
        subsets, categories = _read_group_map(args.group_by, bundle.n)
        per = {}
        for name in names:
            per[name] = {}
            for s in sorted(set(subsets.tolist())):
                rows = subsets == s
                per[name][s] = evaluate(bundle.columns[name][rows], correct[rows])
        grouped = _grouped_rows(per, categories)
        buf = io.StringIO()
        buf.write("method,aurc,aurc_x100,naurc\n")
        for row in grouped:
            nv = "undefined" if row["naurc"] is None else repr(row["naurc"])
            buf.write(f"{row['method']},{row['aurc']!r},{row['aurc'] * 100.0!r},{nv}\n")
        atomic_write_text(out / "grouped.csv", buf.getvalue())
        for row in grouped:
            summary[row["method"]]["grouped"] = {"aurc": row["aurc"], "naurc": row["naurc"]}
    write_json(out / "summary.json", {"reports": summary, "n": bundle.n, "source": bundle.metadata})
    sys.stdout.write(ranking_table(reports))
    return EXIT_OK


def _sweep_cell(scorer: Scorer, name: str, test: Dataset) -> tuple[float | None, float | None, str]:
    try:
        rep = evaluate(scorer.score(name, test), test.correct)
    except SelectorLabError as exc:
        return None, None, f"not applicable: {exc}"
    return rep.aurc, rep.naurc, "ok"


def cmd_sweep(args) -> int:
    names = parse_score_list(args.scores)
    train = _load(args, args.train, "training")
    test = _load(args, args.test, "test")
    calib = _load(args, args.calib, "calibration")
    base = _scoring_config(args)
    k_grid = _parse_grid(args.k_grid, int)
    lam_grid = _parse_grid(args.lambda_grid, float)
    fractions = _parse_grid(args.fractions, float)
    if not (k_grid or lam_grid or fractions):
        raise ValidationError("sweep needs at least one of --k-grid, --lambda-grid, --fractions")
    if any(k < 1 for k in k_grid):
        raise ValidationError(f"k grid values must be >= 1, got {k_grid}")
    if any(not 0 < f <= 1 for f in fractions):
        raise ValidationError(f"fractions must lie in (0, 1], got {fractions}")
    if any(not math.isfinite(v) for v in lam_grid):
        raise ValidationError("lambda grid values must be finite")

    rows: list[dict] = []

    def run(parameter, value, name, config, tr):
        scorer = Scorer(tr, config, calib=calib)
        if parameter == "k":
            # an out-of-range k is a grid error, not an inapplicable cell
            rep = evaluate(scorer.score(name, test), test.correct)
            aurc_v, naurc_v, status = rep.aurc, rep.naurc, "ok"
        else:
            aurc_v, naurc_v, status = _sweep_cell(scorer, name, test)
        rows.append({"parameter": parameter, "value": value, "method": name,
                     "aurc": aurc_v, "naurc": naurc_v, "status": status})

    for k in k_grid:
        for name in names:
            run("k", str(k), name, ScoringConfig(**{**base.__dict__, "k": k}), train)
    combos = [n for n in names if n in COMBINATIONS]
    if lam_grid and not combos:
        raise ValidationError("--lambda-grid needs at least one combination score")
    for name in combos:
        for lam in lam_grid:
            run("lambda", repr(lam), name, ScoringConfig(**{**base.__dict__, "lam": lam}), train)
        if lam_grid and calib is not None:
            probe = Scorer(train, base, calib=calib)
            first, second = COMBINATIONS[name]
            auto = fit_lambda_balance(probe.score(first, calib), probe.score(second, calib))
            run("lambda", f"auto={auto!r}", name, ScoringConfig(**{**base.__dict__, "lam": auto}), train)
    for f in fractions:
        tr = subsample_labeled(train, f, args.seed) if f < 1 else train
        for name in names:
            run("fraction", repr(f), name, base, tr)

    # mark the best (lowest NAURC) cell per (parameter, method)
    best: dict[tuple[str, str], int] = {}
    for i, r in enumerate(rows):
        if r["naurc"] is None:
            continue
        key = (r["parameter"], r["method"])
        if key not in best or r["naurc"] < rows[best[key]]["naurc"]:
            best[key] = i
    buf = io.StringIO()
    buf.write("parameter,value,method,aurc,naurc,status,best\n")
    for i, r in enumerate(rows):
        a = "" if r["aurc"] is None else repr(r["aurc"])
        nv = "" if r["naurc"] is None else repr(r["naurc"])
        status = r["status"].replace(",", ";").replace("\n", " ")
        buf.write(f"{r['parameter']},{r['value']},{r['method']},{a},{nv},{status},"
                  f"{int(best.get((r['parameter'], r['method'])) == i)}\n")
    out = Path(args.out)
    atomic_write_text(out / "sweep.csv", buf.getvalue())

    if fractions:
        # method x fraction table of NAURC, "n/a" where the score cannot be fitted
        table = io.StringIO()
        table.write("method," + ",".join(repr(f) for f in fractions) + "\n")
        for name in names:
            cells = []
            for f in fractions:
                r = next(r for r in rows if r["parameter"] == "fraction" and r["value"] == repr(f)
                         and r["method"] == name)
                cells.append("n/a" if r["naurc"] is None else repr(r["naurc"]))
            table.write(name + "," + ",".join(cells) + "\n")
        atomic_write_text(out / "fraction_table.csv", table.getvalue())
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_synth(args) -> int:
    out = Path(args.out)
    fmt = args.format
    ext = ".csv" if fmt == "csv" else ".scf"
    if args.kind == "benchmark":
        spec = SelectiveBenchmarkSpec()
        entries = []
        for i, split in enumerate(("train", "calib", "test")):
            ds, _ = selective_benchmark(spec, args.n, args.seed * 3 + i, name=split)
            save_dataset(ds, out / f"{split}{ext}", fmt)
            entries.append({"name": split, "path": f"{split}{ext}", "format": fmt})
        write_json(out / "manifest.json", {"datasets": entries, "mixes": []})
    else:
        makers = {
            "calibrated-binary": lambda: calibrated_binary_spec(args.n, args.seed),
            "class-gaussians": lambda: class_gaussian_spec(8, 4, args.n, args.seed),
            "gaussian-vs-mixture": lambda: gaussian_vs_mixture_spec(args.n, args.seed),
        }
        sample = generate(makers[args.kind]())
        save_dataset(sample.dataset, out / f"data{ext}", fmt)
        buf = io.StringIO()
        buf.write("index,h0,log_lr\n")
        for i, (h, lr) in enumerate(zip(sample.h0.tolist(), sample.oracle.log_lr(sample.features).tolist())):
            buf.write(f"{i},{int(h)},{lr!r}\n")
        atomic_write_text(out / "oracle.csv", buf.getvalue())
    print(f"wrote {args.kind} data to {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    ids = list(THEOREMS) if args.all else args.theorems
    if not ids:
        raise ValidationError("name theorem ids or pass --all")
    unknown = [t for t in ids if t not in THEOREMS]
    if unknown:
        raise ValidationError(f"unknown theorem id(s) {', '.join(unknown)}; known: {', '.join(THEOREMS)}")
    config = VerifyConfig(seed=args.seed)
    reports = [verify_theorem(t, config) for t in ids]
    for r in reports:
        print(f"{'PASS' if r['passed'] else 'FAIL'} {r['theorem']}")
    if args.out:
        write_json(args.out, {"theorems": reports, "versions": _versions()})
    return EXIT_OK if all(r["passed"] for r in reports) else EXIT_VERIFY_FAILED


def cmd_report(args) -> int:
    """Merge several eval summaries into one NAURC table with per-run columns."""
    runs = []
    for path in args.inputs:
        p = Path(path)
        p = p / "summary.json" if p.is_dir() else p
        try:
            summary = json.loads(p.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read eval summary {p}: {exc}") from None
        runs.append((p.parent.name, summary["reports"]))
    names = [n for n, _ in runs]
    if len(set(names)) != len(names):
        raise ValidationError("eval summaries must come from distinctly named directories")
    categories: dict[str, str] = {}
    if args.group_by:
        with open(args.group_by, newline="") as fh:
            for row in csv.DictReader(fh):
                categories[row["subset"]] = row["category"]
    methods = sorted({m for _, reps in runs for m in reps})
    rows = []
    for m in methods:
        vals = {run: reps[m]["naurc"] for run, reps in runs if m in reps}
        defined = len(vals) == len(runs) and all(v is not None for v in vals.values())
        rows.append((m, vals, grouped_mean(vals, categories) if defined else None))
    rows.sort(key=lambda r: (r[2] is None, r[2] if r[2] is not None else 0.0, r[0]))
    buf = io.StringIO()
    buf.write("method," + ",".join(names) + ",mean\n")
    for m, vals, mean in rows:
        cells = ["" if vals.get(n) is None else repr(vals[n]) for n in names]
        buf.write(m + "," + ",".join(cells) + "," + ("undefined" if mean is None else repr(mean)) + "\n")
    atomic_write_text(Path(args.out) / "report.csv", buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser


def _add_scoring_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--train", required=True, help="training (fitting) dataset path or manifest name")
    p.add_argument("--test", required=True, help="evaluation dataset path or manifest name")
    p.add_argument("--calib", help="calibration split used to balance lambda")
    p.add_argument("--manifest", help="resolve dataset names through this manifest")
    p.add_argument("--k", type=int, help="neighbour count for knn / delta-knn")
    p.add_argument("--lambda", dest="lam", type=float, help="weight of the second score in a combination")
    p.add_argument("--temperature", type=float, default=1.0, help="energy temperature")
    p.add_argument("--normalize", default="knn", help="feature families to L2-normalize: knn, mds, knn,mds or none")
    p.add_argument("--plain-knn", action="store_true", help="use only the k-th distance in delta-knn")
    p.add_argument("--shrinkage", type=float, default=1e-6, help="relative covariance shrinkage")
    p.add_argument("--profile", choices=PROFILE_NAMES, help="hyperparameter defaults for a model family")
    p.add_argument("--fraction", type=float, help="keep this class-stratified fraction of the training set")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="selectorlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"selectorlab {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("score", help="compute score columns into a bundle")
    _add_scoring_flags(p)
    p.add_argument("--scores", required=True, help=f"comma list from: {', '.join(SCORE_NAMES)}")
    p.add_argument("--no-cache", action="store_true", help="do not write fitted artifacts")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="risk-coverage reports for a score bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--test", help="dataset supplying correctness (defaults to the bundle's own column)")
    p.add_argument("--manifest")
    p.add_argument("--scores", help="subset of bundle columns to evaluate")
    p.add_argument("--group-by", help="CSV index,subset,category for grouped means")
    p.add_argument("--plot", action="store_true", help="also write an SVG risk-coverage plot")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="NAURC over k, lambda or labeled-fraction grids")
    _add_scoring_flags(p)
    p.add_argument("--scores", required=True)
    p.add_argument("--k-grid", help="comma list of k values")
    p.add_argument("--lambda-grid", help="comma list of lambda values")
    p.add_argument("--fractions", help="comma list of labeled fractions in (0, 1]")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="write a seeded synthetic dataset")
    p.add_argument("kind", choices=("benchmark", "calibrated-binary", "class-gaussians", "gaussian-vs-mixture"))
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("binary", "csv"), default="binary")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("verify", help="check optimality properties on synthetic data")
    p.add_argument("theorems", nargs="*", help=f"ids from: {', '.join(THEOREMS)}")
    p.add_argument("--all", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="JSON report path")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="merge eval summaries into one table")
    p.add_argument("inputs", nargs="+", help="eval output directories or summary.json files")
    p.add_argument("--group-by", help="CSV subset,category mapping run names to categories")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (SelectorLabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
