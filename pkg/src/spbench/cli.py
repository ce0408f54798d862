"""Command-line entry point: ``spbench <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import bench, corpus, metrics, stats

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("spbench")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def read_config_file(path: str | Path) -> dict:
    """JSON object, or ``key = value`` lines (``#`` comments, comma lists)."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = (p.strip() for p in line.split("=", 1))
            data[key] = _coerce(key, value)
    if not isinstance(data, dict):
        raise UsageError(f"{path}: config must be an object")
    return data


def _coerce(key: str, value: str):
    if key in ("methods", "seeds"):
        items = _csv_list(value)
        return [int(v) for v in items] if key == "seeds" else items
    low = value.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON or key=value experiment file")
    p.add_argument("--scenario", choices=[s.value for s in corpus.Scenario])
    p.add_argument("--cap-mode", choices=["none", "train-only", "global"])
    p.add_argument("--legacy-offset", action="store_true", default=None,
                   help="add 1.0 to Mean/Median (reproduces the original study's tables)")
    p.add_argument("--seed", type=int, action="append", dest="seeds")
    p.add_argument("--methods", type=_csv_list, help=f"comma list from {','.join(bench.METHODS)}")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="spbench", description="Story-point estimation benchmark harness")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="validate an issue CSV or fetch from Jira")
    p.add_argument("path", nargs="?", help="issue CSV")
    p.add_argument("--jira", metavar="URL", help="fetch from a Jira server instead")
    p.add_argument("--project", help="Jira project key (with --jira)")
    p.add_argument("--page-size", type=int, default=50)
    p.add_argument("-o", "--out", help="write the normalised CSV here")

    p = sub.add_parser("filter", help="apply the Choet or Porru filter")
    p.add_argument("path")
    p.add_argument("--kind", choices=["choet", "porru"], required=True)
    p.add_argument("-o", "--out", required=True)

    p = sub.add_parser("split", help="build a split plan and write its manifest")
    p.add_argument("path", help="target project CSV")
    p.add_argument("--source", help="source project / pool CSV")
    p.add_argument("--scenario", choices=[s.value for s in corpus.Scenario], default="within_project")
    p.add_argument("--cap-mode", choices=["none", "train-only", "global"], default="none")
    p.add_argument("-o", "--out", required=True, help="split CSV")

    p = sub.add_parser("train", help="train TF/IDF-SVM or Deep-SE on a within-project split")
    p.add_argument("path")
    p.add_argument("--methods", type=_csv_list, default=["deepse"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cap-mode", choices=["none", "train-only", "global"], default="none")
    p.add_argument("--deepse-config", help="JSON with DeepSEConfig overrides")
    p.add_argument("-o", "--out", required=True, help="model directory")

    p = sub.add_parser("evaluate", help="run a full experiment and persist results")
    _add_experiment_flags(p)
    p.add_argument("--target")
    p.add_argument("--source")
    p.add_argument("--output", help="runs directory")
    p.add_argument("--sa-runs", type=int)
    p.add_argument("--tables", choices=["csv", "markdown"], help="also emit tables into the run dir")

    p = sub.add_parser("stats", help="pairwise Wilcoxon / A12 over prediction CSVs")
    p.add_argument("predictions", nargs="+", help="prediction CSVs (first is method A of each pair)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--k", type=int, help="Bonferroni hypothesis count")
    p.add_argument("--method", choices=["auto", "exact", "normal"], default="auto")

    p = sub.add_parser("report", help="emit tables and figures for finished runs")
    p.add_argument("runs", nargs="+", help="run directories")
    p.add_argument("--style", choices=["csv", "markdown"], default="markdown")
    p.add_argument("-o", "--out", required=True)

    p = sub.add_parser("profile", help="issue-type / code-snippet / length profile")
    p.add_argument("path")
    p.add_argument("-o", "--out", required=True, help="output directory")
    return ap


# --------------------------------------------------------------------------- commands


def cmd_ingest(args) -> int:
    if args.jira:
        if not args.project:
            raise UsageError("--jira needs --project")
        from .jira import fetch_jira

        ds = fetch_jira(args.jira, args.project, args.page_size)
    elif args.path:
        ds = corpus.ingest_csv(bench.resolve_path(args.path))
    else:
        raise UsageError("give an issue CSV or --jira URL")
    for err in ds.row_errors:
        print(f"rejected {err}", file=sys.stderr)
    print(f"{ds.project_key}: {len(ds)} issues, {len(ds.row_errors)} rejected rows, "
          f"porru_ready={ds.porru_ready}")
    if args.out:
        corpus.write_csv(ds, args.out)
    return EXIT_DATA if ds.row_errors else EXIT_OK


def _load(path: str) -> corpus.IssueDataset:
    return bench.load_dataset(path)


def cmd_filter(args) -> int:
    ds = _load(args.path)
    out = corpus.apply_choet_filter(ds) if args.kind == "choet" else corpus.apply_porru_filter(ds)
    corpus.write_csv(out, args.out)
    print(f"{ds.project_key}: kept {len(out)} of {len(ds)} issues ({args.kind} filter)")
    return EXIT_OK


def cmd_split(args) -> int:
    cfg = bench.ExperimentConfig(scenario=args.scenario, target=args.path, source=args.source,
                                 cap_mode=args.cap_mode, methods=("mean",))
    target = _load(args.path)
    source = _load(args.source) if args.source else None
    sets = bench.build_sets(cfg, target, source)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    bench._write_split(Path(args.out), sets)
    cap = f", cap={sets.plan.cap_value}" if sets.plan.cap_value is not None else ""
    print(f"{sets.plan.scenario.value}: train={len(sets.train)} validation={len(sets.validation)} "
          f"test={len(sets.test)}{cap}")
    for c in sets.caveats:
        print(f"caveat: {c}")
    return EXIT_OK


def cmd_train(args) -> int:
    ds = _load(args.path)
    cfg = bench.ExperimentConfig(scenario="within_project", target=args.path, cap_mode=args.cap_mode,
                                 methods=tuple(args.methods), seeds=(args.seed,))
    sets = bench.build_sets(cfg, ds, None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    overrides = json.loads(Path(args.deepse_config).read_text()) if args.deepse_config else {}
    cfg = bench.ExperimentConfig(**{**cfg.snapshot(), "deepse": overrides})
    for method in cfg.methods:
        pred, info = bench._predict(method, args.seed, cfg, sets, out)
        pred.to_csv(out / f"{method}__seed{args.seed}_predictions.csv")
        extra = f" epochs={info['epochs']} best={info['best_epoch']}" if info else ""
        print(f"{method}: test MAE {metrics.mae(pred):.3f}{extra}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    data = read_config_file(args.config) if args.config else {}
    flags = {
        "scenario": args.scenario,
        "cap_mode": args.cap_mode,
        "legacy_offset": args.legacy_offset,
        "seeds": args.seeds,
        "methods": args.methods,
        "target": args.target,
        "source": args.source,
        "output_dir": args.output,
        "sa_runs": args.sa_runs,
    }
    data.update({k: v for k, v in flags.items() if v is not None})
    for key in ("scenario", "target"):
        if key not in data:
            raise UsageError(f"missing --{key} (flag or config file)")
    cfg = bench.ExperimentConfig.from_dict(data)
    record = bench.run_experiment(cfg)
    if args.tables:
        bench.emit_tables(record, Path(record.run_dir) / "tables", args.tables)
    print(record.run_dir)
    for r in record.runs:
        print(f"  {r.method:18s} seed={r.seed} MAE={r.report.mae:.3f} MdAE={r.report.mdae:.3f} "
              f"SA={r.report.sa:.2f}")
    for c in record.caveats:
        print(f"  caveat: {c}")
    if record.failures:
        for f in record.failures:
            print(f"  FAILED {f['project']}/{f['method']} seed={f['seed']}: {f['error']}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_stats(args) -> int:
    preds = {Path(p).stem: metrics.PredictionSet.from_csv(p) for p in args.predictions}
    keys = [p.keys for p in preds.values()]
    if any(k != keys[0] for k in keys):
        raise bench.ExperimentError("prediction files cover different issues (or a different order)")
    results = stats.compare_methods(
        {name: p.abs_errors().tolist() for name, p in preds.items()},
        stats.StatConfig(alpha=args.alpha, k_hypotheses=args.k),
        args.method,
    )
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["method_a", "method_b", "p", "a12", "magnitude", "alpha", "bonferroni_alpha",
                "significant_alpha", "significant_bonferroni", "test_method", "cell"])
    for r in results:
        w.writerow([r.method_a, r.method_b, f"{r.p_value:.6g}", f"{r.a12:.4f}", r.magnitude, r.alpha,
                    r.alpha_used, str(r.significant_raw).lower(), str(r.significant).lower(),
                    r.test_method, bench.stats_cell(r.p_value, r.a12, r.alpha)])
    return EXIT_OK


def cmd_report(args) -> int:
    for path in bench.write_report(args.runs, args.out, args.style):
        print(path)
    return EXIT_OK


def cmd_profile(args) -> int:
    from .plotting import plot_profile

    ds = _load(args.path)
    prof = corpus.profile(ds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / f"{ds.project_key}_profile.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["issue_type", "count", "with_code", "median_description_tokens"])
        for t, n in sorted(prof.issue_type_counts.items(), key=lambda kv: -kv[1]):
            lengths = sorted(prof.description_token_length[t])
            med = (lengths[(len(lengths) - 1) // 2] + lengths[len(lengths) // 2]) / 2
            w.writerow([t, n, prof.code_snippet_counts[t], med])
    plot_profile(prof, out / f"{ds.project_key}_profile.png", title=ds.project_key)
    print(out / f"{ds.project_key}_profile.csv")
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "filter": cmd_filter,
    "split": cmd_split,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "stats": cmd_stats,
    "report": cmd_report,
    "profile": cmd_profile,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"spbench: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (corpus.CorpusError, bench.ExperimentError, FileNotFoundError, ValueError) as exc:
        print(f"spbench: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"spbench: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
