"""Experiment orchestration: splits, estimators, evaluation, persistence, tables."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import time
import traceback
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

from . import baselines, corpus, metrics, stats
from .corpus import CapMode, Issue, IssueDataset, Scenario

log = logging.getLogger(__name__)

METHODS = ("random", "mean", "median", "tfidf_svm", "deepse", "deepse_nopretrain")
STOCHASTIC = {"random", "tfidf_svm", "deepse", "deepse_nopretrain"}
METHOD_LABELS = {
    "random": "Random",
    "mean": "Mean",
    "median": "Median",
    "tfidf_svm": "TF/IDF-SVM",
    "deepse": "Deep-SE",
    "deepse_nopretrain": "Deep-SE!pre-train",
}
METRIC_COLUMNS = (
    "project", "scenario", "method", "seed", "n", "mae", "mdae", "sa", "mae_random_mean", "runs",
    "predictions",
)
STATS_COLUMNS = (
    "project", "method_a", "method_b", "p", "a12", "magnitude", "alpha", "bonferroni_alpha",
    "significant_alpha", "significant_bonferroni", "test_method", "seed",
)
SPLIT_COLUMNS = ("role", "issue_key", "project_key", "created", "resolved")
DATA_ENV = "SPBENCH_DATA_DIR"


class ExperimentError(Exception):
    """A run could not start (bad configuration or scenario precondition)."""


class RunExistsError(ExperimentError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: Scenario
    target: str
    methods: tuple[str, ...] = ("mean", "median")
    source: Optional[str] = None  # cross-project source project, or pool for RQ3.2/RQ4
    cap_mode: CapMode = CapMode.NONE
    legacy_offset: bool = False
    seeds: tuple[int, ...] = (0,)
    output_dir: str = "runs"
    sa_runs: int = 1000
    alpha: float = 0.05
    k_hypotheses: Optional[int] = None
    stats_method: str = "auto"
    min_source: int = corpus.MIN_CROSS_SOURCE
    augment_mode: str = corpus.AugmentMode.CREATED_BEFORE_VALIDATION.value
    tfidf_k: int = 100
    svm_c: float = 1.0
    deepse: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        object.__setattr__(self, "cap_mode", CapMode.parse(self.cap_mode))
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.methods:
            raise ExperimentError("at least one method is required")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ExperimentError(f"unknown method(s) {unknown}; choose from {list(METHODS)}")
        if len(set(self.methods)) != len(self.methods):
            raise ExperimentError("methods listed twice")
        if not self.seeds:
            if STOCHASTIC & set(self.methods):
                raise ExperimentError("stochastic methods need at least one seed")
            object.__setattr__(self, "seeds", (0,))
        needs_source = self.scenario is not Scenario.WITHIN_PROJECT
        if needs_source and not self.source:
            raise ExperimentError(f"scenario {self.scenario.value} needs a source dataset")

    def snapshot(self) -> dict:
        d = asdict(self)
        d["scenario"] = self.scenario.value
        d["cap_mode"] = self.cap_mode.value
        d["methods"] = list(self.methods)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ExperimentError(f"unknown config key(s): {sorted(extra)}")
        return cls(**d)


@dataclass
class MethodRun:
    method: str
    seed: int
    predictions: str
    report: metrics.EvalReport
    seconds: float = 0.0
    epochs: Optional[int] = None
    best_epoch: Optional[int] = None


@dataclass
class RunRecord:
    config: dict
    run_dir: str
    project: str
    scenario: str
    plan: dict
    runs: list[MethodRun] = field(default_factory=list)
    stats: list[dict] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    caveats: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def load(cls, run_dir: str | Path) -> "RunRecord":
        d = json.loads((Path(run_dir) / "manifest.json").read_text())
        runs = [MethodRun(**{**r, "report": metrics.EvalReport(**r["report"])}) for r in d.pop("runs")]
        return cls(runs=runs, **d)


# --------------------------------------------------------------------------- helpers


def resolve_path(path: str) -> Path:
    p = Path(os.path.expanduser(path))
    if not p.is_absolute() and not p.exists() and os.environ.get(DATA_ENV):
        p = Path(os.environ[DATA_ENV]) / p
    return p


def load_dataset(path: str) -> IssueDataset:
    p = resolve_path(path)
    if not p.exists():
        raise ExperimentError(f"dataset not found: {path}")
    ds = corpus.ingest_csv(p)
    if ds.row_errors:
        raise ExperimentError(
            f"{p}: {len(ds.row_errors)} malformed row(s), first: {ds.row_errors[0]}"
        )
    return ds


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def config_digest(cfg: ExperimentConfig) -> str:
    snap = cfg.snapshot()
    snap.pop("output_dir")
    files = [cfg.target] + ([cfg.source] if cfg.source else [])
    snap["data_sha256"] = [_sha256_file(resolve_path(f)) for f in files]
    blob = json.dumps(snap, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class _Sets:
    train: list[Issue]
    validation: list[Issue]
    test: list[Issue]
    plan: corpus.SplitPlan
    caveats: list[str]


def build_sets(cfg: ExperimentConfig, target: IssueDataset, source: Optional[IssueDataset]) -> _Sets:
    """Materialise train/validation/test issue lists for the configured scenario."""
    sc = cfg.scenario
    if sc is Scenario.WITHIN_PROJECT:
        plan = corpus.chronological_split(target)
        train, val, test = target.subset(plan.train), target.subset(plan.validation), target.subset(plan.test)
    elif sc in (Scenario.CROSS_WITHIN_REPO, Scenario.CROSS_CROSS_REPO):
        plan = corpus.cross_project_split(source, target)
        if plan.scenario is not sc:
            raise ExperimentError(
                f"scenario {sc.value} does not match repositories "
                f"{source.repository!r} -> {target.repository!r}"
            )
        train, val, test = source.subset(plan.train), source.subset(plan.validation), list(target)
    elif sc is Scenario.CHRONOLOGICAL_CROSS:
        if any(i.project_key == target.project_key for i in source):
            raise ExperimentError(f"source pool contains the target project {target.project_key}")
        earlier = corpus.chronological_cross_filter(source, target)
        if corpus.below_source_floor(earlier, cfg.min_source):
            raise ExperimentError(
                f"only {len(earlier)} source issues were created before {target.project_key} started; "
                f"less than {cfg.min_source} issues is too few for cross-project training"
            )
        plan = replace(corpus.cross_project_split(earlier, target), scenario=Scenario.CHRONOLOGICAL_CROSS)
        train, val, test = earlier.subset(plan.train), earlier.subset(plan.validation), list(target)
    else:  # augmented
        base = corpus.chronological_split(target)
        plan = corpus.augment_training(base, target, source, cfg.augment_mode)
        train = target.subset(plan.train) + list(plan.extra_train)
        val, test = target.subset(plan.validation), target.subset(plan.test)
    train, val, test, cap = corpus.cap_issue_sets(train, val, test, cfg.cap_mode)
    plan = replace(plan, cap_mode=cfg.cap_mode, cap_value=cap)
    return _Sets(train, val, test, plan, list(plan.caveats))


def _write_split(path: Path, sets: _Sets) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SPLIT_COLUMNS)
        for role, issues in (("train", sets.train), ("validation", sets.validation), ("test", sets.test)):
            for i in issues:
                w.writerow([role, i.issue_key, i.project_key, i.created.isoformat(),
                            i.resolved.isoformat() if i.resolved else ""])


def _deepse_cfg(cfg: ExperimentConfig, seed: int, pretrain: bool):
    from .deepse import DeepSEConfig

    return DeepSEConfig(**{**cfg.deepse, "seed": seed, "pretrain": pretrain})


def _predict(method: str, seed: int, cfg: ExperimentConfig, sets: _Sets, cell_dir: Path):
    """Returns (PredictionSet, extra info dict)."""
    train_sps = [i.story_point for i in sets.train]
    bcfg = baselines.BaselineConfig(legacy_offset=cfg.legacy_offset, rng_seed=seed)
    if method == "mean":
        return baselines.mean_estimator(train_sps, sets.test, bcfg), {}
    if method == "median":
        return baselines.median_estimator(train_sps, sets.test, bcfg), {}
    if method == "random":
        return baselines.random_guess(train_sps, sets.test, seed), {}
    if method == "tfidf_svm":
        from . import tfidf_svm

        pred, pipe, clf = tfidf_svm.fit_predict(sets.train, sets.test, k=cfg.tfidf_k, C=cfg.svm_c, seed=seed)
        tfidf_svm.save_model(cell_dir / f"tfidf_svm__seed{seed}.json", pipe, clf)
        return pred, {}
    from .deepse import fit, predict_deepse, save_checkpoint, write_trace_csv

    model = fit(sets.train, sets.validation, _deepse_cfg(cfg, seed, method == "deepse"))
    save_checkpoint(model, cell_dir / f"{method}__seed{seed}.pt")
    write_trace_csv(model, cell_dir / f"{method}__seed{seed}_trace.csv")
    info = {"seconds": model.total_seconds, "epochs": len(model.trace), "best_epoch": model.best_epoch}
    return predict_deepse(model, None, sets.test), info


def _fmt(x: float) -> str:
    return repr(float(x))


# --------------------------------------------------------------------------- run


def run_experiment(cfg: ExperimentConfig, overwrite: bool = False) -> RunRecord:
    target = load_dataset(cfg.target)
    source = load_dataset(cfg.source) if cfg.source else None
    sets = build_sets(cfg, target, source)
    if not sets.test:
        raise ExperimentError(f"{target.project_key}: empty test set")

    run_dir = Path(cfg.output_dir) / f"{target.project_key}-{cfg.scenario.value}-{config_digest(cfg)}"
    if run_dir.exists() and not overwrite:
        raise RunExistsError(f"run directory {run_dir} already exists; refusing to overwrite")
    (run_dir / "predictions").mkdir(parents=True, exist_ok=True)
    (run_dir / "models").mkdir(exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(cfg.snapshot(), indent=2, sort_keys=True))
    _write_split(run_dir / "split.csv", sets)

    plan_info = {
        "scenario": sets.plan.scenario.value,
        "n_train": len(sets.train),
        "n_validation": len(sets.validation),
        "n_test": len(sets.test),
        "n_extra_train": len(sets.plan.extra_train),
        "cap_mode": sets.plan.cap_mode.value,
        "cap_value": sets.plan.cap_value,
    }
    record = RunRecord(
        config=cfg.snapshot(),
        run_dir=str(run_dir),
        project=target.project_key,
        scenario=cfg.scenario.value,
        plan=plan_info,
        caveats=sets.caveats,
    )
    train_sps = [i.story_point for i in sets.train]
    errors_by_seed: dict[int, dict[str, list[float]]] = {s: {} for s in cfg.seeds}
    for method in cfg.methods:
        seeds = cfg.seeds if method in STOCHASTIC else cfg.seeds[:1]
        for seed in seeds:
            try:
                t0 = time.perf_counter()
                pred, info = _predict(method, seed, cfg, sets, run_dir / "models")
                elapsed = time.perf_counter() - t0
                pred_path = Path("predictions") / f"{method}__seed{seed}.csv"
                pred.to_csv(run_dir / pred_path)
                report = metrics.sa(pred, train_sps, runs=cfg.sa_runs, seed=seed)
            except Exception as exc:  # surfaced in the failure manifest
                log.error("%s/%s seed %s failed: %s", target.project_key, method, seed, exc)
                record.failures.append({
                    "project": target.project_key,
                    "method": method,
                    "seed": seed,
                    "error": f"{type(exc).__name__}: {exc}",
                    "traceback": traceback.format_exc(),
                })
                continue
            record.runs.append(
                MethodRun(method, seed, str(pred_path), report, info.get("seconds", elapsed),
                          info.get("epochs"), info.get("best_epoch"))
            )
            targets = cfg.seeds if method not in STOCHASTIC else (seed,)
            for s in targets:
                errors_by_seed.setdefault(s, {})[method] = pred.abs_errors().tolist()

    scfg = stats.StatConfig(alpha=cfg.alpha, k_hypotheses=cfg.k_hypotheses)
    for seed, errs in errors_by_seed.items():
        ordered = {m: errs[m] for m in cfg.methods if m in errs}
        if len(ordered) < 2:
            continue
        for r in stats.compare_methods(ordered, scfg, cfg.stats_method):
            record.stats.append({"seed": seed, **asdict(r)})

    _write_metrics(run_dir / "metrics.csv", record)
    _write_stats(run_dir / "stats.csv", record)
    _write_timing(run_dir / "timing.csv", record)
    if record.failures:
        (run_dir / "failures.json").write_text(json.dumps(record.failures, indent=2))
    (run_dir / "manifest.json").write_text(json.dumps(record.to_json(), indent=2, sort_keys=True))
    return record


def _write_metrics(path: Path, record: RunRecord) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in record.runs:
            rep = r.report
            n = len(metrics.PredictionSet.from_csv(Path(record.run_dir) / r.predictions).keys)
            w.writerow([record.project, record.scenario, r.method, r.seed, n, _fmt(rep.mae),
                        _fmt(rep.mdae), _fmt(rep.sa), _fmt(rep.mae_random_mean), rep.runs, r.predictions])


def _write_stats(path: Path, record: RunRecord) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STATS_COLUMNS)
        for s in record.stats:
            w.writerow([record.project, s["method_a"], s["method_b"], _fmt(s["p_value"]), _fmt(s["a12"]),
                        s["magnitude"], _fmt(s["alpha"]), _fmt(s["alpha_used"]),
                        str(s["significant_raw"]).lower(), str(s["significant"]).lower(),
                        s["test_method"], s["seed"]])


def _write_timing(path: Path, record: RunRecord) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["project", "method", "seed", "seconds", "epochs", "best_epoch"])
        for r in record.runs:
            w.writerow([record.project, r.method, r.seed, f"{r.seconds:.3f}",
                        "" if r.epochs is None else r.epochs,
                        "" if r.best_epoch is None else r.best_epoch])


# --------------------------------------------------------------------------- tables


def format_p(p: float) -> str:
    return "<0.001" if p < 0.001 else f"{p:.3f}"


def stats_cell(p: float, a12: float, alpha: float = 0.05, markdown: bool = False) -> str:
    """Render ``p (A12) letter``; the letter only appears for significant wins.

    Non-significant results and A12 below 0.5 get an underscore instead.
    """
    if p < alpha and a12 >= 0.5:
        letter = stats.magnitude_label(a12)[0]
    else:
        letter = "\\_" if markdown else "_"
    return f"{format_p(p)} ({a12:.2f}) {letter}"


def _method_label(method: str, seed: int, multi_seed: bool) -> str:
    label = METHOD_LABELS.get(method, method)
    return f"{label} (seed {seed})" if multi_seed and method in STOCHASTIC else label


def _metric_rows(records: Sequence[RunRecord]) -> dict[str, list[list[str]]]:
    out: dict[str, list[list[str]]] = {}
    for rec in records:
        multi = len({r.seed for r in rec.runs}) > 1
        rows = out.setdefault(rec.project, [])
        for r in rec.runs:
            rows.append([_method_label(r.method, r.seed, multi), rec.scenario, f"{r.report.mae:.2f}",
                         f"{r.report.mdae:.2f}", f"{r.report.sa:.2f}"])
    return out


def _stats_rows(records: Sequence[RunRecord], markdown: bool) -> dict[str, list[list[str]]]:
    out: dict[str, list[list[str]]] = {}
    for rec in records:
        multi = len({s["seed"] for s in rec.stats}) > 1
        rows = out.setdefault(rec.project, [])
        for s in rec.stats:
            a = _method_label(s["method_a"], s["seed"], multi)
            b = METHOD_LABELS.get(s["method_b"], s["method_b"])
            rows.append([f"{a} vs. {b}", stats_cell(s["p_value"], s["a12"], s["alpha"], markdown)])
    return out


def _markdown(header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def _csv(header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def emit_tables(records: RunRecord | Sequence[RunRecord], out_dir: str | Path, style: str = "markdown") -> list[Path]:
    """Write one MAE table and one Wilcoxon/A12 table per project."""
    if isinstance(records, RunRecord):
        records = [records]
    if style not in ("csv", "markdown"):
        raise ValueError(f"unknown table style {style!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    md = style == "markdown"
    render, ext = (_markdown, "md") if md else (_csv, "csv")
    written = []
    for project, rows in _metric_rows(records).items():
        path = out_dir / f"{project}_mae.{ext}"
        path.write_text(render(["Method", "Scenario", "MAE", "MdAE", "SA"], rows))
        written.append(path)
    for project, rows in _stats_rows(records, md).items():
        path = out_dir / f"{project}_stats.{ext}"
        path.write_text(render(["Comparison", "p (A12)"], rows))
        written.append(path)
    return written


def write_report(run_dirs: Sequence[str | Path], out_dir: str | Path, style: str = "markdown") -> list[Path]:
    """Tables for every run plus an MAE bar chart and Deep-SE training curves."""
    from . import plotting

    records = [RunRecord.load(d) for d in run_dirs]
    out_dir = Path(out_dir)
    written = emit_tables(records, out_dir, style)
    bars = []
    for rec in records:
        multi = len({r.seed for r in rec.runs}) > 1
        bars += [(rec.project, _method_label(r.method, r.seed, multi), r.report.mae) for r in rec.runs]
    if bars:
        written.append(plotting.plot_mae(bars, out_dir / "mae.png"))
    for rec in records:
        for r in rec.runs:
            trace = Path(rec.run_dir) / "models" / f"{r.method}__seed{r.seed}_trace.csv"
            if trace.exists():
                written.append(plotting.plot_trace(
                    trace, out_dir / f"{rec.project}_{r.method}_seed{r.seed}_trace.png", r.best_epoch))
    return written
