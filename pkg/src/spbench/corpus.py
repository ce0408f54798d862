"""Issue datasets: ingestion, filtering, story-point capping, splits, profiling."""
from __future__ import annotations

import csv
import math
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

PLANNING_POKER = frozenset({0, 0.5, 1, 2, 3, 5, 8, 13, 20, 40, 100})
MIN_CROSS_SOURCE = 200

CSV_COLUMNS = (
    "issue_key",
    "project_key",
    "repository",
    "created",
    "resolved",
    "issue_type",
    "components",
    "title",
    "description",
    "story_point",
    "sp_assignment_count",
    "fields_changed_after_sp",
    "is_resolved",
)


class CorpusError(Exception):
    """Base class for dataset errors."""


class SchemaError(CorpusError):
    pass


class PreconditionError(CorpusError):
    pass


class SplitError(CorpusError):
    pass


@dataclass(frozen=True)
class RowError:
    row: int
    message: str

    def __str__(self) -> str:
        return f"row {self.row}: {self.message}"


class Scenario(str, Enum):
    WITHIN_PROJECT = "within_project"
    CROSS_WITHIN_REPO = "cross_project_within_repo"
    CROSS_CROSS_REPO = "cross_project_cross_repo"
    CHRONOLOGICAL_CROSS = "chronological_cross"
    AUGMENTED = "augmented"


class CapMode(str, Enum):
    NONE = "none"
    TRAIN_ONLY = "train_only"
    GLOBAL = "global"

    @classmethod
    def parse(cls, value: "str | CapMode") -> "CapMode":
        if isinstance(value, CapMode):
            return value
        return cls(value.replace("-", "_"))


@dataclass(frozen=True)
class Issue:
    issue_key: str
    project_key: str
    repository: str
    created: datetime
    title: str
    description: str = ""
    issue_type: str = ""
    components: tuple[str, ...] = ()
    story_point: float = 0.0
    resolved: Optional[datetime] = None
    sp_assignment_count: int = 1
    # None means provenance unknown (e.g. fetched from Jira without changelogs)
    fields_changed_after_sp: Optional[bool] = False
    is_resolved: bool = True

    def __post_init__(self):
        if self.story_point < 0:
            raise ValueError(f"{self.issue_key}: negative story point {self.story_point}")
        if self.sp_assignment_count < 0:
            raise ValueError(f"{self.issue_key}: negative sp_assignment_count")
        if self.resolved is not None and self.resolved < self.created:
            raise ValueError(f"{self.issue_key}: resolved before created")

    @property
    def context(self) -> str:
        return f"{self.title} {self.description}"


def _order_key(issue: Issue):
    return (issue.created, issue.issue_key)


@dataclass(frozen=True)
class IssueDataset:
    """Issues of one project (or a pooled source set) in creation order."""

    project_key: str
    repository: str
    issues: tuple[Issue, ...] = ()
    pooled: bool = False
    # fetched datasets lack Porru provenance until the flags are supplied
    porru_ready: bool = True
    row_errors: tuple[RowError, ...] = field(default=(), compare=False)

    def __post_init__(self):
        issues = tuple(sorted(self.issues, key=_order_key))
        object.__setattr__(self, "issues", issues)
        keys = [i.issue_key for i in issues]
        if len(set(keys)) != len(keys):
            dup = next(k for k, c in Counter(keys).items() if c > 1)
            raise ValueError(f"duplicate issue_key {dup!r} in dataset {self.project_key}")
        if not self.pooled:
            projects = {i.project_key for i in issues}
            if len(projects) > 1:
                raise ValueError(
                    f"dataset {self.project_key} mixes projects {sorted(projects)}; "
                    "pass pooled=True for a source pool"
                )

    def __len__(self) -> int:
        return len(self.issues)

    def __iter__(self):
        return iter(self.issues)

    def __getitem__(self, idx):
        return self.issues[idx]

    @property
    def story_points(self) -> list[float]:
        return [i.story_point for i in self.issues]

    def with_issues(self, issues: Iterable[Issue], **changes) -> "IssueDataset":
        return replace(self, issues=tuple(issues), **changes)

    def subset(self, indices: Sequence[int]) -> list[Issue]:
        return [self.issues[i] for i in indices]


@dataclass(frozen=True)
class SplitPlan:
    scenario: Scenario
    train: tuple[int, ...]
    validation: tuple[int, ...]
    test: tuple[int, ...]
    cap_mode: CapMode = CapMode.NONE
    cap_value: Optional[float] = None
    # index spaces: train/validation index `source`, test indexes `target`.
    # For within-project plans both are the same dataset.
    extra_train: tuple[Issue, ...] = ()
    caveats: tuple[str, ...] = ()

    def __post_init__(self):
        if self.scenario is Scenario.WITHIN_PROJECT or self.scenario is Scenario.AUGMENTED:
            sets = [set(self.train), set(self.validation), set(self.test)]
            if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
                raise SplitError("train/validation/test overlap")
        elif set(self.train) & set(self.validation):
            raise SplitError("train/validation overlap")


@dataclass
class CorpusProfile:
    issue_type_counts: dict[str, int] = field(default_factory=dict)
    code_snippet_counts: dict[str, int] = field(default_factory=dict)
    description_token_length: dict[str, list[int]] = field(default_factory=dict)


# --------------------------------------------------------------------------- ingestion


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    # Jira emits offsets like +0000
    text = re.sub(r"([+-]\d{2})(\d{2})$", r"\1:\2", text)
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _parse_flag(text: str, column: str, allow_unknown: bool = False) -> Optional[bool]:
    value = text.strip().lower()
    if value in ("true", "1", "yes"):
        return True
    if value in ("false", "0", "no"):
        return False
    if allow_unknown and value in ("unknown", ""):
        return None
    raise ValueError(f"{column}: expected true/false, got {text!r}")


def _row_to_issue(row: dict[str, str]) -> Issue:
    try:
        sp = float(row["story_point"])
    except ValueError:
        raise ValueError(f"story_point: not a number: {row['story_point']!r}") from None
    if not math.isfinite(sp):
        raise ValueError(f"story_point: not finite: {row['story_point']!r}")
    try:
        created = parse_timestamp(row["created"])
        resolved = parse_timestamp(row["resolved"]) if row["resolved"].strip() else None
    except ValueError as exc:
        raise ValueError(f"timestamp: {exc}") from None
    count_text = row["sp_assignment_count"].strip()
    if not count_text.isdigit():
        raise ValueError(f"sp_assignment_count: expected integer, got {count_text!r}")
    components = tuple(c.strip() for c in row["components"].split(";") if c.strip())
    return Issue(
        issue_key=row["issue_key"].strip(),
        project_key=row["project_key"].strip(),
        repository=row["repository"].strip(),
        created=created,
        resolved=resolved,
        title=row["title"],
        description=row["description"],
        issue_type=row["issue_type"].strip(),
        components=components,
        story_point=sp,
        sp_assignment_count=int(count_text),
        fields_changed_after_sp=_parse_flag(
            row["fields_changed_after_sp"], "fields_changed_after_sp", allow_unknown=True
        ),
        is_resolved=bool(_parse_flag(row["is_resolved"], "is_resolved")),
    )


def ingest_csv(path: str | Path, pooled: bool | None = None) -> IssueDataset:
    """Load an issue CSV sorted by (created, issue_key).

    Malformed rows are skipped and listed in ``row_errors``; row numbers
    count the header as row 1 so they match a spreadsheet view.
    """
    path = Path(path)
    issues: list[Issue] = []
    errors: list[RowError] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing required column(s): {', '.join(missing)}")
        for rowno, row in enumerate(reader, start=2):
            try:
                issues.append(_row_to_issue(row))
            except ValueError as exc:
                errors.append(RowError(rowno, str(exc)))
    projects = sorted({i.project_key for i in issues})
    if pooled is None:
        pooled = len(projects) > 1
    repos = sorted({i.repository for i in issues})
    return IssueDataset(
        project_key="+".join(projects) if projects else path.stem,
        repository="+".join(repos),
        issues=tuple(issues),
        pooled=pooled,
        porru_ready=all(i.fields_changed_after_sp is not None for i in issues),
        row_errors=tuple(errors),
    )


def _fmt_flag(value: Optional[bool]) -> str:
    return "unknown" if value is None else str(value).lower()


def write_csv(ds: IssueDataset | Iterable[Issue], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, quoting=csv.QUOTE_NONNUMERIC)
        writer.writerow(CSV_COLUMNS)
        for i in ds:
            writer.writerow([
                i.issue_key,
                i.project_key,
                i.repository,
                i.created.isoformat(),
                i.resolved.isoformat() if i.resolved else "",
                i.issue_type,
                ";".join(i.components),
                i.title,
                i.description,
                repr(i.story_point),
                str(i.sp_assignment_count),
                _fmt_flag(i.fields_changed_after_sp),
                _fmt_flag(i.is_resolved),
            ])


# --------------------------------------------------------------------------- filters


def apply_choet_filter(ds: IssueDataset) -> IssueDataset:
    """Drop issues whose story point is zero or above 100."""
    return ds.with_issues(i for i in ds if 0 < i.story_point <= 100)


def apply_porru_filter(ds: IssueDataset) -> IssueDataset:
    if not ds.porru_ready or any(i.fields_changed_after_sp is None for i in ds):
        raise PreconditionError(
            f"dataset {ds.project_key!r} has unknown story-point provenance; "
            "supply sp_assignment_count / fields_changed_after_sp before Porru filtering"
        )
    kept = (
        i
        for i in ds
        if i.sp_assignment_count == 1
        and i.is_resolved
        and i.fields_changed_after_sp is False
        and i.story_point in PLANNING_POKER
    )
    return ds.with_issues(kept)


# --------------------------------------------------------------------------- SP capping


def nearest_rank_percentile(values: Sequence[float], percentile: float = 90) -> float:
    if not values:
        raise CorpusError("percentile of an empty sample")
    if not 0 < percentile <= 100:
        raise ValueError(f"percentile must be in (0, 100], got {percentile}")
    ordered = sorted(values)
    rank = max(1, math.ceil(percentile / 100 * len(ordered)))
    return ordered[rank - 1]


def _capped(issues: Iterable[Issue], cap: float) -> list[Issue]:
    return [replace(i, story_point=cap) if i.story_point > cap else i for i in issues]


def cap_story_points(
    ds: IssueDataset, mode: CapMode | str = CapMode.GLOBAL, percentile: float = 90
) -> tuple[IssueDataset, Optional[float]]:
    """Replace story points above the nearest-rank percentile with that value.

    For ``train_only`` pass the training subset; use :func:`cap_plan` to cap
    a split without touching validation and test issues.
    """
    mode = CapMode.parse(mode)
    if not len(ds):
        raise CorpusError(f"cannot cap story points of empty dataset {ds.project_key!r}")
    if mode is CapMode.NONE:
        return ds, None
    cap = nearest_rank_percentile(ds.story_points, percentile)
    return ds.with_issues(_capped(ds, cap)), cap


def cap_issue_sets(
    train: Sequence[Issue],
    validation: Sequence[Issue],
    test: Sequence[Issue],
    mode: CapMode | str,
    percentile: float = 90,
) -> tuple[list[Issue], list[Issue], list[Issue], Optional[float]]:
    """Cap materialised train/validation/test lists (any scenario).

    ``global`` takes the percentile over all three lists and caps all of
    them; ``train_only`` takes it over the training list and caps only that.
    """
    mode = CapMode.parse(mode)
    train, validation, test = list(train), list(validation), list(test)
    if mode is CapMode.NONE:
        return train, validation, test, None
    if mode is CapMode.GLOBAL:
        cap = nearest_rank_percentile([i.story_point for i in train + validation + test], percentile)
        return _capped(train, cap), _capped(validation, cap), _capped(test, cap), cap
    cap = nearest_rank_percentile([i.story_point for i in train], percentile)
    return _capped(train, cap), validation, test, cap


def cap_plan(
    ds: IssueDataset, plan: SplitPlan, mode: CapMode | str, percentile: float = 90
) -> tuple[IssueDataset, SplitPlan]:
    """Apply a cap mode to a within-project dataset according to its split."""
    mode = CapMode.parse(mode)
    if mode is CapMode.NONE:
        return ds, replace(plan, cap_mode=mode, cap_value=None)
    if mode is CapMode.GLOBAL:
        capped, cap = cap_story_points(ds, mode, percentile)
        return capped, replace(plan, cap_mode=mode, cap_value=cap)
    train_sps = [ds[i].story_point for i in plan.train]
    cap = nearest_rank_percentile(train_sps, percentile)
    train_idx = set(plan.train)
    issues = [
        replace(issue, story_point=cap) if k in train_idx and issue.story_point > cap else issue
        for k, issue in enumerate(ds.issues)
    ]
    return ds.with_issues(issues), replace(plan, cap_mode=mode, cap_value=cap)


# --------------------------------------------------------------------------- splits


def _chrono_sizes(n: int, fracs: Sequence[float]) -> list[int]:
    return [math.floor(f * n) for f in fracs]


def chronological_split(ds: IssueDataset, train_frac: float = 0.6, val_frac: float = 0.2) -> SplitPlan:
    n = len(ds)
    if n < 5:
        raise SplitError(f"dataset {ds.project_key!r} has {n} issues; need at least 5 to split")
    if train_frac <= 0 or val_frac < 0 or train_frac + val_frac >= 1:
        raise ValueError("fractions must satisfy 0 < train, 0 <= val, train + val < 1")
    n_train, n_val = _chrono_sizes(n, (train_frac, val_frac))
    return SplitPlan(
        scenario=Scenario.WITHIN_PROJECT,
        train=tuple(range(n_train)),
        validation=tuple(range(n_train, n_train + n_val)),
        test=tuple(range(n_train + n_val, n)),
    )


def cross_project_split(
    source: IssueDataset, target: IssueDataset, train_frac: float = 0.75
) -> SplitPlan:
    """Split the source 75/25 into train/validation; all target issues are test.

    Indices in ``train``/``validation`` refer to ``source``, ``test`` to ``target``.
    """
    if source.project_key == target.project_key:
        raise SplitError(f"source and target are the same project ({source.project_key})")
    if len(source) < 2:
        raise SplitError(f"source {source.project_key!r} needs at least 2 issues")
    if not len(target):
        raise SplitError(f"target {target.project_key!r} is empty")
    n_train = math.floor(train_frac * len(source))
    scenario = (
        Scenario.CROSS_WITHIN_REPO
        if source.repository == target.repository
        else Scenario.CROSS_CROSS_REPO
    )
    caveats = []
    repos = {r.lower() for r in (source.repository, target.repository)}
    if any("mulesoft" in r for r in repos):
        caveats.append("MuleSoft project start/end dates unknown; chronology not verifiable")
    return SplitPlan(
        scenario=scenario,
        train=tuple(range(n_train)),
        validation=tuple(range(n_train, len(source))),
        test=tuple(range(len(target))),
        caveats=tuple(caveats),
    )


def chronological_cross_filter(source_pool: IssueDataset, target: IssueDataset) -> IssueDataset:
    """Keep only pool issues created strictly before the target's first issue."""
    if not len(target):
        raise PreconditionError(f"target {target.project_key!r} is empty")
    start = target[0].created
    return source_pool.with_issues(i for i in source_pool if i.created < start)


def below_source_floor(ds: IssueDataset, floor: int = MIN_CROSS_SOURCE) -> bool:
    return len(ds) < floor


class AugmentMode(str, Enum):
    CREATED_BEFORE_VALIDATION = "created_before_validation"
    RESOLVED_BEFORE_TEST = "resolved_before_test"


def augment_training(
    plan: SplitPlan,
    ds: IssueDataset,
    repo_pool: IssueDataset,
    mode: AugmentMode | str = AugmentMode.CREATED_BEFORE_VALIDATION,
) -> SplitPlan:
    """Extend a within-project training set with earlier issues from sibling projects.

    The default keeps pool issues created before the earliest validation
    issue; ``resolved_before_test`` keeps those resolved before the first test
    issue was created.
    """
    mode = AugmentMode(mode)
    if plan.scenario is not Scenario.WITHIN_PROJECT:
        raise PreconditionError(f"augmentation needs a within_project plan, got {plan.scenario.value}")
    if any(i.project_key == ds.project_key for i in repo_pool):
        raise PreconditionError(f"augmentation pool contains target project {ds.project_key!r}")
    if mode is AugmentMode.CREATED_BEFORE_VALIDATION:
        if not plan.validation:
            raise PreconditionError("plan has an empty validation set")
        cutoff = min(ds[i].created for i in plan.validation)
        extra = [i for i in repo_pool if i.created < cutoff]
    else:
        if not plan.test:
            raise PreconditionError("plan has an empty test set")
        cutoff = min(ds[i].created for i in plan.test)
        extra = [i for i in repo_pool if i.resolved is not None and i.resolved < cutoff]
    return replace(plan, scenario=Scenario.AUGMENTED, extra_train=plan.extra_train + tuple(extra))


# --------------------------------------------------------------------------- profiling

_MARKUP = re.compile(r"\{(code|noformat)(?::[^}]*)?\}.*?\{\1\}", re.DOTALL | re.IGNORECASE)
_FRAME = re.compile(r"^\s*at\s+[\w$]+(?:\.[\w$<>]+)+\([^()\n]*\.java:\d+\)\s*$")


def _stack_trace_spans(text: str) -> list[tuple[int, int]]:
    """Character spans of runs of two or more consecutive Java stack frames."""
    spans = []
    run_start = run_end = None
    run_len = 0
    pos = 0
    for line in text.splitlines(keepends=True):
        if _FRAME.match(line.rstrip("\r\n")):
            if run_len == 0:
                run_start = pos
            run_len += 1
            run_end = pos + len(line)
        else:
            if run_len >= 2:
                spans.append((run_start, run_end))
            run_len = 0
        pos += len(line)
    if run_len >= 2:
        spans.append((run_start, run_end))
    return spans


def code_spans(text: str) -> list[tuple[int, int]]:
    """Sorted, non-overlapping spans of code markup and stack traces."""
    spans = [m.span() for m in _MARKUP.finditer(text)]
    for s, e in _stack_trace_spans(text):
        if not any(a <= s < b for a, b in spans):
            spans.append((s, e))
    return sorted(spans)


def detect_code_snippet(text: str) -> bool:
    return bool(text) and bool(code_spans(text))


def profile(ds: IssueDataset | Iterable[Issue]) -> CorpusProfile:
    out = CorpusProfile()
    for issue in ds:
        t = issue.issue_type or "(none)"
        out.issue_type_counts[t] = out.issue_type_counts.get(t, 0) + 1
        out.code_snippet_counts.setdefault(t, 0)
        if detect_code_snippet(issue.description):
            out.code_snippet_counts[t] += 1
        out.description_token_length.setdefault(t, []).append(len(issue.description.split()))
    return out
