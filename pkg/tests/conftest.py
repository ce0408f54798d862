from datetime import datetime, timedelta, timezone

import pytest

from spbench.corpus import Issue, IssueDataset

T0 = datetime(2016, 1, 1, tzinfo=timezone.utc)


def make_issue(k, sp=1.0, project="PRJ", hours=None, **kw):
    created = kw.pop("created", T0 + timedelta(hours=k if hours is None else hours))
    return Issue(
        issue_key=kw.pop("key", f"{project}-{k}"),
        project_key=project,
        repository=kw.pop("repository", "Apache"),
        created=created,
        title=kw.pop("title", f"issue {k}"),
        story_point=sp,
        **kw,
    )


def make_dataset(sps, project="PRJ", **kw):
    issues = [make_issue(k, sp, project, **kw) for k, sp in enumerate(sps)]
    return IssueDataset(project, kw.get("repository", "Apache"), tuple(issues))


@pytest.fixture
def issue_factory():
    return make_issue


@pytest.fixture
def dataset_factory():
    return make_dataset


# --------------------------------------------------------------------------- acceptance summary

ACCEPTANCE: dict[str, list[tuple[bool, str]]] = {}


def record(criterion: str, ok: bool, detail: str) -> bool:
    """Register a sub-check of an acceptance criterion; shown in the terminal summary."""
    ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))
    print(f"{'PASS' if ok else 'FAIL'} {criterion}: {detail}")
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE, key=lambda c: int(c[1:])):
        checks = ACCEPTANCE[crit]
        ok = all(c[0] for c in checks)
        detail = "; ".join(d for _, d in checks)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {crit}: {detail}")
