"""Synthetic issue generators for tests, demos and the acceptance suite."""
from __future__ import annotations

from datetime import datetime, timedelta, timezone

import numpy as np

from .corpus import Issue, IssueDataset

EPOCH = datetime(2015, 1, 1, tzinfo=timezone.utc)

CLUSTER_WORDS = (
    [f"alpha{k}" for k in range(30)],
    [f"omega{k}" for k in range(30)],
)


def two_cluster_dataset(
    n: int = 600,
    sps: tuple[float, float] = (1.0, 8.0),
    doc_len: tuple[int, int] = (8, 30),
    project: str = "SYN",
    seed: int = 0,
) -> IssueDataset:
    """Issues whose text comes from one of two disjoint vocabularies.

    Clusters alternate in creation order so every chronological slice holds
    both labels in equal share.
    """
    rng = np.random.default_rng(seed)
    issues = []
    for k in range(n):
        c = k % 2
        words = CLUSTER_WORDS[c]
        length = int(rng.integers(doc_len[0], doc_len[1] + 1))
        toks = rng.choice(words, size=length)
        issues.append(
            Issue(
                issue_key=f"{project}-{k + 1:05d}",
                project_key=project,
                repository="Synthetic",
                created=EPOCH + timedelta(hours=k),
                title=" ".join(toks[:4]),
                description=" ".join(toks[4:]),
                issue_type="Story",
                story_point=sps[c],
            )
        )
    return IssueDataset(project, "Synthetic", tuple(issues))


def random_project(
    rng: np.random.Generator,
    project: str,
    repository: str,
    n: int,
    start: datetime = EPOCH,
    span_days: float = 400.0,
) -> list[Issue]:
    offsets = np.sort(rng.uniform(0, span_days, size=n))
    cards = np.array([1, 2, 3, 5, 8, 13])
    out = []
    for k, off in enumerate(offsets):
        created = start + timedelta(days=float(off))
        # coarse timestamps make creation-time ties common
        created = created.replace(minute=0, second=0, microsecond=0)
        resolved = created + timedelta(days=float(rng.uniform(0.5, 60)))
        out.append(
            Issue(
                issue_key=f"{project}-{k + 1}",
                project_key=project,
                repository=repository,
                created=created,
                resolved=resolved,
                title=f"task {k} of {project}",
                description="",
                issue_type=str(rng.choice(["Bug", "Story", "Task"])),
                story_point=float(rng.choice(cards)),
            )
        )
    return out


def random_repository(seed: int, n_projects: int = 3, sizes: tuple[int, int] = (20, 80)) -> dict[str, IssueDataset]:
    """Projects of one repository with overlapping lifetimes."""
    rng = np.random.default_rng(seed)
    repo = f"Repo{seed}"
    out = {}
    for p in range(n_projects):
        key = f"P{p}"
        start = EPOCH + timedelta(days=float(rng.uniform(0, 300)))
        issues = random_project(rng, key, repo, int(rng.integers(sizes[0], sizes[1] + 1)), start)
        out[key] = IssueDataset(key, repo, tuple(issues))
    return out
