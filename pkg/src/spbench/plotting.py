"""Figures written next to the CSV/markdown tables."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .corpus import CorpusProfile  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_profile(prof: CorpusProfile, path: str | Path, title: str = "") -> Path:
    """Issue-type proportions, code-snippet share, and description lengths by type."""
    types = sorted(prof.issue_type_counts, key=lambda t: -prof.issue_type_counts[t])
    total = sum(prof.issue_type_counts.values()) or 1
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
        share = [prof.issue_type_counts[t] / total * 100 for t in types]
        code = [prof.code_snippet_counts.get(t, 0) / total * 100 for t in types]
        ax1.barh(types, share, color="0.7", label="all issues")
        ax1.barh(types, code, color="C0", label="with code/stack trace")
        ax1.invert_yaxis()
        ax1.set_xlabel("% of issues")
        ax1.set_title("Proportion of issue types")
        ax1.legend(loc="lower right")
        data = [prof.description_token_length.get(t, []) for t in types]
        ax2.boxplot(data, showfliers=False)
        ax2.set_xticks(range(1, len(types) + 1), types, rotation=30, ha="right")
        ax2.set_ylabel("description length (tokens)")
        ax2.set_title("Description length by type")
        if title:
            fig.suptitle(title)
        return _save(fig, Path(path))


def plot_mae(rows: Sequence[tuple[str, str, float]], path: str | Path) -> Path:
    """Grouped bars of MAE; ``rows`` holds (project, method label, mae)."""
    projects = list(dict.fromkeys(r[0] for r in rows))
    methods = list(dict.fromkeys(r[1] for r in rows))
    lookup = {(p, m): v for p, m, v in rows}
    width = 0.8 / max(len(methods), 1)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(projects) + 2), 3.5))
        for k, m in enumerate(methods):
            xs = [i + k * width for i in range(len(projects))]
            ax.bar(xs, [lookup.get((p, m), 0.0) for p in projects], width, label=m)
        ax.set_xticks([i + 0.4 - width / 2 for i in range(len(projects))], projects)
        ax.set_ylabel("MAE")
        ax.legend(ncol=min(3, len(methods)))
        return _save(fig, Path(path))


def plot_trace(trace_csv: str | Path, path: str | Path, best_epoch: int | None = None) -> Path:
    with Path(trace_csv).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    epochs = [int(r["epoch"]) for r in rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.plot(epochs, [float(r["train_loss"]) for r in rows], label="train MAE")
        ax.plot(epochs, [float(r["val_loss"]) for r in rows], label="validation MAE")
        if best_epoch:
            ax.axvline(best_epoch, color="0.5", ls="--", lw=0.8, label=f"best epoch {best_epoch}")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.legend()
        return _save(fig, Path(path))
