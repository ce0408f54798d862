"""One-sided Wilcoxon rank-sum test, Bonferroni correction and Vargha-Delaney A12."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.special import ndtr
from scipy.stats import rankdata

EXACT_MAX_COMBINED = 20

MAGNITUDES = ("negligible", "small", "medium", "large")


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class StatConfig:
    alpha: float = 0.05
    # None: one hypothesis per pairwise comparison
    k_hypotheses: Optional[int] = None

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.k_hypotheses is not None and self.k_hypotheses < 1:
            raise ValueError("k_hypotheses must be >= 1")


@dataclass(frozen=True)
class WilcoxonResult:
    p_value: float
    rank_sum_first: float
    method: str  # "exact" or "normal"


@dataclass(frozen=True)
class StatTestResult:
    method_a: str
    method_b: str
    p_value: float
    a12: float
    magnitude: str
    rank_sum_first: float
    m: int
    n_obs: int
    alpha: float
    alpha_used: float
    significant: bool
    significant_raw: bool
    test_method: str


def _exact_lower_tail(doubled_ranks: np.ndarray, m: int, observed: int) -> float:
    """P(sum of m doubled ranks drawn without replacement <= observed)."""
    total = int(doubled_ranks.sum())
    # counts[j][s]: number of j-subsets with doubled-rank sum s
    counts = np.zeros((m + 1, total + 1))
    counts[0, 0] = 1.0
    for r in doubled_ranks.astype(int):
        counts[1:, r:] += counts[:-1, : total + 1 - r].copy()
    dist = counts[m]
    return float(dist[: observed + 1].sum() / dist.sum())


def wilcoxon_rank_sum(
    err_a: Sequence[float], err_b: Sequence[float], method: str = "auto"
) -> WilcoxonResult:
    """One-sided rank-sum test of "A's values are stochastically smaller than B's".

    ``auto`` uses the exact permutation distribution (midranks for ties) when
    the combined size is at most 20, otherwise the normal approximation with
    tie and continuity corrections. A rank sum exactly at its null mean yields
    p = 0.5, as does a sample in which every value is identical.
    """
    a = np.asarray(err_a, float)
    b = np.asarray(err_b, float)
    m, n = len(a), len(b)
    if m < 2 or n < 2:
        raise ValueError("each sample needs at least 2 observations")
    if method == "auto":
        method = "exact" if m + n <= EXACT_MAX_COMBINED else "normal"
    if method not in ("exact", "normal"):
        raise ValueError(f"unknown method {method!r}")
    ranks = rankdata(np.concatenate([a, b]))
    r1 = float(ranks[:m].sum())
    big_n = m + n
    null_mean = m * (big_n + 1) / 2
    if np.all(ranks == ranks[0]) or r1 == null_mean:
        return WilcoxonResult(0.5, r1, method)
    if method == "exact":
        doubled = np.rint(2 * ranks).astype(int)
        p = _exact_lower_tail(doubled, m, int(round(2 * r1)))
        return WilcoxonResult(min(1.0, p), r1, method)
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = float(np.sum(tie_counts**3 - tie_counts)) / (big_n * (big_n - 1))
    var = m * n / 12 * ((big_n + 1) - tie_term)
    z = (r1 - null_mean + 0.5) / math.sqrt(var)
    return WilcoxonResult(float(ndtr(z)), r1, method)


def wilcoxon_one_sided(err_a: Sequence[float], err_b: Sequence[float], method: str = "auto") -> float:
    return wilcoxon_rank_sum(err_a, err_b, method).p_value


def bonferroni(alpha: float, k: int) -> float:
    if k < 1:
        raise ValueError("number of hypotheses must be >= 1")
    return alpha / k


def magnitude_label(value: float, directional: bool = True) -> str:
    v = value if directional else max(value, 1 - value)
    if v < 0.6:
        return "negligible"
    if v < 0.7:
        return "small"
    if v < 0.8:
        return "medium"
    return "large"


def a12_value(first: Sequence[float], second: Sequence[float]) -> float:
    m, n = len(first), len(second)
    if not m or not n:
        raise ValueError("A12 needs two non-empty samples")
    ranks = rankdata(np.concatenate([np.asarray(first, float), np.asarray(second, float)]))
    r1 = float(ranks[:m].sum())
    return (r1 / m - (m + 1) / 2) / n


def a12(first: Sequence[float], second: Sequence[float], directional: bool = True) -> tuple[float, str]:
    """Vargha-Delaney A12 of ``first`` over ``second`` with its magnitude label."""
    value = a12_value(first, second)
    return value, magnitude_label(value, directional)


def compare_methods(
    errors_by_method: Mapping[str, Sequence[float]],
    cfg: StatConfig = StatConfig(),
    method: str = "auto",
) -> list[StatTestResult]:
    """All pairwise one-sided comparisons in insertion order.

    For a pair (A, B), p tests "A's absolute errors are smaller" and A12 is
    oriented so that values above 0.5 favour A.
    """
    names = list(errors_by_method)
    lengths = {name: len(errors_by_method[name]) for name in names}
    if len(set(lengths.values())) > 1:
        raise AlignmentError(f"error vectors are not aligned to one test set: {lengths}")
    pairs = list(itertools.combinations(names, 2))
    k = cfg.k_hypotheses if cfg.k_hypotheses is not None else max(1, len(pairs))
    alpha_used = bonferroni(cfg.alpha, k)
    out = []
    for name_a, name_b in pairs:
        ea, eb = errors_by_method[name_a], errors_by_method[name_b]
        w = wilcoxon_rank_sum(ea, eb, method)
        value = a12_value(eb, ea)
        out.append(
            StatTestResult(
                method_a=name_a,
                method_b=name_b,
                p_value=w.p_value,
                a12=value,
                magnitude=magnitude_label(value),
                rank_sum_first=w.rank_sum_first,
                m=len(ea),
                n_obs=len(eb),
                alpha=cfg.alpha,
                alpha_used=alpha_used,
                significant=w.p_value < alpha_used,
                significant_raw=w.p_value < cfg.alpha,
                test_method=w.method,
            )
        )
    return out
