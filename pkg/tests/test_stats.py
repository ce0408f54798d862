import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import mannwhitneyu, rankdata

from spbench.stats import (
    AlignmentError,
    StatConfig,
    a12,
    a12_value,
    bonferroni,
    compare_methods,
    magnitude_label,
    wilcoxon_one_sided,
    wilcoxon_rank_sum,
)


def brute_exact_p(a, b):
    """Enumerate every assignment of the pooled midranks to the first sample."""
    ranks = rankdata(np.concatenate([a, b]))
    m = len(a)
    observed = ranks[:m].sum()
    hits = total = 0
    for idx in itertools.combinations(range(len(ranks)), m):
        total += 1
        hits += ranks[list(idx)].sum() <= observed + 1e-9
    return hits / total


def brute_a12(first, second):
    wins = sum((x > y) + 0.5 * (x == y) for x in first for y in second)
    return wins / (len(first) * len(second))


small_samples = st.lists(st.integers(0, 6), min_size=2, max_size=7)


@settings(max_examples=200, deadline=None)
@given(small_samples, small_samples)
def test_exact_matches_enumeration(a, b):
    res = wilcoxon_rank_sum(a, b, method="exact")
    ranks = rankdata(a + b)
    if np.all(ranks == ranks[0]) or res.rank_sum_first == len(a) * (len(a) + len(b) + 1) / 2:
        assert res.p_value == 0.5
    else:
        assert res.p_value == pytest.approx(brute_exact_p(a, b), abs=1e-12)


@settings(max_examples=200)
@given(st.lists(st.integers(0, 9), min_size=1, max_size=15), st.lists(st.integers(0, 9), min_size=1, max_size=15))
def test_a12_matches_pairwise_counts(a, b):
    assert a12_value(a, b) == pytest.approx(brute_a12(a, b))
    # complementarity
    assert a12_value(a, b) + a12_value(b, a) == pytest.approx(1.0)


def test_normal_approx_matches_scipy_asymptotic():
    rng = np.random.default_rng(11)
    for _ in range(50):
        a = rng.integers(0, 10, size=rng.integers(11, 40)).astype(float)
        b = rng.integers(0, 10, size=rng.integers(11, 40)).astype(float)
        if np.all(a == a[0]) and np.all(b == a[0]):
            continue
        ours = wilcoxon_rank_sum(a, b, method="normal").p_value
        ref = mannwhitneyu(a, b, alternative="less", method="asymptotic", use_continuity=True).pvalue
        assert ours == pytest.approx(ref, abs=1e-12)


def test_auto_switches_at_twenty():
    assert wilcoxon_rank_sum(list(range(10)), list(range(10, 20))).method == "exact"
    assert wilcoxon_rank_sum(list(range(10)), list(range(10, 21))).method == "normal"


def test_clear_separation():
    assert wilcoxon_one_sided([1, 1, 1], [9, 9, 9]) == pytest.approx(1 / 20)
    assert wilcoxon_one_sided([9, 9], [1, 1]) == 1.0
    assert a12([3, 3, 3], [1, 1, 1]) == (1.0, "large")
    assert a12([1, 2], [1, 2]) == (0.5, "negligible")


def test_degenerate_inputs():
    assert wilcoxon_one_sided([4, 4, 4], [4, 4]) == 0.5
    with pytest.raises(ValueError):
        wilcoxon_one_sided([1], [1, 2])
    with pytest.raises(ValueError):
        wilcoxon_rank_sum([1, 2], [3, 4], method="bogus")


@settings(max_examples=100, deadline=None)
@given(small_samples, small_samples)
def test_monotone_transform_invariance(a, b):
    def f(v):
        return [x**3 + 2 * x + 7 for x in v]
    assert wilcoxon_one_sided(a, b) == pytest.approx(wilcoxon_one_sided(f(a), f(b)))
    assert a12_value(a, b) == pytest.approx(a12_value(f(a), f(b)))


def test_bonferroni():
    assert bonferroni(0.05, 5) == pytest.approx(0.01)
    with pytest.raises(ValueError):
        bonferroni(0.05, 0)


@pytest.mark.parametrize("v,label", [(0.59, "negligible"), (0.6, "small"), (0.69, "small"),
                                     (0.7, "medium"), (0.8, "large"), (1.0, "large")])
def test_magnitude_thresholds(v, label):
    assert magnitude_label(v) == label


def test_magnitude_non_directional_folds():
    assert magnitude_label(0.2, directional=False) == "large"
    assert magnitude_label(0.2) == "negligible"


def test_compare_methods_orientation_and_alpha():
    errs = {"good": [0, 0, 1, 1, 0], "bad": [5, 6, 5, 7, 8], "mid": [2, 3, 2, 3, 2]}
    res = compare_methods(errs)
    assert [(r.method_a, r.method_b) for r in res] == [("good", "bad"), ("good", "mid"), ("bad", "mid")]
    first = res[0]
    assert first.a12 == 1.0 and first.magnitude == "large"
    assert first.alpha_used == pytest.approx(0.05 / 3)
    assert first.significant and first.significant_raw
    assert res[2].a12 == 0.0 and not res[2].significant
    res_k = compare_methods(errs, StatConfig(k_hypotheses=1))
    assert res_k[0].alpha_used == 0.05


def test_compare_methods_requires_alignment():
    with pytest.raises(AlignmentError):
        compare_methods({"a": [1, 2, 3], "b": [1, 2]})


def test_stat_config_validation():
    with pytest.raises(ValueError):
        StatConfig(alpha=1.5)
    with pytest.raises(ValueError):
        StatConfig(k_hypotheses=0)
