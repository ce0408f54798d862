"""Naive story-point estimators used as benchmarks."""
from __future__ import annotations

import statistics
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import Issue
from .metrics import PredictionSet


@dataclass(frozen=True)
class BaselineConfig:
    # reproduces the original study's +1 shift on Mean/Median; never use for real comparisons
    legacy_offset: bool = False
    rng_seed: int = 0


def _check(train_sps: Sequence[float]) -> None:
    if not len(train_sps):
        raise ValueError("baseline estimators need at least one training story point")


def _constant(value: float, test: Sequence[Issue]) -> PredictionSet:
    return PredictionSet.from_pairs(
        (i.issue_key for i in test), (i.story_point for i in test), [value] * len(test)
    )


def mean_estimator(
    train_sps: Sequence[float], test: Sequence[Issue], cfg: BaselineConfig = BaselineConfig()
) -> PredictionSet:
    _check(train_sps)
    value = statistics.fmean(train_sps) + (1.0 if cfg.legacy_offset else 0.0)
    return _constant(value, test)


def median_estimator(
    train_sps: Sequence[float], test: Sequence[Issue], cfg: BaselineConfig = BaselineConfig()
) -> PredictionSet:
    _check(train_sps)
    value = float(statistics.median(train_sps)) + (1.0 if cfg.legacy_offset else 0.0)
    return _constant(value, test)


def random_guess(train_sps: Sequence[float], test: Sequence[Issue], seed: int = 0) -> PredictionSet:
    """Predict each test issue with the SP of a uniformly drawn training issue.

    Test and training sets are disjoint, so an issue can never be assigned
    its own story point.
    """
    _check(train_sps)
    rng = np.random.default_rng(seed)
    pool = np.asarray(train_sps, float)
    draws = pool[rng.integers(0, len(pool), size=len(test))]
    return PredictionSet.from_pairs(
        (i.issue_key for i in test), (i.story_point for i in test), draws.tolist()
    )
