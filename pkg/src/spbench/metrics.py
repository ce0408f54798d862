"""Accuracy measures over paired (actual, predicted) story points."""
from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class PredictionSet:
    keys: tuple[str, ...]
    actual: tuple[float, ...]
    predicted: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.keys) == len(self.actual) == len(self.predicted)):
            raise MetricError("keys, actual and predicted differ in length")
        if len(set(self.keys)) != len(self.keys):
            raise MetricError("duplicate issue keys in prediction set")

    @classmethod
    def from_pairs(cls, keys: Iterable[str], actual: Iterable[float], predicted: Iterable[float]):
        return cls(tuple(keys), tuple(float(a) for a in actual), tuple(float(p) for p in predicted))

    @property
    def n(self) -> int:
        return len(self.keys)

    def abs_errors(self) -> np.ndarray:
        return np.abs(np.asarray(self.actual, float) - np.asarray(self.predicted, float))

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["issue_key", "actual", "predicted"])
            for k, a, p in zip(self.keys, self.actual, self.predicted):
                w.writerow([k, repr(a), repr(p)])

    @classmethod
    def from_csv(cls, path: str | Path) -> "PredictionSet":
        with Path(path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls.from_pairs(
            (r["issue_key"] for r in rows),
            (float(r["actual"]) for r in rows),
            (float(r["predicted"]) for r in rows),
        )


@dataclass(frozen=True)
class EvalReport:
    mae: float
    mdae: float
    sa: float
    mae_random_mean: float
    runs: int


def _require(p: PredictionSet) -> None:
    if p.n < 1:
        raise MetricError("metrics need at least one prediction")


def mae(p: PredictionSet) -> float:
    _require(p)
    return float(np.mean(p.abs_errors()))


def mdae(p: PredictionSet) -> float:
    _require(p)
    return float(statistics.median(p.abs_errors().tolist()))


def random_guess_mae_mean(
    actual: Sequence[float], train_sps: Sequence[float], runs: int = 1000, seed: int = 0
) -> float:
    """Mean MAE of ``runs`` random-guess predictors on the given actuals.

    Each run draws its guesses from the training pool with its own child
    stream spawned from ``seed``, so the result is reproducible and runs are
    independent.
    """
    if runs < 1:
        raise MetricError("runs must be >= 1")
    if not len(train_sps):
        raise MetricError("random guessing needs a non-empty training pool")
    pool = np.asarray(train_sps, float)
    y = np.asarray(actual, float)
    total = 0.0
    for child in np.random.SeedSequence(seed).spawn(runs):
        rng = np.random.default_rng(child)
        guesses = pool[rng.integers(0, len(pool), size=len(y))]
        total += float(np.mean(np.abs(y - guesses)))
    return total / runs


def standardized_accuracy(mae_value: float, mae_p0: float) -> float:
    if mae_p0 <= 0:
        raise MetricError("SA undefined: random-guess MAE is zero (constant data)")
    return (1.0 - mae_value / mae_p0) * 100.0


def sa(p: PredictionSet, train_sps: Sequence[float], runs: int = 1000, seed: int = 0) -> EvalReport:
    _require(p)
    m = mae(p)
    p0 = random_guess_mae_mean(p.actual, train_sps, runs=runs, seed=seed)
    return EvalReport(mae=m, mdae=mdae(p), sa=standardized_accuracy(m, p0), mae_random_mean=p0, runs=runs)

