"""TF/IDF + issue metadata features with a linear SVM over story-point classes."""
from __future__ import annotations

import json
import math
import re
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse

from .corpus import Issue, code_spans, _MARKUP
from .metrics import PredictionSet

FORMAT = "spbench.tfidf_svm"
FORMAT_VERSION = 1
MIN_TRAIN_WARN = 200

_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if len(t) > 1]


def build_context(issue: Issue) -> tuple[str, str]:
    """Split title + description into (natural-language text, code).

    Code markup blocks contribute their inner content; stack traces are
    moved verbatim. Blocks keep their original order in the code chunk.
    """
    context = f"{issue.title} {issue.description}"
    spans = code_spans(context)
    if not spans:
        return context.strip(), ""
    text_parts, code_parts = [], []
    pos = 0
    for start, end in spans:
        text_parts.append(context[pos:start])
        block = context[start:end]
        m = _MARKUP.fullmatch(block)
        if m:
            inner = re.sub(r"^\{[^}]*\}|\{[^}]*\}$", "", block)
            code_parts.append(inner)
        else:
            code_parts.append(block)
        pos = end
    text_parts.append(context[pos:])
    text = " ".join(p.strip() for p in text_parts if p.strip())
    return text, "\n".join(code_parts)


def _idf(df: int, n_docs: int) -> float:
    return math.log((1 + n_docs) / (1 + df)) + 1.0


@dataclass
class TfidfBlock:
    vocab: dict[str, int] = field(default_factory=dict)
    idf: list[float] = field(default_factory=list)

    @classmethod
    def fit(cls, docs: Sequence[list[str]]) -> "TfidfBlock":
        df = Counter()
        for toks in docs:
            df.update(set(toks))
        terms = sorted(df)
        return cls({t: i for i, t in enumerate(terms)}, [_idf(df[t], len(docs)) for t in terms])

    def __len__(self) -> int:
        return len(self.vocab)

    def row(self, tokens: list[str]) -> dict[int, float]:
        counts = Counter(t for t in tokens if t in self.vocab)
        vals = {self.vocab[t]: c * self.idf[self.vocab[t]] for t, c in counts.items()}
        norm = math.sqrt(sum(v * v for v in vals.values()))
        if norm > 0:
            vals = {k: v / norm for k, v in vals.items()}
        return vals


@dataclass
class FeaturePipeline:
    text: TfidfBlock
    code: TfidfBlock
    type_vocab: dict[str, int]
    component_vocab: dict[str, int]
    selected_indices: list[int]
    scores: list[float] = field(default_factory=list)

    @property
    def k_selected(self) -> int:
        return len(self.selected_indices)

    @property
    def full_dim(self) -> int:
        return len(self.text) + len(self.code) + len(self.type_vocab) + len(self.component_vocab)

    def offsets(self) -> tuple[int, int, int]:
        a = len(self.text)
        b = a + len(self.code)
        c = b + len(self.type_vocab)
        return a, b, c

    def full_row(self, issue: Issue) -> dict[int, float]:
        text, code = build_context(issue)
        a, b, c = self.offsets()
        row = dict(self.text.row(tokenize(text)))
        row.update({a + j: v for j, v in self.code.row(tokenize(code)).items()})
        if issue.issue_type in self.type_vocab:
            row[b + self.type_vocab[issue.issue_type]] = 1.0
        for comp in issue.components:
            if comp in self.component_vocab:
                row[c + self.component_vocab[comp]] = 1.0
        return row

    def full_matrix(self, issues: Sequence[Issue]) -> sparse.csr_matrix:
        rows, cols, vals = [], [], []
        for r, issue in enumerate(issues):
            for j, v in self.full_row(issue).items():
                rows.append(r)
                cols.append(j)
                vals.append(v)
        return sparse.csr_matrix((vals, (rows, cols)), shape=(len(issues), self.full_dim))

    def to_dict(self) -> dict:
        return {
            "text_vocab": self.text.vocab,
            "idf_text": self.text.idf,
            "code_vocab": self.code.vocab,
            "idf_code": self.code.idf,
            "type_vocab": self.type_vocab,
            "component_vocab": self.component_vocab,
            "selected_indices": self.selected_indices,
            "scores": self.scores,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeaturePipeline":
        return cls(
            text=TfidfBlock(d["text_vocab"], d["idf_text"]),
            code=TfidfBlock(d["code_vocab"], d["idf_code"]),
            type_vocab=d["type_vocab"],
            component_vocab=d["component_vocab"],
            selected_indices=list(d["selected_indices"]),
            scores=list(d.get("scores", [])),
        )


def chi2_scores(X, labels: Sequence) -> np.ndarray:
    """Chi-squared statistic of each non-negative feature against class labels.

    The observed table for feature j holds its summed value per class; the
    expected table spreads the feature total by class frequency.
    """
    X = sparse.csr_matrix(X)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    onehot = (labels[:, None] == classes[None, :]).astype(float)
    observed = np.asarray((X.T @ onehot)).T  # classes x features
    class_prob = onehot.mean(axis=0)
    totals = np.asarray(X.sum(axis=0)).ravel()
    expected = np.outer(class_prob, totals)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(expected > 0, (observed - expected) ** 2 / expected, 0.0)
    return terms.sum(axis=0)


def select_top_k(scores: Sequence[float], k: int) -> list[int]:
    """Indices of the k highest scores (ties to the lower index), ascending."""
    order = sorted(range(len(scores)), key=lambda j: (-scores[j], j))
    return sorted(order[:k])


def fit_pipeline(train: Sequence[Issue], k: int = 100) -> FeaturePipeline:
    if not train:
        raise ValueError("cannot fit a feature pipeline on an empty training set")
    if k < 1:
        raise ValueError("k must be >= 1")
    contexts = [build_context(i) for i in train]
    pipe = FeaturePipeline(
        text=TfidfBlock.fit([tokenize(t) for t, _ in contexts]),
        code=TfidfBlock.fit([tokenize(c) for _, c in contexts]),
        type_vocab={t: j for j, t in enumerate(sorted({i.issue_type for i in train}))},
        component_vocab={
            c: j for j, c in enumerate(sorted({c for i in train for c in i.components}))
        },
        selected_indices=[],
    )
    dim = pipe.full_dim
    if k > dim:
        warnings.warn(f"k={k} exceeds feature dimension {dim}; selecting all features")
        k = dim
    scores = chi2_scores(pipe.full_matrix(train), [i.story_point for i in train])
    pipe.scores = [float(s) for s in scores]
    pipe.selected_indices = select_top_k(pipe.scores, k)
    return pipe


def transform(pipeline: FeaturePipeline, issues: Issue | Sequence[Issue]) -> np.ndarray:
    """Selected features for one issue (1-D) or several (2-D)."""
    single = isinstance(issues, Issue)
    batch = [issues] if single else list(issues)
    X = pipeline.full_matrix(batch)[:, pipeline.selected_indices].toarray()
    return X[0] if single else X


@dataclass
class SPClassifier:
    class_labels: list[float]
    coef: np.ndarray  # (n_classes or 1, n_features)
    intercept: np.ndarray

    def decision(self, X) -> np.ndarray:
        return np.asarray(X, float) @ self.coef.T + self.intercept

    def predict(self, X) -> np.ndarray:
        labels = np.asarray(self.class_labels, float)
        X = np.atleast_2d(np.asarray(X, float))
        if len(labels) == 1:
            return np.full(len(X), labels[0])
        scores = self.decision(X)
        if len(labels) == 2:
            return labels[(scores[:, 0] > 0).astype(int)]
        return labels[np.argmax(scores, axis=1)]

    def to_dict(self) -> dict:
        return {
            "class_labels": self.class_labels,
            "coef": self.coef.tolist(),
            "intercept": self.intercept.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SPClassifier":
        return cls(list(d["class_labels"]), np.asarray(d["coef"], float), np.asarray(d["intercept"], float))


def train_svm(X, y: Sequence[float], C: float = 1.0, seed: int = 0) -> SPClassifier:
    """Fit a linear one-vs-rest SVM; a single class gives a constant predictor."""
    from sklearn.svm import LinearSVC

    X = np.asarray(X, float)
    y = np.asarray(y, float)
    labels = sorted(set(y.tolist()))
    if len(y) < MIN_TRAIN_WARN:
        warnings.warn(f"only {len(y)} training issues; TF/IDF-SVM is unreliable below {MIN_TRAIN_WARN}")
    if len(labels) == 1:
        warnings.warn(f"single story-point class {labels[0]}; classifier is constant")
        return SPClassifier(labels, np.zeros((1, X.shape[1])), np.zeros(1))
    svc = LinearSVC(C=C, random_state=seed, max_iter=20000, dual=True)
    # LinearSVC expects discrete labels; class order matches the sorted label list
    svc.fit(X, np.searchsorted(labels, y))
    return SPClassifier(labels, svc.coef_.copy(), svc.intercept_.copy())


def predict_svm(clf: SPClassifier, pipeline: FeaturePipeline, test: Sequence[Issue]) -> PredictionSet:
    preds = clf.predict(transform(pipeline, test)) if test else np.array([])
    return PredictionSet.from_pairs(
        (i.issue_key for i in test), (i.story_point for i in test), preds.tolist()
    )


def save_model(path: str | Path, pipeline: FeaturePipeline, clf: SPClassifier) -> None:
    payload = {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "pipeline": pipeline.to_dict(),
        "classifier": clf.to_dict(),
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def load_model(path: str | Path) -> tuple[FeaturePipeline, SPClassifier]:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != FORMAT or payload.get("version") != FORMAT_VERSION:
        raise ValueError(f"{path}: not a {FORMAT} v{FORMAT_VERSION} artifact")
    return FeaturePipeline.from_dict(payload["pipeline"]), SPClassifier.from_dict(payload["classifier"])


def fit_predict(
    train: Sequence[Issue], test: Sequence[Issue], k: int = 100, C: float = 1.0, seed: int = 0
) -> tuple[PredictionSet, FeaturePipeline, SPClassifier]:
    pipe = fit_pipeline(train, k)
    clf = train_svm(transform(pipe, train), [i.story_point for i in train], C=C, seed=seed)
    return predict_svm(clf, pipe, test), pipe, clf
