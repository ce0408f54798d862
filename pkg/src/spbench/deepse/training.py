from __future__ import annotations

import copy
import csv
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from ..corpus import Issue, IssueDataset, SplitPlan
from ..metrics import PredictionSet
from .model import DeepSE, DeepSEConfig, LanguageModel
from .vocab import PAD, Vocab, build_vocab, encode_many

CHECKPOINT_FORMAT = "spbench.deepse"
CHECKPOINT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float


@dataclass
class TrainedModel:
    cfg: DeepSEConfig
    vocab: Vocab
    state: dict[str, torch.Tensor]
    trace: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    def build(self, dtype=torch.float32) -> DeepSE:
        net = DeepSE(len(self.vocab), self.cfg).to(dtype)
        net.load_state_dict(self.state)
        net.eval()
        return net

    @property
    def total_seconds(self) -> float:
        return sum(r.seconds for r in self.trace)


class EarlyStopping:
    """Stops after ``patience`` consecutive epochs without a strict improvement."""

    def __init__(self, patience: int = 10):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.stale = 0

    def step(self, epoch: int, loss: float) -> bool:
        """Record an epoch; returns True when training should stop."""
        if loss < self.best:
            self.best, self.best_epoch, self.stale = loss, epoch, 0
        else:
            self.stale += 1
        return self.stale >= self.patience


def _tensor(rows: Sequence[Sequence[int]]) -> torch.Tensor:
    return torch.tensor(np.asarray(rows, dtype=np.int64).reshape(len(rows), -1))


def _check_finite(loss: torch.Tensor, epoch: int, lr: float) -> None:
    if not torch.isfinite(loss):
        raise TrainingDivergedError(
            f"non-finite loss at epoch {epoch} (learning_rate={lr}); try a smaller learning rate"
        )


# --------------------------------------------------------------------------- LM pre-training


def pretrain_lm(
    corpus: Sequence[Issue], vocab: Vocab, cfg: DeepSEConfig, tol: float = 1e-4
) -> dict[str, dict[str, torch.Tensor]]:
    """Train embedding + LSTM on next-token prediction.

    Runs ``cfg.lm_epochs`` (or ``cfg.max_epochs``) epochs, stopping early when
    the epoch loss improves by less than ``tol`` for ``cfg.patience`` epochs.
    Returns state dicts for ``embedding``, ``lstm`` and the softmax ``output``
    layer, plus the per-epoch loss ``history``. Only the first two initialise
    the supervised model.
    """
    if not corpus:
        raise ValueError("language-model pre-training needs a non-empty corpus")
    tokens = _tensor(encode_many(corpus, vocab, cfg.max_tokens + 1))
    inputs, targets = tokens[:, :-1], tokens[:, 1:]
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        lm = LanguageModel(len(vocab), cfg)
    opt = torch.optim.Adam(lm.parameters(), lr=cfg.learning_rate)
    loss_fn = nn.CrossEntropyLoss(ignore_index=PAD)
    rng = np.random.default_rng(cfg.seed)
    epochs = cfg.lm_epochs if cfg.lm_epochs is not None else cfg.max_epochs
    history: list[float] = []
    best, stale = math.inf, 0
    usable = (targets != PAD).any(dim=1)
    if not bool(usable.any()):
        # single-token documents: nothing to predict
        return _lm_weights(lm, [])
    inputs, targets = inputs[usable], targets[usable]
    for epoch in range(1, epochs + 1):
        lm.train()
        order = rng.permutation(len(inputs))
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = torch.as_tensor(order[start : start + cfg.batch_size])
            logits = lm(inputs[idx])
            loss = loss_fn(logits.reshape(-1, logits.shape[-1]), targets[idx].reshape(-1))
            _check_finite(loss, epoch, cfg.learning_rate)
            opt.zero_grad()
            loss.backward()
            opt.step()
            n_tok = int((targets[idx] != PAD).sum())
            total += loss.item() * n_tok
            count += n_tok
        history.append(total / max(count, 1))
        if history[-1] < best - tol:
            best, stale = history[-1], 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return _lm_weights(lm, history)


def _lm_weights(lm: LanguageModel, history: list[float]) -> dict:
    return {
        "embedding": copy.deepcopy(lm.embedding.state_dict()),
        "lstm": copy.deepcopy(lm.lstm.state_dict()),
        "output": copy.deepcopy(lm.output.state_dict()),
        "history": history,
    }


def lm_next_token_accuracy(
    weights: dict, corpus: Sequence[Issue], vocab: Vocab, cfg: DeepSEConfig
) -> float:
    """Fraction of non-padding next tokens predicted correctly by ``pretrain_lm`` output."""
    lm = LanguageModel(len(vocab), cfg)
    lm.embedding.load_state_dict(weights["embedding"])
    lm.lstm.load_state_dict(weights["lstm"])
    lm.output.load_state_dict(weights["output"])
    lm.eval()
    tokens = _tensor(encode_many(corpus, vocab, cfg.max_tokens + 1))
    targets = tokens[:, 1:]
    with torch.no_grad():
        guess = lm(tokens[:, :-1]).argmax(dim=-1)
    mask = targets != PAD
    return float((guess[mask] == targets[mask]).float().mean()) if bool(mask.any()) else 0.0


# --------------------------------------------------------------------------- supervised training


def _issues_for(plan: SplitPlan, data: IssueDataset) -> tuple[list[Issue], list[Issue]]:
    train = data.subset(plan.train) + list(plan.extra_train)
    return train, data.subset(plan.validation)


def _mae_loss(net: DeepSE, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    return torch.mean(torch.abs(net(x) - y))


def train(
    split: SplitPlan,
    data: IssueDataset,
    cfg: DeepSEConfig = DeepSEConfig(),
    vocab: Optional[Vocab] = None,
    pretrained: Optional[dict] = None,
) -> TrainedModel:
    """Fit Deep-SE on a split of ``data`` (which ``split.train``/``validation`` index)."""
    train_issues, val_issues = _issues_for(split, data)
    return fit(train_issues, val_issues, cfg, vocab, pretrained)


def fit(
    train_issues: Sequence[Issue],
    val_issues: Sequence[Issue],
    cfg: DeepSEConfig = DeepSEConfig(),
    vocab: Optional[Vocab] = None,
    pretrained: Optional[dict] = None,
) -> TrainedModel:
    """Minimise training MAE, keeping the weights of the best validation epoch.

    Stops after ``cfg.patience`` epochs without validation improvement or at
    ``cfg.max_epochs``. With ``cfg.pretrain`` and no ``pretrained`` weights,
    the language model is first trained on the training issues.
    """
    train_issues, val_issues = list(train_issues), list(val_issues)
    if not train_issues:
        raise ValueError("empty training set")
    vocab = vocab or build_vocab(train_issues, cfg.vocab_size)
    if cfg.pretrain and pretrained is None:
        pretrained = pretrain_lm(train_issues, vocab, cfg)

    x_tr = _tensor(encode_many(train_issues, vocab, cfg.max_tokens))
    y_tr = torch.tensor([i.story_point for i in train_issues], dtype=torch.float32)
    if val_issues:
        x_va = _tensor(encode_many(val_issues, vocab, cfg.max_tokens))
        y_va = torch.tensor([i.story_point for i in val_issues], dtype=torch.float32)
    else:
        warnings.warn("empty validation set; early stopping monitors training loss")
        x_va, y_va = x_tr, y_tr

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        net = DeepSE(len(vocab), cfg)
    if pretrained is not None:
        net.embedding.load_state_dict(pretrained["embedding"])
        net.lstm.load_state_dict(pretrained["lstm"])

    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    stopper = EarlyStopping(cfg.patience)
    best_state = copy.deepcopy(net.state_dict())
    trace: list[EpochRecord] = []
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        net.train()
        order = rng.permutation(len(x_tr))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = torch.as_tensor(order[start : start + cfg.batch_size])
            loss = _mae_loss(net, x_tr[idx], y_tr[idx])
            _check_finite(loss, epoch, cfg.learning_rate)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        net.eval()
        with torch.no_grad():
            val_loss = float(_mae_loss(net, x_va, y_va))
        if not math.isfinite(val_loss):
            raise TrainingDivergedError(
                f"non-finite validation loss at epoch {epoch} "
                f"(learning_rate={cfg.learning_rate}); try a smaller learning rate"
            )
        trace.append(EpochRecord(epoch, total / len(x_tr), val_loss, time.perf_counter() - t0))
        stop = stopper.step(epoch, val_loss)
        if stopper.best_epoch == epoch:
            best_state = copy.deepcopy(net.state_dict())
        if stop:
            break
    return TrainedModel(cfg=cfg, vocab=vocab, state=best_state, trace=trace, best_epoch=stopper.best_epoch)


def predict_deepse(model: TrainedModel, vocab: Optional[Vocab], test: Sequence[Issue]) -> PredictionSet:
    """Raw regressor outputs clamped at zero (no rounding to card values)."""
    vocab = vocab or model.vocab
    if test:
        net = model.build()
        with torch.no_grad():
            raw = net(_tensor(encode_many(test, vocab, model.cfg.max_tokens)))
        preds = torch.clamp(raw, min=0.0).double().tolist()
    else:
        preds = []
    return PredictionSet.from_pairs(
        (i.issue_key for i in test), (i.story_point for i in test), preds
    )


# --------------------------------------------------------------------------- persistence


def save_checkpoint(model: TrainedModel, path: str | Path) -> None:
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": model.cfg.to_dict(),
            "vocab": model.vocab.to_dict(),
            "state": model.state,
            "trace": [vars(r) for r in model.trace],
            "best_epoch": model.best_epoch,
        },
        Path(path),
    )


def load_checkpoint(path: str | Path) -> TrainedModel:
    blob = torch.load(Path(path), weights_only=True)
    if blob.get("format") != CHECKPOINT_FORMAT or blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION} checkpoint")
    return TrainedModel(
        cfg=DeepSEConfig(**blob["config"]),
        vocab=Vocab.from_dict(blob["vocab"]),
        state=blob["state"],
        trace=[EpochRecord(**r) for r in blob["trace"]],
        best_epoch=blob["best_epoch"],
    )


def write_trace_csv(model: TrainedModel, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "seconds"])
        for r in model.trace:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), f"{r.seconds:.4f}"])
