"""Embedding -> LSTM document encoder -> recurrent highway network -> regressor."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import torch
from torch import nn


@dataclass(frozen=True)
class DeepSEConfig:
    embed_dim: int = 50
    lstm_dim: int = 100
    rhwn_layers: int = 2
    rhwn_steps: int = 10
    max_tokens: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    pretrain: bool = False
    vocab_size: int = 5000
    # language-model epochs; None reuses max_epochs
    lm_epochs: Optional[int] = None
    transform_bias: float = -1.0

    def to_dict(self) -> dict:
        return asdict(self)


class RecurrentHighway(nn.Module):
    """Stack of highway layers, each applied ``steps`` times with tied weights.

    One step computes ``t * tanh(W_h x) + (1 - t) * x`` with transform gate
    ``t = sigmoid(W_t x)``; the carry gate is ``1 - t``.
    """

    def __init__(self, dim: int, layers: int, steps: int, transform_bias: float = -1.0):
        super().__init__()
        self.steps = steps
        self.hidden = nn.ModuleList(nn.Linear(dim, dim) for _ in range(layers))
        self.gate = nn.ModuleList(nn.Linear(dim, dim) for _ in range(layers))
        for g in self.gate:
            nn.init.constant_(g.bias, transform_bias)

    def forward(self, x: torch.Tensor, transform_gate: Optional[float] = None) -> torch.Tensor:
        for h_lin, t_lin in zip(self.hidden, self.gate):
            for _ in range(self.steps):
                if transform_gate is None:
                    t = torch.sigmoid(t_lin(x))
                else:
                    t = torch.full_like(x, transform_gate)
                x = t * torch.tanh(h_lin(x)) + (1 - t) * x
        return x


class DeepSE(nn.Module):
    def __init__(self, vocab_size: int, cfg: DeepSEConfig):
        super().__init__()
        self.embedding = nn.Embedding(vocab_size, cfg.embed_dim, padding_idx=0)
        self.lstm = nn.LSTM(cfg.embed_dim, cfg.lstm_dim, batch_first=True)
        self.highway = RecurrentHighway(cfg.lstm_dim, cfg.rhwn_layers, cfg.rhwn_steps, cfg.transform_bias)
        self.regressor = nn.Linear(cfg.lstm_dim, 1)

    def document_vector(self, tokens: torch.Tensor) -> torch.Tensor:
        """Mean of LSTM outputs over non-padding positions (zeros for empty docs)."""
        mask = (tokens != 0).unsqueeze(-1).to(self.embedding.weight.dtype)
        out, _ = self.lstm(self.embedding(tokens))
        lengths = mask.sum(dim=1).clamp(min=1.0)
        return (out * mask).sum(dim=1) / lengths

    def forward(self, tokens: torch.Tensor, transform_gate: Optional[float] = None) -> torch.Tensor:
        doc = self.document_vector(tokens)
        return self.regressor(self.highway(doc, transform_gate)).squeeze(-1)


class LanguageModel(nn.Module):
    """Next-token predictor sharing the embedding and LSTM shapes of DeepSE."""

    def __init__(self, vocab_size: int, cfg: DeepSEConfig):
        super().__init__()
        self.embedding = nn.Embedding(vocab_size, cfg.embed_dim, padding_idx=0)
        self.lstm = nn.LSTM(cfg.embed_dim, cfg.lstm_dim, batch_first=True)
        self.output = nn.Linear(cfg.lstm_dim, vocab_size)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        out, _ = self.lstm(self.embedding(tokens))
        return self.output(out)
