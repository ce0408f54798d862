from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from ..corpus import Issue

PAD = 0
OOV = 1

# words and single punctuation marks; nothing is stripped from the raw text
_TOKEN = re.compile(r"[^\W_]+|[^\w\s]|_", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def issue_tokens(issue: Issue) -> list[str]:
    return tokenize(f"{issue.title} {issue.description}")


@dataclass(frozen=True)
class Vocab:
    index: dict[str, int]
    max_size: int

    def __len__(self) -> int:
        return len(self.index) + 2

    def lookup(self, token: str) -> int:
        return self.index.get(token, OOV)

    def to_dict(self) -> dict:
        return {"index": self.index, "max_size": self.max_size}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        return cls(dict(d["index"]), int(d["max_size"]))


def build_vocab(train: Sequence[Issue], max_size: int = 5000) -> Vocab:
    """Frequency-ranked vocabulary; ties fall back to alphabetical order."""
    if not train:
        raise ValueError("vocabulary needs at least one training issue")
    if max_size < 2:
        raise ValueError("max_size must leave room for padding and OOV")
    counts = Counter(tok for issue in train for tok in issue_tokens(issue))
    ranked = sorted(counts, key=lambda t: (-counts[t], t))[: max_size - 2]
    return Vocab({tok: k + 2 for k, tok in enumerate(ranked)}, max_size)


def encode(issue: Issue, vocab: Vocab, max_tokens: int = 100) -> list[int]:
    ids = [vocab.lookup(t) for t in issue_tokens(issue)[:max_tokens]]
    return ids + [PAD] * (max_tokens - len(ids))


def encode_many(issues: Iterable[Issue], vocab: Vocab, max_tokens: int = 100) -> list[list[int]]:
    return [encode(i, vocab, max_tokens) for i in issues]
