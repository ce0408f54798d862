from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
import torch

from .model import DeepSE, DeepSEConfig


def gradient_check(
    cfg: DeepSEConfig,
    tokens: Sequence[Sequence[int]],
    targets: Optional[Sequence[float]] = None,
    vocab_size: Optional[int] = None,
    n_params: int = 5,
    eps: float = 1e-5,
    seed: int = 0,
    margin: float = 1.0,
    min_grad: float = 1e-6,
) -> float:
    """Max relative error between autograd and central finite differences.

    Runs in float64 on a randomly initialised model. Without ``targets`` each
    target sits ``margin`` away from the current prediction, keeping the MAE
    loss away from its kinks; explicit targets closer than ``margin`` are
    rejected. Parameters are sampled among entries whose gradient exceeds
    ``min_grad``: below that, central-difference round-off (about machine
    epsilon / ``eps``) swamps the relative error.
    """
    x = torch.as_tensor(np.asarray(tokens, dtype=np.int64))
    vocab_size = vocab_size or int(x.max()) + 1
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = DeepSE(vocab_size, cfg).double()
    with torch.no_grad():
        pred = net(x)
    if targets is None:
        signs = torch.where(torch.arange(len(pred)) % 2 == 0, 1.0, -1.0).double()
        y = pred + margin * signs
    else:
        y = torch.as_tensor(np.asarray(targets, float))
        if bool((torch.abs(pred - y) < margin).any()):
            raise ValueError("a target lies within `margin` of its prediction (MAE kink)")

    def loss_value() -> torch.Tensor:
        return torch.mean(torch.abs(net(x) - y))

    net.zero_grad()
    loss_value().backward()
    candidates = [
        (name, p, idx)
        for name, p in net.named_parameters()
        for idx in torch.nonzero(p.grad.abs() > min_grad, as_tuple=False).tolist()
    ]
    if not candidates:
        raise ValueError(f"no gradient above {min_grad}; nothing to check")
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(candidates), size=min(n_params, len(candidates)), replace=False)
    worst = 0.0
    with torch.no_grad():
        for k in picks:
            _, p, idx = candidates[k]
            idx = tuple(idx)
            analytic = float(p.grad[idx])
            orig = float(p[idx])
            p[idx] = orig + eps
            up = float(loss_value())
            p[idx] = orig - eps
            down = float(loss_value())
            p[idx] = orig
            numeric = (up - down) / (2 * eps)
            denom = max(abs(analytic), abs(numeric))
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst
