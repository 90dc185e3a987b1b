"""Training losses: routed prediction, cross-entropy, FLOPs hinge, totals."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.5
    alpha: float = 0.5
    costs: tuple[float, ...] = ()

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.costs:
            c = np.asarray(self.costs)
            if (c <= 0).any() or (c > 1).any() or not np.isclose(c.max(), 1.0):
                raise ValueError(f"normalized costs must lie in (0, 1] with max 1, got {self.costs}")


def weighted_prediction(weights: Tensor, logits: Sequence[Tensor]) -> Tensor:
    """sum_i w[:, i] * f_i for routing weights (B, K) and K logits of shape (B, m)."""
    if weights.shape[-1] != len(logits):
        raise T.ShapeError(f"{weights.shape[-1]} routing weights for {len(logits)} tails")
    shape = logits[0].shape
    for f in logits:
        if f.shape != shape:
            raise T.ShapeError(f"tail logits disagree in shape: {shape} vs {f.shape}")
    out = None
    for i, f in enumerate(logits):
        term = weights[..., i : i + 1] * f
        out = term if out is None else out + term
    return out


def classification_loss(logits: Tensor, labels) -> Tensor:
    return T.cross_entropy(logits, labels)


def flops_regularization(weights: Tensor, costs, alpha: float) -> Tensor:
    """Batch mean of max(alpha, sum_i w_i c_i) - alpha.

    With straight-through weights the value uses the hard choice while the
    gradient reaches the soft relaxation; it is exactly zero, with zero
    gradient, wherever the selected cost is <= alpha.
    """
    c = Tensor(np.asarray(costs, dtype=weights.dtype).reshape(-1, 1))
    if c.shape[0] != weights.shape[-1]:
        raise T.ShapeError(f"{c.shape[0]} costs for {weights.shape[-1]} tails")
    w = weights if weights.ndim == 2 else weights.reshape(1, -1)
    selected = T.matmul(w, c).reshape(-1)
    return (T.clamp_min(selected, alpha) - alpha).mean()


def total_loss(cls_loss: Tensor, flops_loss: Tensor, lam: float) -> Tensor:
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    return cls_loss + flops_loss * lam


def pretrain_loss(logits: Sequence[Tensor], labels) -> Tensor:
    """Sum of per-tail cross-entropies, so every tail gets gradient."""
    if not logits:
        raise ValueError("need at least one tail")
    out = None
    for f in logits:
        ce = T.cross_entropy(f, labels)
        out = ce if out is None else out + ce
    return out
