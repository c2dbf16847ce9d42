"""Masked max-constraint loss (MCLoss) and its gradient.

Per unmasked bit ``(b, i)``:

* target 1: ``-log max_{j in subtree(i), target[b, j] = 1} p[b, j]``
* target 0: ``-log(1 - max_{j in subtree(i)} p[b, j])``

A head's loss is the sum over unmasked bits divided by their count; the
batch loss is the mean over heads that have at least one unmasked bit.
Gradients flow only to the element that wins each max (lowest index on
ties).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .constraint import sigmoid, subtree_argmax
from .errors import HMLError
from .hierarchy import Hierarchy

EPS = 1e-7


@dataclass(frozen=True)
class HeadLoss:
    loss: float
    contributing_bits: int
    name: str = ""


@dataclass(frozen=True)
class LossReport:
    total: float
    per_head: tuple[HeadLoss, ...]
    contributing_heads: int
    skip: bool = False
    weights: tuple[float, ...] = field(default=(), repr=False)


def _validate(h: Hierarchy, x: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(targets, dtype=bool)
    m = np.asarray(mask, dtype=bool)
    if x.ndim != 2 or x.shape[1] != h.n or t.shape != x.shape or m.shape != x.shape:
        raise HMLError(
            "shape-mismatch",
            f"scores {x.shape}, targets {t.shape}, mask {m.shape}; expected (B, {h.n})",
            field=h.category_name,
        )
    if np.any(t & m):
        raise HMLError("mask-target-overlap", "mask and targets overlap (masked bits must carry no target)", field=h.category_name)
    return t, m


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def mc_loss(probs: np.ndarray, targets: np.ndarray, mask: np.ndarray, h: Hierarchy) -> tuple[float, np.ndarray]:
    """Head loss from sigmoid outputs, plus the (B, n) per-bit terms.

    Probabilities are clamped to ``[EPS, 1 - EPS]`` before the logs. Masked
    bits hold exactly 0 in the returned term matrix.
    """
    p = np.asarray(probs, dtype=float)
    t, m = _validate(h, p, targets, mask)
    if np.any(~((p >= 0.0) & (p <= 1.0))):
        raise HMLError("probability-out-of-range", "probabilities must lie in [0, 1]", field=h.category_name)
    pos_max, _ = subtree_argmax(h, p, allowed=t)
    any_max, _ = subtree_argmax(h, p)
    pos_term = -np.log(np.clip(pos_max, EPS, 1.0 - EPS))
    neg_term = -np.log(1.0 - np.clip(any_max, EPS, 1.0 - EPS))
    terms = np.where(t, pos_term, neg_term)
    terms[m] = 0.0
    count = int((~m).sum())
    loss = float(terms.sum() / count) if count else 0.0
    return loss, terms


def mc_loss_logits(logits: np.ndarray, targets: np.ndarray, mask: np.ndarray, h: Hierarchy) -> tuple[float, np.ndarray, int]:
    """Head loss and its gradient w.r.t. logits, via stable log-sigmoid.

    Returns ``(loss, grad, contributing_bits)``. With no unmasked bit the
    loss is 0 and the gradient is all zeros.
    """
    x = np.asarray(logits, dtype=float)
    t, m = _validate(h, x, targets, mask)
    live = ~m
    count = int(live.sum())
    grad = np.zeros_like(x)
    if count == 0:
        return 0.0, grad, 0

    _, pos_win = subtree_argmax(h, x, allowed=t)
    _, neg_win = subtree_argmax(h, x)
    win = np.where(t, pos_win, neg_win)
    rows = np.broadcast_to(np.arange(x.shape[0])[:, None], x.shape)
    # Every bit has a winner: a positive bit allows at least itself.
    xw = x[rows, win]
    terms = np.where(t, _softplus(-xw), _softplus(xw))
    terms[m] = 0.0
    loss = float(terms.sum() / count)

    dw = (sigmoid(xw) - t) / count
    np.add.at(grad, (rows[live], win[live]), dw[live])
    return loss, grad, count


def mc_loss_grad(logits: np.ndarray, targets: np.ndarray, mask: np.ndarray, h: Hierarchy) -> np.ndarray:
    """Gradient of the head loss with respect to the logits."""
    return mc_loss_logits(logits, targets, mask, h)[1]


def batch_loss(heads: Sequence[HeadLoss] | Mapping[str, HeadLoss], reduction: str = "mean") -> LossReport:
    """Aggregate head losses over heads that have contributing bits.

    ``weights`` holds the factor each head's gradient must be scaled by to
    obtain the gradient of ``total``.
    """
    items = tuple(heads.values()) if isinstance(heads, Mapping) else tuple(heads)
    live = [hl for hl in items if hl.contributing_bits > 0]
    if not live:
        return LossReport(0.0, items, 0, skip=True, weights=tuple(0.0 for _ in items))
    if reduction == "mean":
        scale = 1.0 / len(live)
    elif reduction == "sum":
        scale = 1.0
    else:
        raise HMLError("invalid-reduction", f"reduction must be 'mean' or 'sum', got {reduction!r}")
    total = 0.0
    for hl in live:
        total += hl.loss
    if reduction == "mean":
        total /= len(live)
    weights = tuple(scale if hl.contributing_bits > 0 else 0.0 for hl in items)
    return LossReport(total, items, len(live), weights=weights)
