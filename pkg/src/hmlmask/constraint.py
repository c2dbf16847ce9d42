"""Max-constraint on model outputs and 0.5 binarisation.

``constrain`` replaces each node's score by the maximum over its subtree.
This equals the row-wise max of the descendant matrix filtered output, but
is computed with one reverse pre-order pass instead of an (n, n) product.
Max is exact, so both routes agree bit for bit.
"""

from __future__ import annotations

import numpy as np

from .errors import HMLError
from .hierarchy import Hierarchy


def _check_width(h: Hierarchy, x: np.ndarray) -> None:
    if x.ndim == 0 or x.shape[-1] != h.n:
        raise HMLError(
            "dimension-mismatch",
            f"expected last axis of size {h.n} for {h.category_name!r}, got shape {x.shape}",
            field=h.category_name,
        )


def constrain(h: Hierarchy, scores: np.ndarray) -> np.ndarray:
    """Subtree max of ``scores`` (shape ``(..., n)``); logits or probabilities."""
    out = np.array(scores, dtype=float, copy=True)
    _check_width(h, out)
    par = h.parents
    for i in range(h.n - 1, 0, -1):
        np.maximum(out[..., par[i]], out[..., i], out=out[..., par[i]])
    return out


def subtree_argmax(h: Hierarchy, scores: np.ndarray, allowed: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Subtree max and the index achieving it, over a (B, n) array.

    Only entries where ``allowed`` is true compete; a node whose subtree has
    no allowed entry gets value ``-inf`` and index -1. Ties go to the lowest
    node index.
    """
    x = np.asarray(scores, dtype=float)
    _check_width(h, x)
    val = x.copy() if allowed is None else np.where(allowed, x, -np.inf)
    idx = np.broadcast_to(np.arange(h.n), x.shape).copy()
    if allowed is not None:
        idx[~np.asarray(allowed, dtype=bool)] = -1
    par = h.parents
    # Reverse pre-order: a child's subtree is complete before it is merged.
    for i in range(h.n - 1, 0, -1):
        p = par[i]
        vi, vp, ii, ip = val[..., i], val[..., p], idx[..., i], idx[..., p]
        better = (vi > vp) | ((vi == vp) & (ii >= 0) & ((ip < 0) | (ii < ip)))
        val[..., p] = np.where(better, vi, vp)
        idx[..., p] = np.where(better, ii, ip)
    return val, idx


def binarize(probs: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Bit ``i`` is on iff ``probs[i] > threshold`` (strict)."""
    p = np.asarray(probs, dtype=float)
    if np.any(~((p >= 0.0) & (p <= 1.0))):
        raise HMLError("out-of-range-prob", "probabilities must lie in [0, 1]")
    return p > threshold


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ez = np.exp(x[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def predict_bits(h: Hierarchy, probs: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Constrain then binarize raw probabilities."""
    return binarize(constrain(h, probs), threshold)
