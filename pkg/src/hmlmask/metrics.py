"""Mask-aware evaluation: micro AP, HML AP, Singular F1, per-node P/R/F1.

All functions take constrained, binarized predictions and ignore masked
bits entirely. Undefined scores (no positive support) are ``nan`` and are
left out of every macro average.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .annotations import component_paths
from .errors import HMLError
from .hierarchy import Hierarchy

SCHEMA_VERSION = 1

UNDEFINED = float("nan")


def micro_ap(pred: np.ndarray, targets: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Average precision ``sum_n (R_n - R_{n-1}) P_n`` over pooled unmasked bits.

    Thresholds sit at the unique score values, highest first, so binary
    predictions give two operating points. Returns ``nan`` when no unmasked
    target is positive.
    """
    s = np.asarray(pred, dtype=float)
    t = np.asarray(targets, dtype=bool)
    if s.shape != t.shape:
        raise HMLError("shape-mismatch", f"predictions {s.shape} vs targets {t.shape}")
    if mask is not None:
        keep = ~np.asarray(mask, dtype=bool)
        s, t = s[keep], t[keep]
    s, t = s.ravel(), t.ravel()
    n_pos = int(t.sum())
    if n_pos == 0:
        return UNDEFINED
    order = np.argsort(-s, kind="stable")
    s, t = s[order], t[order]
    last = np.r_[np.flatnonzero(s[1:] != s[:-1]), s.size - 1]
    tp = np.cumsum(t)[last]
    predicted = last + 1
    precision = tp / predicted
    recall = tp / n_pos
    prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev) * precision))


def _present(mask: np.ndarray) -> np.ndarray:
    return ~np.all(mask, axis=1)


def _check(h: Hierarchy, pred, targets, mask):
    p = np.asarray(pred, dtype=bool)
    t = np.asarray(targets, dtype=bool)
    m = np.asarray(mask, dtype=bool)
    if p.ndim != 2 or p.shape[1] != h.n or t.shape != p.shape or m.shape != p.shape:
        raise HMLError(
            "shape-mismatch", f"pred {p.shape}, targets {t.shape}, mask {m.shape}; expected (B, {h.n})", field=h.category_name
        )
    return p, t, m


def _mean(values) -> float:
    vals = [v for v in values if not math.isnan(v)]
    if not vals:
        return UNDEFINED
    total = 0.0
    for v in vals:
        total += v
    return total / len(vals)


def hml_ap(h: Hierarchy, pred: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> tuple[float, dict[int, float]]:
    """AP per unique annotation, macro-averaged within depth then across depths.

    An annotation's depth is the deepest of its positive nodes. Samples with
    the category absent are skipped.
    """
    p, t, m = _check(h, pred, targets, mask)
    rows = np.flatnonzero(_present(m))
    if rows.size == 0:
        raise HMLError("empty-input", f"no annotated samples for {h.category_name!r}", field=h.category_name)
    groups: dict[bytes, list[int]] = {}
    for r in rows:
        groups.setdefault(np.packbits(t[r]).tobytes(), []).append(int(r))
    by_depth: dict[int, list[float]] = {}
    for key in sorted(groups):
        idx = groups[key]
        depth = int(h.depths[t[idx[0]]].max())
        by_depth.setdefault(depth, []).append(micro_ap(p[idx], t[idx], m[idx]))
    per_depth = {d: _mean(by_depth[d]) for d in sorted(by_depth)}
    return _mean(per_depth.values()), per_depth


@dataclass(frozen=True)
class PathScore:
    path: tuple[int, ...]
    depth: int
    tp: int
    fp: int
    fn: int

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if denom else UNDEFINED


def path_scores(h: Hierarchy, pred: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> list[PathScore]:
    """Sample-level confusion counts for every component path seen in ``targets``.

    A sample has path ``p`` if its targets include the path's end node, and
    predicts ``p`` if every node of ``p`` is predicted. Samples where the end
    node is masked are not evaluated for ``p``.
    """
    p, t, m = _check(h, pred, targets, mask)
    rows = np.flatnonzero(_present(m))
    seen: set[tuple[int, ...]] = set()
    for r in rows:
        seen.update(component_paths(h, t[r]))
    out = []
    for path in sorted(seen, key=lambda q: (q[-1], q)):
        end = path[-1]
        live = rows[~m[rows, end]]
        truth = t[live, end]
        hit = np.all(p[np.ix_(live, list(path))], axis=1)
        out.append(
            PathScore(
                path,
                int(h.depths[end]),
                int(np.sum(truth & hit)),
                int(np.sum(~truth & hit)),
                int(np.sum(truth & ~hit)),
            )
        )
    return out


def singular_f1(h: Hierarchy, pred: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> tuple[float, dict[int, float]]:
    """Per-component-path F1, macro-averaged within depth then across depths."""
    _, _, m = _check(h, pred, targets, mask)
    if not _present(m).any():
        raise HMLError("empty-input", f"no annotated samples for {h.category_name!r}", field=h.category_name)
    by_depth: dict[int, list[float]] = {}
    for ps in path_scores(h, pred, targets, mask):
        by_depth.setdefault(ps.depth, []).append(ps.f1)
    per_depth = {d: _mean(by_depth[d]) for d in sorted(by_depth)}
    return _mean(per_depth.values()), per_depth


@dataclass(frozen=True)
class NodeScore:
    category: str
    index: int
    name: str
    depth: int
    tp: int
    fp: int
    fn: int
    evaluated: int
    support_fraction: float

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else UNDEFINED

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else UNDEFINED

    @property
    def f1(self) -> float:
        d = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / d if d else UNDEFINED

    @property
    def support(self) -> int:
        return self.tp + self.fn


def per_node_prf(h: Hierarchy, pred: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> list[NodeScore]:
    """Precision/recall/F1 per node over its unmasked samples.

    ``support_fraction`` is the share of samples annotated for this category
    that contain a positive instance of the node.
    """
    p, t, m = _check(h, pred, targets, mask)
    live = ~m
    n_present = int(_present(m).sum())
    tp = np.sum(p & t & live, axis=0)
    fp = np.sum(p & ~t & live, axis=0)
    fn = np.sum(~p & t & live, axis=0)
    ev = np.sum(live, axis=0)
    out = []
    for i, node in enumerate(h.nodes):
        frac = float(tp[i] + fn[i]) / n_present if n_present else UNDEFINED
        out.append(NodeScore(h.category_name, i, node.name, node.depth, int(tp[i]), int(fp[i]), int(fn[i]), int(ev[i]), frac))
    return out


def _num(x: float):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


@dataclass
class CategoryReport:
    ap: float
    hml_ap: float
    singular_f1: float
    hml_ap_per_depth: dict[int, float]
    singular_f1_per_depth: dict[int, float]

    def to_dict(self) -> dict:
        depths = sorted(set(self.hml_ap_per_depth) | set(self.singular_f1_per_depth))
        return {
            "ap": _num(self.ap),
            "hml_ap": _num(self.hml_ap),
            "singular_f1": _num(self.singular_f1),
            "per_depth": {
                str(d): {
                    "hml_ap": _num(self.hml_ap_per_depth.get(d, UNDEFINED)),
                    "singular_f1": _num(self.singular_f1_per_depth.get(d, UNDEFINED)),
                }
                for d in depths
            },
        }


@dataclass
class MetricsReport:
    ap: float
    hml_ap: float
    singular_f1: float
    per_category: dict[str, CategoryReport]
    per_node: list[NodeScore] = field(default_factory=list)

    @property
    def per_depth(self) -> dict[int, tuple[float, float]]:
        """Depth -> (HML AP, Singular F1), each averaged over categories."""
        depths = sorted({d for c in self.per_category.values() for d in (*c.hml_ap_per_depth, *c.singular_f1_per_depth)})
        return {
            d: (
                _mean(c.hml_ap_per_depth.get(d, UNDEFINED) for c in self.per_category.values()),
                _mean(c.singular_f1_per_depth.get(d, UNDEFINED) for c in self.per_category.values()),
            )
            for d in depths
        }

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "ap": _num(self.ap),
            "hml_ap": _num(self.hml_ap),
            "singular_f1": _num(self.singular_f1),
            "per_depth": {str(d): {"hml_ap": _num(a), "singular_f1": _num(f)} for d, (a, f) in self.per_depth.items()},
            "per_category": {name: c.to_dict() for name, c in self.per_category.items()},
            "per_node": [
                {
                    "category": s.category,
                    "index": s.index,
                    "name": s.name,
                    "depth": s.depth,
                    "precision": _num(s.precision),
                    "recall": _num(s.recall),
                    "f1": _num(s.f1),
                    "support_fraction": _num(s.support_fraction),
                    "tp": s.tp,
                    "fp": s.fp,
                    "fn": s.fn,
                    "evaluated": s.evaluated,
                }
                for s in self.per_node
            ],
        }


def evaluate(
    hierarchies: Sequence[Hierarchy],
    pred: Mapping[str, np.ndarray],
    targets: Mapping[str, np.ndarray],
    mask: Mapping[str, np.ndarray],
) -> MetricsReport:
    """Full report over several categories.

    Overall AP pools the unmasked bits of every category; HML AP and
    Singular F1 are computed per category and then averaged.
    """
    cats: dict[str, CategoryReport] = {}
    nodes: list[NodeScore] = []
    pooled_p, pooled_t = [], []
    for h in hierarchies:
        name = h.category_name
        p, t, m = _check(h, pred[name], targets[name], mask[name])
        pooled_p.append(p[~m])
        pooled_t.append(t[~m])
        if _present(m).any():
            ha, ha_d = hml_ap(h, p, t, m)
            sf, sf_d = singular_f1(h, p, t, m)
        else:
            ha, ha_d, sf, sf_d = UNDEFINED, {}, UNDEFINED, {}
        cats[name] = CategoryReport(micro_ap(p, t, m), ha, sf, ha_d, sf_d)
        nodes.extend(per_node_prf(h, p, t, m))
    ap = micro_ap(np.concatenate(pooled_p), np.concatenate(pooled_t))
    return MetricsReport(
        ap,
        _mean(c.hml_ap for c in cats.values()),
        _mean(c.singular_f1 for c in cats.values()),
        cats,
        nodes,
    )


def depth_f1_profile(nodes: Sequence[NodeScore], weighted: bool = True) -> dict[int, float]:
    """Per-depth F1 over nodes with a defined score, optionally support-weighted."""
    acc: dict[int, list[tuple[float, int]]] = {}
    for s in nodes:
        if math.isnan(s.f1) or (weighted and s.support == 0):
            continue
        acc.setdefault(s.depth, []).append((s.f1, s.support))
    out = {}
    for d in sorted(acc):
        if weighted:
            w = sum(sup for _, sup in acc[d])
            out[d] = sum(f * sup for f, sup in acc[d]) / w
        else:
            out[d] = _mean(f for f, _ in acc[d])
    return out
