"""Synthetic HML datasets with controlled missing information.

Ground truth per category comes from a root-down walk: the root is always
on and each child of an active node switches on with ``branch_prob``; an
active internal node that drew no child gets one picked uniformly, so
every ground-truth path ends at a leaf (full precision).
Features are one indicator column per node (all categories, in order)
plus Gaussian noise, followed by pure-noise distractor columns. Observed
annotations degrade the ground truth in two ways:

* missing precision: each component path is cut back, with probability
  ``missing_precision_rate``, to a uniformly drawn shallower node, and
  everything below that node is dropped;
* missing category: each (sample, category) is dropped with probability
  ``missing_category_rate``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .annotations import AnnotationSet, annotations_from_matrices, component_paths
from .errors import HMLError
from .hierarchy import Hierarchy
from .rng import stream

DISTRACTOR_FRACTION = 0.25


@dataclass
class GenConfig:
    n_samples: int = 5000
    noise_sigma: float = 0.1
    branch_prob: float = 0.35
    missing_precision_rate: float = 0.3
    missing_category_rate: float = 0.2
    feature_dim: int | None = None
    seed: int = 0
    hierarchies: list[str] = field(default_factory=lambda: ["substrate", "relief", "bedforms"])


@dataclass
class SyntheticDataset:
    sample_ids: list[str]
    features: np.ndarray
    annotations: list[AnnotationSet]
    ground_truth: list[AnnotationSet]
    truth_bits: dict[str, np.ndarray]


def default_feature_dim(n_nodes: int) -> int:
    return math.ceil(n_nodes / (1.0 - DISTRACTOR_FRACTION))


def _walk(h: Hierarchy, branch_prob: float, rng: np.random.Generator) -> np.ndarray:
    bits = np.zeros(h.n, dtype=bool)
    draws = rng.random(h.n)
    picks = rng.random(h.n)
    bits[0] = True
    for v in range(h.n):
        kids = h.children[v]
        if not bits[v] or not kids:
            continue
        chosen = [c for c in kids if draws[c] < branch_prob]
        if not chosen:
            chosen = [kids[int(picks[v] * len(kids))]]
        bits[chosen] = True
    return bits


def _truncate(h: Hierarchy, truth: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    observed = truth.copy()
    for path in component_paths(h, truth):
        depth = len(path) - 1
        cut = rng.random()
        if depth > 0 and cut < rate:
            # Cutting at v drops v's whole subtree, including any sibling
            # paths that share v, so v ends up terminal and its mask covers
            # everything removed.
            v = path[int(rng.integers(0, depth))]
            observed[v + 1 : v + int(h.subtree_sizes[v])] = False
    return observed


def generate_dataset(
    hierarchies: Sequence[Hierarchy],
    n_samples: int,
    noise_sigma: float = 0.1,
    branch_prob: float = 0.35,
    missing_precision_rate: float = 0.3,
    missing_category_rate: float = 0.2,
    feature_dim: int | None = None,
    seed: int = 0,
) -> SyntheticDataset:
    for name, rate in (
        ("branch_prob", branch_prob),
        ("missing_precision_rate", missing_precision_rate),
        ("missing_category_rate", missing_category_rate),
    ):
        if not 0.0 <= rate <= 1.0:
            raise HMLError("invalid-rate", f"{name} must lie in [0, 1], got {rate}", field=name)
    if noise_sigma < 0:
        raise HMLError("invalid-rate", f"noise_sigma must be >= 0, got {noise_sigma}", field="noise_sigma")
    n_nodes = sum(h.n for h in hierarchies)
    if feature_dim is None:
        feature_dim = default_feature_dim(n_nodes)
    if feature_dim < n_nodes:
        raise HMLError("dim-too-small", f"feature_dim {feature_dim} < total node count {n_nodes}", field="feature_dim")

    width = len(str(max(n_samples - 1, 0)))
    ids = [f"s{b:0{width}d}" for b in range(n_samples)]
    features = np.zeros((n_samples, feature_dim))
    truth = {h.category_name: np.zeros((n_samples, h.n), dtype=bool) for h in hierarchies}
    observed = {h.category_name: np.zeros((n_samples, h.n), dtype=bool) for h in hierarchies}
    present = {h.category_name: np.ones(n_samples, dtype=bool) for h in hierarchies}

    for b in range(n_samples):
        # One stream per sample keeps rows independent of generation order.
        rng = stream(seed, "data", b)
        cols = []
        for h in hierarchies:
            name = h.category_name
            gt = _walk(h, branch_prob, rng)
            truth[name][b] = gt
            observed[name][b] = _truncate(h, gt, missing_precision_rate, rng)
            present[name][b] = not rng.random() < missing_category_rate
            cols.append(gt)
        features[b, :n_nodes] = np.concatenate(cols)
        features[b] += noise_sigma * rng.standard_normal(feature_dim)

    all_present = {name: np.ones(n_samples, dtype=bool) for name in truth}
    return SyntheticDataset(
        ids,
        features,
        annotations_from_matrices(ids, hierarchies, observed, present),
        annotations_from_matrices(ids, hierarchies, truth, all_present),
        truth,
    )


def split_indices(n: int, seed: int, fractions: tuple[float, float, float] = (0.60, 0.08, 0.32)) -> dict[str, np.ndarray]:
    """Seeded train/val/test partition of ``range(n)``, each part sorted."""
    perm = stream(seed, "split").permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return {
        "train": np.sort(perm[:n_train]),
        "val": np.sort(perm[n_train : n_train + n_val]),
        "test": np.sort(perm[n_train + n_val :]),
    }
