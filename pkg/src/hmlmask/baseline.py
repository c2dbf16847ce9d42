"""Random-prediction baseline and valid-annotation counting.

A random prediction switches each bit on independently with probability
``p`` and then applies the hierarchy constraint, so a node fires whenever
anything in its subtree fires: ``P(on) = 1 - (1 - p) ** subtree_size``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import HMLError
from .hierarchy import Hierarchy, close_bits
from .metrics import evaluate
from .rng import stream

BRUTE_FORCE_LIMIT = 24


def count_valid_annotations(h: Hierarchy) -> int:
    """Number of ancestor-closed node subsets, the null label included.

    ``f(v) = 1 + prod(f(c) for c in children(v))``: either ``v`` is off (and
    so is its whole subtree) or it is on and each child subtree is chosen
    independently.
    """
    f = [1] * h.n
    for v in range(h.n - 1, -1, -1):
        prod = 1
        for c in h.children[v]:
            prod *= f[c]
        f[v] = 1 + prod
    return f[h.root_index]


def brute_force_count(h: Hierarchy, chunk: int = 1 << 20) -> int:
    """Enumerate all ``2**n`` bit-strings, close each, count distinct results."""
    n = h.n
    if n > BRUTE_FORCE_LIMIT:
        raise HMLError("hierarchy-too-large", f"brute force limited to n <= {BRUTE_FORCE_LIMIT}, got {n}")
    anc = np.zeros(n, dtype=np.uint32)
    for i in range(n):
        j = i
        while j >= 0:
            anc[i] |= np.uint32(1) << np.uint32(j)
            j = int(h.parents[j])
    total = 1 << n
    seen = np.zeros(total, dtype=bool)
    for start in range(0, total, chunk):
        x = np.arange(start, min(total, start + chunk), dtype=np.uint32)
        closed = np.zeros_like(x)
        for i in range(n):
            on = (x >> np.uint32(i)) & np.uint32(1)
            closed |= on * anc[i]
        seen[closed] = True
    return int(seen.sum())


def valid_label_cardinality_bound(n: int) -> tuple[int, int]:
    """Inclusive ``(n + 1, 2**n)`` bounds on the valid-annotation count of any ``n``-node tree."""
    if n < 1:
        raise HMLError("invalid-size", f"n must be >= 1, got {n}")
    return n + 1, 2**n


def activation_probability(h: Hierarchy, p: float = 0.5) -> np.ndarray:
    return 1.0 - (1.0 - p) ** h.subtree_sizes.astype(float)


def sample_random_prediction(h: Hierarchy, p: float = 0.5, rng: np.random.Generator | None = None, size: int | None = None) -> np.ndarray:
    """Bernoulli(p) bits pushed through the constraint; ``(n,)`` or ``(size, n)``."""
    if not 0.0 < p < 1.0:
        raise HMLError("invalid-probability", f"p must lie in (0, 1), got {p}")
    rng = rng if rng is not None else np.random.default_rng()
    shape = (h.n,) if size is None else (size, h.n)
    return close_bits(h, rng.random(shape) < p)


@dataclass
class Summary:
    mean: float
    std: float
    values: list[float]

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "values": self.values}


def _summary(values: Sequence[float]) -> Summary:
    arr = np.asarray(values, dtype=float)
    std = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
    return Summary(float(np.mean(arr)), std, [float(v) for v in arr])


@dataclass
class BaselineResult:
    trials: int
    p: float
    seed: int
    metrics: dict[str, Summary]
    per_trial_reports: list

    def to_dict(self, hierarchies: Sequence[Hierarchy] = ()) -> dict:
        out = {
            "schema_version": 1,
            "trials": self.trials,
            "p": self.p,
            "seed": self.seed,
            "metrics": {k: v.to_dict() for k, v in self.metrics.items()},
        }
        if hierarchies:
            out["activation"] = [
                {
                    "category": h.category_name,
                    "index": i,
                    "name": h.nodes[i].name,
                    "depth": int(h.depths[i]),
                    "subtree_size": int(h.subtree_sizes[i]),
                    "expected_rate": float(q),
                }
                for h in hierarchies
                for i, q in enumerate(activation_probability(h, self.p))
            ]
        return out


def random_predictions(hierarchies: Sequence[Hierarchy], n_samples: int, p: float, rng: np.random.Generator) -> dict[str, np.ndarray]:
    return {h.category_name: sample_random_prediction(h, p, rng, size=n_samples) for h in hierarchies}


def estimate_random_baseline(
    hierarchies: Sequence[Hierarchy],
    targets: Mapping[str, np.ndarray],
    mask: Mapping[str, np.ndarray],
    trials: int = 10,
    p: float = 0.5,
    seed: int = 0,
) -> BaselineResult:
    """Mean and sample std of each metric over ``trials`` random prediction sets.

    Trial ``k`` draws from its own stream keyed by ``(seed, k)``.
    """
    if trials < 2:
        raise HMLError("invalid-trials", f"need at least 2 trials, got {trials}")
    sizes = {np.asarray(targets[h.category_name]).shape[0] for h in hierarchies}
    if len(sizes) != 1 or 0 in sizes:
        raise HMLError("empty-test-set", "test annotations are empty or ragged")
    (n_samples,) = sizes
    reports = []
    for k in range(trials):
        preds = random_predictions(hierarchies, n_samples, p, stream(seed, "baseline", k))
        reports.append(evaluate(hierarchies, preds, targets, mask))
    metrics = {name: _summary([getattr(r, name) for r in reports]) for name in ("ap", "hml_ap", "singular_f1")}
    for name, s in metrics.items():
        if math.isnan(s.mean):
            raise HMLError("empty-test-set", f"{name} undefined on this test set")
    return BaselineResult(trials, p, seed, metrics, reports)
