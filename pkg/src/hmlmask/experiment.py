"""End-to-end desk-scale run: generate, train, evaluate, compare to random."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .baseline import BaselineResult, estimate_random_baseline
from .datagen import generate_dataset, split_indices
from .hierarchy import Hierarchy, bundled
from .metrics import MetricsReport, evaluate
from .model import Dataset, MultiHeadModel, TrainConfig, fit

logger = logging.getLogger(__name__)


@dataclass
class ExperimentResult:
    trained: MetricsReport
    baseline: BaselineResult
    history: list[dict]
    model: MultiHeadModel
    test: Dataset

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "trained": self.trained.to_dict(),
            "baseline": self.baseline.to_dict(),
            "history": self.history,
        }


def run_experiment(
    hierarchies: Sequence[Hierarchy] | None = None,
    n_samples: int = 5000,
    noise_sigma: float = 0.1,
    missing_precision_rate: float = 0.3,
    missing_category_rate: float = 0.2,
    train_config: TrainConfig | None = None,
    baseline_trials: int = 10,
    seed: int = 0,
) -> ExperimentResult:
    hierarchies = list(hierarchies) if hierarchies is not None else [bundled(n) for n in ("substrate", "relief", "bedforms")]
    config = dataclasses.replace(train_config or TrainConfig(), seed=seed)
    ds = generate_dataset(
        hierarchies,
        n_samples,
        noise_sigma=noise_sigma,
        missing_precision_rate=missing_precision_rate,
        missing_category_rate=missing_category_rate,
        seed=seed,
    )
    full = Dataset.from_annotations(ds.features, ds.annotations, hierarchies)
    parts = split_indices(n_samples, seed)
    train, val, test = (full.subset(parts[k]) for k in ("train", "val", "test"))

    model = MultiHeadModel(hierarchies, ds.features.shape[1], config.hidden_dim, config.dropout, seed=seed, batch_norm=config.batch_norm)
    model, history = fit(model, train, config, val, on_epoch=lambda r: logger.info("epoch %s", r))

    probs = model.predict_proba(test.features, constrained=True)
    bits = {k: v > 0.5 for k, v in probs.items()}
    trained = evaluate(hierarchies, bits, test.targets, test.masks)
    baseline = estimate_random_baseline(hierarchies, test.targets, test.masks, trials=baseline_trials, seed=seed)
    return ExperimentResult(trained, baseline, history, model, test)


def pooled_baseline_nodes(result: ExperimentResult):
    """Per-node scores of the random baseline with counts summed over trials."""
    from .metrics import NodeScore

    reports = result.baseline.per_trial_reports
    out = []
    for k, s in enumerate(reports[0].per_node):
        rows = [r.per_node[k] for r in reports]
        out.append(
            NodeScore(
                s.category,
                s.index,
                s.name,
                s.depth,
                int(np.sum([r.tp for r in rows])),
                int(np.sum([r.fp for r in rows])),
                int(np.sum([r.fn for r in rows])),
                int(np.sum([r.evaluated for r in rows])),
                s.support_fraction,
            )
        )
    return out
