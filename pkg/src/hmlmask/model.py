"""Multi-head two-layer probe over fixed feature vectors, trained with AdamW.

Each head is ``Norm -> Linear(d, hidden) -> ReLU -> Dropout -> Norm ->
Linear(hidden, n)`` and outputs raw logits for one category. ``Norm`` is a
parameter-free batch normalisation (batch statistics while training,
running averages at inference) and can be switched off. Training
minimises the masked max-constraint loss averaged over contributing
heads, under a one-cycle cosine learning-rate schedule. Everything is plain numpy in float64 and
deterministic for a given seed.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .annotations import AnnotationSet, encode_batch
from .constraint import constrain, sigmoid
from .errors import HMLError
from .hierarchy import Hierarchy, parse_hierarchy
from .loss import HeadLoss, batch_loss, mc_loss_logits
from .metrics import evaluate
from .rng import stream

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "hmlmask-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class HeadConfig:
    input_dim: int
    output_dim: int
    hidden_dim: int = 2048
    dropout: float = 0.7
    batch_norm: bool = True

    def __post_init__(self):
        if min(self.input_dim, self.output_dim, self.hidden_dim) <= 0:
            raise HMLError("invalid-config", f"head dimensions must be positive: {self}")
        if not 0.0 <= self.dropout < 1.0:
            raise HMLError("invalid-config", f"dropout must lie in [0, 1), got {self.dropout}")


@dataclass(frozen=True)
class TrainConfig:
    peak_lr: float = 3e-5
    start_end_lr: float = 3e-6
    warmup_to_peak_epoch: int = 10
    epochs: int = 100
    batch_size: int = 512
    weight_decay: float = 1e-5
    momentum_beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    hidden_dim: int = 2048
    dropout: float = 0.7
    batch_norm: bool = True
    head_reduction: str = "mean"
    seed: int = 0

    def __post_init__(self):
        if self.start_end_lr > self.peak_lr:
            raise HMLError("invalid-config", "start_end_lr must not exceed peak_lr")
        if not 0 <= self.warmup_to_peak_epoch < self.epochs:
            raise HMLError("invalid-config", "warmup_to_peak_epoch must lie in [0, epochs)")
        if self.batch_size <= 0:
            raise HMLError("invalid-config", "batch_size must be positive")

    def fine_tune(self, epochs: int = 300) -> "TrainConfig":
        """Continuation recipe: one tenth of the learning rates, no weight decay."""
        return dataclasses.replace(
            self,
            peak_lr=self.peak_lr / 10,
            start_end_lr=self.start_end_lr / 10,
            epochs=epochs,
            weight_decay=0.0,
        )

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise HMLError("schema-mismatch", f"unknown train-config keys {unknown}", field=unknown[0])
        return cls(**d)


def lr_at(config: TrainConfig, step: int, steps_per_epoch: int) -> float:
    """One-cycle cosine: ramp start -> peak by the warmup epoch, then decay back.

    The final step (``epochs * steps_per_epoch - 1``) lands exactly on
    ``start_end_lr``.
    """
    total = config.epochs * steps_per_epoch
    if not 0 <= step < total:
        raise HMLError("step-out-of-range", f"step {step} outside [0, {total})")
    lo, hi = config.start_end_lr, config.peak_lr
    warm = config.warmup_to_peak_epoch * steps_per_epoch
    if step <= warm:
        frac = step / warm if warm else 1.0
        return lo + (hi - lo) * (1.0 - math.cos(math.pi * frac)) / 2.0
    decay = total - 1 - warm
    frac = (step - warm) / decay
    return lo + (hi - lo) * (1.0 + math.cos(math.pi * frac)) / 2.0


class BatchNorm:
    """Batch normalisation without learnable scale or shift."""

    momentum = 0.1
    eps = 1e-5

    def __init__(self, dim: int):
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self._cache = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if not train:
            self._cache = None
            return (x - self.running_mean) / np.sqrt(self.running_var + self.eps)
        n = x.shape[0]
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv
        unbiased = var * n / (n - 1) if n > 1 else var
        self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
        self.running_var = (1 - self.momentum) * self.running_var + self.momentum * unbiased
        self._cache = (xhat, inv)
        return xhat

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward needs a train-mode forward pass")
        xhat, inv = self._cache
        n = dy.shape[0]
        return (inv / n) * (n * dy - dy.sum(axis=0) - xhat * (dy * xhat).sum(axis=0))


class Head:
    def __init__(self, config: HeadConfig, rng: np.random.Generator | None = None):
        self.config = config
        d, hid, n = config.input_dim, config.hidden_dim, config.output_dim
        if rng is None:
            self.W1, self.b1 = np.zeros((d, hid)), np.zeros(hid)
            self.W2, self.b2 = np.zeros((hid, n)), np.zeros(n)
        else:
            # Uniform fan-in scaling.
            k1, k2 = 1.0 / math.sqrt(d), 1.0 / math.sqrt(hid)
            self.W1 = rng.uniform(-k1, k1, (d, hid))
            self.b1 = rng.uniform(-k1, k1, hid)
            self.W2 = rng.uniform(-k2, k2, (hid, n))
            self.b2 = rng.uniform(-k2, k2, n)
        self.norm_in = BatchNorm(d) if config.batch_norm else None
        self.norm_hidden = BatchNorm(hid) if config.batch_norm else None
        self._cache = None

    @property
    def params(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2]

    def forward(self, x: np.ndarray, drop_rng: np.random.Generator | None = None, train: bool = False) -> np.ndarray:
        """Logits for a batch; dropout is applied only when ``drop_rng`` is given."""
        if self.norm_in is not None:
            x = self.norm_in.forward(x, train)
        a = x @ self.W1 + self.b1
        hidden = np.maximum(a, 0.0)
        keep = None
        if drop_rng is not None and self.config.dropout > 0:
            keep = (drop_rng.random(hidden.shape) >= self.config.dropout) / (1.0 - self.config.dropout)
            hidden = hidden * keep
        z = hidden if self.norm_hidden is None else self.norm_hidden.forward(hidden, train)
        self._cache = (x, a, keep, z)
        return z @ self.W2 + self.b2

    def backward(self, grad_logits: np.ndarray) -> list[np.ndarray]:
        x, a, keep, z = self._cache
        dW2 = z.T @ grad_logits
        db2 = grad_logits.sum(axis=0)
        dz = grad_logits @ self.W2.T
        dh = dz if self.norm_hidden is None else self.norm_hidden.backward(dz)
        if keep is not None:
            dh = dh * keep
        da = dh * (a > 0)
        dW1 = x.T @ da
        db1 = da.sum(axis=0)
        return [dW1, db1, dW2, db2]

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for key, norm in (("in", self.norm_in), ("hidden", self.norm_hidden)):
            if norm is not None:
                out[f"{key}_mean"] = norm.running_mean
                out[f"{key}_var"] = norm.running_var
        return out


class MultiHeadModel:
    """One :class:`Head` per category hierarchy, sharing the input features."""

    def __init__(
        self,
        hierarchies: Sequence[Hierarchy],
        input_dim: int,
        hidden_dim: int = 2048,
        dropout: float = 0.7,
        seed: int | None = 0,
        batch_norm: bool = True,
    ):
        self.hierarchies = list(hierarchies)
        self.input_dim = input_dim
        self.heads: dict[str, Head] = {}
        for k, h in enumerate(self.hierarchies):
            cfg = HeadConfig(input_dim, h.n, hidden_dim, dropout, batch_norm)
            self.heads[h.category_name] = Head(cfg, None if seed is None else stream(seed, "init", k))

    @property
    def params(self) -> list[np.ndarray]:
        return [p for head in self.heads.values() for p in head.params]

    def forward(self, features: np.ndarray, train: bool = False, rng: np.random.Generator | None = None) -> dict[str, np.ndarray]:
        x = np.asarray(features, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise HMLError("dim-mismatch", f"features have shape {x.shape}, model expects width {self.input_dim}", field="features")
        if train and rng is None:
            raise ValueError("train-mode forward needs a dropout rng")
        return {name: head.forward(x, rng if train else None, train) for name, head in self.heads.items()}

    def predict_proba(self, features: np.ndarray, constrained: bool = False) -> dict[str, np.ndarray]:
        logits = self.forward(features)
        out = {}
        for h in self.hierarchies:
            z = logits[h.category_name]
            out[h.category_name] = sigmoid(constrain(h, z) if constrained else z)
        return out

    def state(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "input_dim": self.input_dim,
            "heads": [
                {
                    "category": h.category_name,
                    "hierarchy": h.serialize(),
                    **dataclasses.asdict(self.heads[h.category_name].config),
                    **{k: p.ravel().tolist() for k, p in zip(("W1", "b1", "W2", "b2"), self.heads[h.category_name].params)},
                    **{k: b.tolist() for k, b in self.heads[h.category_name].buffers().items()},
                }
                for h in self.hierarchies
            ],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.state()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "MultiHeadModel":
        path = Path(path)
        if not path.exists():
            raise HMLError("file-not-found", f"no such checkpoint: {path}", file=str(path))
        state = json.loads(path.read_text(encoding="utf-8"))
        if state.get("format") != CHECKPOINT_FORMAT or state.get("version") != CHECKPOINT_VERSION:
            raise HMLError("schema-mismatch", "not a version-1 hmlmask checkpoint", file=str(path), field="format")
        hiers = [parse_hierarchy(hd["hierarchy"]) for hd in state["heads"]]
        first = state["heads"][0]
        model = cls(hiers, state["input_dim"], first["hidden_dim"], first["dropout"], seed=None, batch_norm=first["batch_norm"])
        for hd in state["heads"]:
            head = model.heads[hd["category"]]
            d, hid, n = hd["input_dim"], hd["hidden_dim"], hd["output_dim"]
            head.W1 = np.asarray(hd["W1"], dtype=float).reshape(d, hid)
            head.b1 = np.asarray(hd["b1"], dtype=float)
            head.W2 = np.asarray(hd["W2"], dtype=float).reshape(hid, n)
            head.b2 = np.asarray(hd["b2"], dtype=float)
            for key, norm in (("in", head.norm_in), ("hidden", head.norm_hidden)):
                if norm is not None:
                    norm.running_mean = np.asarray(hd[f"{key}_mean"], dtype=float)
                    norm.running_var = np.asarray(hd[f"{key}_var"], dtype=float)
        return model


class AdamW:
    """Adam with decoupled weight decay, updating arrays in place."""

    def __init__(self, params: list[np.ndarray], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            p *= 1.0 - lr * self.weight_decay
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            denom = np.sqrt(v) / math.sqrt(c2) + self.eps
            p -= (lr / c1) * m / denom


@dataclass
class Dataset:
    features: np.ndarray
    targets: dict[str, np.ndarray]
    masks: dict[str, np.ndarray]
    sample_ids: list[str] = dataclasses.field(default_factory=list)

    def __len__(self) -> int:
        return self.features.shape[0]

    @classmethod
    def from_annotations(cls, features: np.ndarray, annotations: Sequence[AnnotationSet], hierarchies: Sequence[Hierarchy]) -> "Dataset":
        if len(annotations) != features.shape[0]:
            raise HMLError("dimension-mismatch", f"{features.shape[0]} feature rows vs {len(annotations)} annotations")
        targets, masks = {}, {}
        for h in hierarchies:
            targets[h.category_name], masks[h.category_name] = encode_batch(annotations, h)
        return cls(np.asarray(features, dtype=float), targets, masks, [a.sample_id for a in annotations])

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(
            self.features[idx],
            {k: v[idx] for k, v in self.targets.items()},
            {k: v[idx] for k, v in self.masks.items()},
            [self.sample_ids[i] for i in idx] if self.sample_ids else [],
        )

    def contributing(self) -> np.ndarray:
        """Row indices with at least one unmasked bit in some head."""
        live = np.zeros(len(self), dtype=bool)
        for m in self.masks.values():
            live |= ~np.all(m, axis=1)
        return np.flatnonzero(live)


def masked_loss(model: MultiHeadModel, data: Dataset, reduction: str = "mean", logits: Mapping[str, np.ndarray] | None = None):
    """Batch loss report and per-head logit gradients (eval mode unless ``logits`` given)."""
    logits = model.forward(data.features) if logits is None else logits
    heads, grads = [], {}
    for h in model.hierarchies:
        name = h.category_name
        loss, grad, count = mc_loss_logits(logits[name], data.targets[name], data.masks[name], h)
        heads.append(HeadLoss(loss, count, name))
        grads[name] = grad
    return batch_loss(heads, reduction), grads


def validation_metrics(model: MultiHeadModel, data: Dataset) -> dict[str, float]:
    probs = model.predict_proba(data.features, constrained=True)
    bits = {k: v > 0.5 for k, v in probs.items()}
    rep = evaluate(model.hierarchies, bits, data.targets, data.masks)
    return {"ap": rep.ap, "hml_ap": rep.hml_ap, "singular_f1": rep.singular_f1}


def fit(
    model: MultiHeadModel,
    train: Dataset,
    config: TrainConfig,
    val: Dataset | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> tuple[MultiHeadModel, list[dict]]:
    """Train ``model`` in place; returns it with per-epoch history records.

    Samples whose every head is masked are dropped before batching, so they
    have no effect on training at all.
    """
    if len(train) == 0:
        raise HMLError("empty-dataset", "training set has no samples")
    live = train.contributing()
    history: list[dict] = []
    if live.size == 0:
        logger.warning("every training sample is fully masked; skipping all steps")
        return model, history
    data = train.subset(live)
    n = len(data)
    spe = math.ceil(n / config.batch_size)
    opt = AdamW(model.params, config.momentum_beta1, config.beta2, config.eps, config.weight_decay)
    drop_rng = stream(config.seed, "dropout")
    step = 0
    for epoch in range(config.epochs):
        order = stream(config.seed, "shuffle", epoch).permutation(n)
        losses = []
        lr = 0.0
        for s in range(spe):
            batch = data.subset(order[s * config.batch_size : (s + 1) * config.batch_size])
            logits = model.forward(batch.features, train=True, rng=drop_rng)
            report, head_grads = masked_loss(model, batch, config.head_reduction, logits=logits)
            lr = lr_at(config, step, spe)
            step += 1
            if report.skip:
                continue
            if not math.isfinite(report.total):
                raise HMLError(
                    "nan-loss",
                    f"non-finite loss at epoch {epoch} step {step - 1}: " + ", ".join(f"{hl.name}={hl.loss}" for hl in report.per_head),
                )
            grads = []
            for w, h in zip(report.weights, model.hierarchies):
                grads.extend(model.heads[h.category_name].backward(head_grads[h.category_name] * w))
            opt.step(grads, lr)
            losses.append(report.total)
        record = {"epoch": epoch + 1, "lr": lr, "train_loss": float(np.mean(losses)) if losses else None}
        if val is not None and len(val.contributing()):
            vreport, _ = masked_loss(model, val, config.head_reduction)
            record["val_loss"] = vreport.total
            record.update({f"val_{k}": v for k, v in validation_metrics(model, val).items()})
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
    return model, history
