"""``hmlmask`` command line.

Every subcommand is deterministic under ``--seed``. Failures exit with
status 2 and print a JSON error object (``error``, ``message`` and, when
known, ``file`` and ``field``) on stderr. File formats are described in
:mod:`hmlmask.formats`; annotation CSVs hold one column per category with
``;``-separated node paths.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .annotations import read_annotation_csv, write_annotation_csv
from .baseline import BRUTE_FORCE_LIMIT, brute_force_count, count_valid_annotations, estimate_random_baseline
from .constraint import binarize, constrain
from .datagen import GenConfig, generate_dataset, split_indices
from .errors import HMLError
from .formats import dumps, jsonable, read_features, read_predictions, read_split, write_features, write_predictions
from .hierarchy import Hierarchy, load_hierarchy
from .metrics import evaluate
from .model import Dataset, MultiHeadModel, TrainConfig, fit

logger = logging.getLogger("hmlmask")


def _load_json(path: str, what: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise HMLError("file-not-found", f"no such {what}: {p}", file=str(p))
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise HMLError("schema-mismatch", f"invalid JSON: {err}", file=str(p)) from None
    if not isinstance(data, dict):
        raise HMLError("schema-mismatch", "expected a JSON object", file=str(p))
    return data


def _hierarchies(paths: Sequence[str]) -> list[Hierarchy]:
    return [load_hierarchy(p) for p in paths]


def _rows(ids: Sequence[str], wanted: Sequence[str], source: str) -> np.ndarray:
    pos = {sid: k for k, sid in enumerate(ids)}
    missing = [sid for sid in wanted if sid not in pos]
    if missing:
        raise HMLError("schema-mismatch", f"{len(missing)} sample ids not found, e.g. {missing[0]!r}", file=source, field="sample_id")
    return np.array([pos[sid] for sid in wanted], dtype=int)


def _part_ids(args, ids: Sequence[str]) -> list[str]:
    if not getattr(args, "split", None):
        return list(ids)
    split = read_split(args.split)
    if args.part not in split:
        raise HMLError("schema-mismatch", f"split has no part {args.part!r}", file=args.split, field=args.part)
    return split[args.part]


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_validate(args) -> None:
    h = load_hierarchy(args.hierarchy)
    hist = np.bincount(h.depths)
    print(f"category: {h.category_name}")
    print(f"nodes: {h.n}")
    print(f"max depth: {h.max_depth}")
    print("depth histogram: " + " ".join(f"{d}:{c}" for d, c in enumerate(hist)))
    print("index\tdepth\tparent\tpath")
    for node in h.nodes:
        print(f"{node.index}\t{node.depth}\t{'' if node.parent is None else node.parent}\t{h.paths[node.index]}")


def cmd_count(args) -> None:
    h = load_hierarchy(args.hierarchy)
    exact = count_valid_annotations(h)
    print(exact)
    if args.brute_force:
        if h.n > BRUTE_FORCE_LIMIT:
            raise HMLError("hierarchy-too-large", f"brute force limited to n <= {BRUTE_FORCE_LIMIT}, got {h.n}", file=args.hierarchy)
        brute = brute_force_count(h)
        if brute != exact:
            raise HMLError("count-mismatch", f"recurrence gives {exact}, enumeration gives {brute}", file=args.hierarchy)
        print(f"brute force: {brute} (agrees)")


def cmd_generate(args) -> None:
    raw = _load_json(args.config, "generator config")
    known = {f.name for f in dataclasses.fields(GenConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise HMLError("schema-mismatch", f"unknown generator keys {unknown}", file=args.config, field=unknown[0])
    cfg = GenConfig(**{**raw, "seed": args.seed})
    hierarchies = _hierarchies(cfg.hierarchies)
    ds = generate_dataset(
        hierarchies,
        cfg.n_samples,
        noise_sigma=cfg.noise_sigma,
        branch_prob=cfg.branch_prob,
        missing_precision_rate=cfg.missing_precision_rate,
        missing_category_rate=cfg.missing_category_rate,
        feature_dim=cfg.feature_dim,
        seed=cfg.seed,
    )
    out = Path(args.out)
    (out / "hierarchies").mkdir(parents=True, exist_ok=True)
    for src, h in zip(cfg.hierarchies, hierarchies):
        (out / "hierarchies" / f"{Path(src).stem}.txt").write_text(h.serialize(), encoding="utf-8")
    write_features(out / "features.csv", ds.sample_ids, ds.features)
    write_annotation_csv(out / "annotations.csv", ds.annotations, hierarchies)
    write_annotation_csv(out / "ground_truth.csv", ds.ground_truth, hierarchies)
    parts = split_indices(cfg.n_samples, cfg.seed)
    (out / "split.json").write_text(dumps({k: [ds.sample_ids[i] for i in v] for k, v in parts.items()}), encoding="utf-8")
    (out / "config.json").write_text(dumps(dataclasses.asdict(cfg)), encoding="utf-8")
    print(f"wrote {cfg.n_samples} samples with {ds.features.shape[1]} features to {out}")


def _dataset(features: str, annotations: str, hierarchies: list[Hierarchy], wanted: Sequence[str] | None = None) -> Dataset:
    ids, X = read_features(features)
    anns = read_annotation_csv(annotations, hierarchies)
    ann_rows = _rows([a.sample_id for a in anns], ids, annotations)
    full = Dataset.from_annotations(X, [anns[i] for i in ann_rows], hierarchies)
    return full if wanted is None else full.subset(_rows(ids, wanted, features))


def cmd_train(args) -> None:
    hierarchies = _hierarchies(args.hierarchies)
    raw = _load_json(args.config, "train config") if args.config else {}
    config = TrainConfig.from_dict({**raw, "seed": args.seed})
    if args.fine_tune:
        config = config.fine_tune(args.fine_tune_epochs)
    if args.split:
        split = read_split(args.split)
        train = _dataset(args.features, args.annotations, hierarchies, split.get("train", []))
        val = _dataset(args.features, args.annotations, hierarchies, split["val"]) if split.get("val") else None
    else:
        train, val = _dataset(args.features, args.annotations, hierarchies), None
    if args.init:
        model = MultiHeadModel.load(args.init)
        names = [h.category_name for h in model.hierarchies]
        if names != [h.category_name for h in hierarchies]:
            raise HMLError("schema-mismatch", f"checkpoint categories {names} differ from the given hierarchies", file=args.init)
        if model.input_dim != train.features.shape[1]:
            raise HMLError("dimension-mismatch", f"checkpoint expects {model.input_dim} features", file=args.features, field="features")
    else:
        model = MultiHeadModel(hierarchies, train.features.shape[1], config.hidden_dim, config.dropout, config.seed, config.batch_norm)
    log = open(args.log, "w", encoding="utf-8") if args.log else sys.stdout
    try:
        fit(model, train, config, val, on_epoch=lambda rec: log.write(json.dumps(jsonable(rec)) + "\n"))
    finally:
        if log is not sys.stdout:
            log.close()
    model.save(args.out)


def cmd_predict(args) -> None:
    model = MultiHeadModel.load(args.model)
    ids, X = read_features(args.features)
    wanted = _part_ids(args, ids)
    X = X[_rows(ids, wanted, args.features)]
    if X.shape[1] != model.input_dim:
        raise HMLError("dimension-mismatch", f"checkpoint expects {model.input_dim} features, got {X.shape[1]}", file=args.features, field="features")
    probs = model.predict_proba(X, constrained=False)
    write_predictions(args.out, model.hierarchies, wanted, probs)


def cmd_constrain(args) -> None:
    hierarchies = _hierarchies(args.hierarchies)
    ids, scores, _ = read_predictions(args.predictions, hierarchies)
    fixed, bits = {}, {}
    for h in hierarchies:
        fixed[h.category_name] = constrain(h, scores[h.category_name])
        try:
            bits[h.category_name] = binarize(fixed[h.category_name], args.threshold)
        except HMLError as err:
            err.file, err.field = args.predictions, h.category_name
            raise
    write_predictions(args.out, hierarchies, ids, fixed, bits)


def _predicted_bits(hierarchies, scores, bits) -> dict[str, np.ndarray]:
    if bits is not None:
        return bits
    return {h.category_name: binarize(constrain(h, scores[h.category_name])) for h in hierarchies}


def cmd_evaluate(args) -> None:
    hierarchies = _hierarchies(args.hierarchies)
    ids, scores, bits = read_predictions(args.predictions, hierarchies)
    anns = read_annotation_csv(args.annotations, hierarchies)
    rows = _rows([a.sample_id for a in anns], ids, args.annotations)
    data = Dataset.from_annotations(np.zeros((len(rows), 0)), [anns[i] for i in rows], hierarchies)
    report = evaluate(hierarchies, _predicted_bits(hierarchies, scores, bits), data.targets, data.masks)
    _emit(dumps(report.to_dict()), args.report)
    if args.per_node:
        with Path(args.per_node).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["category", "index", "name", "depth", "precision", "recall", "f1", "support_fraction", "tp", "fp", "fn"])
            for s in report.per_node:
                vals = [s.precision, s.recall, s.f1, s.support_fraction]
                writer.writerow([s.category, s.index, s.name, s.depth, *("" if v != v else repr(v) for v in vals), s.tp, s.fp, s.fn])
    if args.report:
        print(f"ap={report.ap:.4f} hml_ap={report.hml_ap:.4f} singular_f1={report.singular_f1:.4f}")


def cmd_baseline(args) -> None:
    hierarchies = _hierarchies(args.hierarchies)
    anns = read_annotation_csv(args.annotations, hierarchies)
    ids = [a.sample_id for a in anns]
    rows = _rows(ids, _part_ids(args, ids), args.annotations)
    data = Dataset.from_annotations(np.zeros((len(rows), 0)), [anns[i] for i in rows], hierarchies)
    result = estimate_random_baseline(hierarchies, data.targets, data.masks, trials=args.trials, p=args.p, seed=args.seed)
    _emit(dumps(result.to_dict(hierarchies)), args.report)


def cmd_experiment(args) -> None:
    from .experiment import run_experiment

    raw = _load_json(args.config, "train config") if args.config else {}
    result = run_experiment(
        n_samples=args.samples,
        train_config=TrainConfig.from_dict(raw),
        baseline_trials=args.trials,
        seed=args.seed,
    )
    _emit(dumps(result.to_dict()), args.report)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hmlmask", description="Hierarchical multi-label classification with missing-label masks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse a hierarchy and print its node table")
    p.add_argument("hierarchy")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("count", help="number of valid annotations of a hierarchy")
    p.add_argument("hierarchy")
    p.add_argument("--brute-force", action="store_true", help=f"cross-check by enumeration (n <= {BRUTE_FORCE_LIMIT})")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("config", help="JSON generator config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train the multi-head probe")
    p.add_argument("features")
    p.add_argument("annotations")
    p.add_argument("hierarchies", nargs="+")
    p.add_argument("--config", help="JSON train config (defaults otherwise)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--split", help="split JSON; trains on 'train', validates on 'val'")
    p.add_argument("--init", help="start from this checkpoint")
    p.add_argument("--fine-tune", action="store_true", help="one tenth of the learning rates, no weight decay")
    p.add_argument("--fine-tune-epochs", type=int, default=300)
    p.add_argument("--log", help="JSON-lines epoch log (stdout by default)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write per-node probabilities")
    p.add_argument("model")
    p.add_argument("features")
    p.add_argument("--out", required=True)
    p.add_argument("--split")
    p.add_argument("--part", default="test")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("constrain", help="apply the max-constraint and binarise at a threshold")
    p.add_argument("predictions")
    p.add_argument("hierarchies", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_constrain)

    p = sub.add_parser("evaluate", help="score predictions against annotations")
    p.add_argument("predictions")
    p.add_argument("annotations")
    p.add_argument("hierarchies", nargs="+")
    p.add_argument("--report", help="JSON report path (stdout by default)")
    p.add_argument("--per-node", help="per-node CSV path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline", help="Monte Carlo random-prediction baseline")
    p.add_argument("hierarchies", nargs="+")
    p.add_argument("annotations")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split")
    p.add_argument("--part", default="test")
    p.add_argument("--report")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("experiment", help="generate, train, evaluate and compare with the baseline in one go")
    p.add_argument("--config", help="JSON train config")
    p.add_argument("--samples", type=int, default=5000)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except HMLError as err:
        sys.stderr.write(json.dumps(err.to_dict()) + "\n")
        return 2
    except OSError as err:
        sys.stderr.write(json.dumps({"error": "io-error", "message": str(err), "file": err.filename}) + "\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
