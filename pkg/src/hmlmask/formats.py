"""On-disk formats used by the command line.

Features
    CSV with header ``sample_id,f0,f1,...``; one row per sample.
Predictions
    JSON lines. The first line is a header::

        {"format": "hmlmask-predictions", "version": 1,
         "categories": [{"name": "Substrate", "n_nodes": 24}, ...]}

    Every further line is one sample::

        {"sample_id": "s0001", "scores": {"Substrate": [...], ...},
         "bits": {"Substrate": [0, 1, ...], ...}}

    ``scores`` are per-node probabilities in pre-order; ``bits`` is present
    once predictions have been constrained and binarised.
Split
    JSON object mapping ``train``/``val``/``test`` to lists of sample ids.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import HMLError
from .hierarchy import Hierarchy

PREDICTIONS_FORMAT = "hmlmask-predictions"
PREDICTIONS_VERSION = 1


def _require(path: Path, what: str) -> None:
    if not path.exists():
        raise HMLError("file-not-found", f"no such {what}: {path}", file=str(path))


def jsonable(obj):
    """Replace non-finite floats by ``None`` so output is strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return jsonable(obj.item())
    return obj


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), indent=2, allow_nan=False) + "\n"


def read_features(path: str | Path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    _require(path, "feature file")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "sample_id":
            raise HMLError("schema-mismatch", "first column must be sample_id", file=str(path), field="sample_id")
        ids, rows = [], []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise HMLError("dimension-mismatch", f"line {line} has {len(row)} columns, header has {len(header)}", file=str(path), field=row[0])
            ids.append(row[0])
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as err:
                raise HMLError("schema-mismatch", f"line {line}: {err}", file=str(path), field=row[0]) from None
    return ids, np.array(rows, dtype=float).reshape(len(ids), len(header) - 1)


def write_features(path: str | Path, ids: Sequence[str], features: np.ndarray) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", *(f"f{j}" for j in range(features.shape[1]))])
        for sid, row in zip(ids, features):
            writer.writerow([sid, *(repr(float(v)) for v in row)])


def write_predictions(
    path: str | Path,
    hierarchies: Sequence[Hierarchy],
    ids: Sequence[str],
    scores: Mapping[str, np.ndarray],
    bits: Mapping[str, np.ndarray] | None = None,
) -> None:
    header = {
        "format": PREDICTIONS_FORMAT,
        "version": PREDICTIONS_VERSION,
        "categories": [{"name": h.category_name, "n_nodes": h.n} for h in hierarchies],
    }
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for r, sid in enumerate(ids):
            rec = {"sample_id": sid, "scores": {h.category_name: [float(v) for v in scores[h.category_name][r]] for h in hierarchies}}
            if bits is not None:
                rec["bits"] = {h.category_name: [int(v) for v in bits[h.category_name][r]] for h in hierarchies}
            fh.write(json.dumps(rec) + "\n")


def read_predictions(
    path: str | Path, hierarchies: Sequence[Hierarchy]
) -> tuple[list[str], dict[str, np.ndarray], dict[str, np.ndarray] | None]:
    """Sample ids, score matrices and (if present) bit matrices per category."""
    path = Path(path)
    _require(path, "prediction file")
    with path.open(encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise HMLError("schema-mismatch", "empty prediction file", file=str(path), field="format")
    try:
        header = json.loads(lines[0])
        records = [json.loads(ln) for ln in lines[1:]]
    except json.JSONDecodeError as err:
        raise HMLError("schema-mismatch", f"invalid JSON: {err}", file=str(path)) from None
    if header.get("format") != PREDICTIONS_FORMAT or header.get("version") != PREDICTIONS_VERSION:
        raise HMLError("schema-mismatch", "missing or unsupported prediction header", file=str(path), field="format")
    declared = {c["name"]: c["n_nodes"] for c in header.get("categories", [])}
    for h in hierarchies:
        if h.category_name not in declared:
            raise HMLError("schema-mismatch", f"no predictions for category {h.category_name!r}", file=str(path), field=h.category_name)
        if declared[h.category_name] != h.n:
            raise HMLError(
                "dimension-mismatch",
                f"{h.category_name!r} has {declared[h.category_name]} nodes in the file, hierarchy has {h.n}",
                file=str(path),
                field=h.category_name,
            )
    ids = [rec["sample_id"] for rec in records]
    has_bits = bool(records) and all("bits" in rec for rec in records)
    scores, bits = {}, {} if has_bits else None
    for h in hierarchies:
        name = h.category_name
        for key, out, dtype in (("scores", scores, float), ("bits", bits, bool)):
            if out is None:
                continue
            rows = [rec[key][name] for rec in records]
            if any(len(row) != h.n for row in rows):
                raise HMLError("dimension-mismatch", f"{key} row width differs from {h.n}", file=str(path), field=name)
            out[name] = np.array(rows, dtype=dtype).reshape(len(rows), h.n)
    return ids, scores, bits


def read_split(path: str | Path) -> dict[str, list[str]]:
    path = Path(path)
    _require(path, "split file")
    split = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(split, dict) or not all(isinstance(v, list) for v in split.values()):
        raise HMLError("schema-mismatch", "split must map part names to id lists", file=str(path))
    return split
