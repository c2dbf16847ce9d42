"""Path-style annotations to target/mask bit-strings.

A category annotation is a set of root-to-node paths. Its targets are the
ancestor closure of the path ends. Bits below a path that stops early are
unknown (the annotator did not go deeper) and are masked; every other
unannotated bit is a negative. A sample without any annotation for a
category has that whole category masked.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import HMLError
from .hierarchy import Hierarchy, ancestor_closure, is_closed

PATH_DELIMITER = ";"


@dataclass(frozen=True, eq=False)
class CategoryAnnotation:
    present: bool
    targets: np.ndarray  # bool, (n,)
    mask: np.ndarray  # bool, (n,), True = ignored

    def __eq__(self, other):
        if not isinstance(other, CategoryAnnotation):
            return NotImplemented
        return (
            self.present == other.present
            and np.array_equal(self.targets, other.targets)
            and np.array_equal(self.mask, other.mask)
        )


@dataclass
class AnnotationSet:
    sample_id: str
    categories: dict[str, CategoryAnnotation] = field(default_factory=dict)


def absent(h: Hierarchy) -> CategoryAnnotation:
    return CategoryAnnotation(False, np.zeros(h.n, dtype=bool), np.ones(h.n, dtype=bool))


def terminal_positives(h: Hierarchy, targets: np.ndarray) -> list[int]:
    """Positive nodes with no positive child."""
    t = np.asarray(targets, dtype=bool)
    has_pos_child = np.zeros(h.n, dtype=bool)
    has_pos_child[h.parents[1:][t[1:]]] = True
    return [int(i) for i in np.flatnonzero(t & ~has_pos_child)]


def derive_mask(h: Hierarchy, targets: np.ndarray) -> np.ndarray:
    """Mask the strict descendants of every terminal positive.

    Works on a single ``(n,)`` bit-string or a ``(B, n)`` stack. Since a
    subtree below a terminal positive holds no positives, a node is masked
    exactly when it is negative and its parent is either masked or a
    terminal positive.
    """
    t = np.asarray(targets, dtype=bool)
    if not is_closed(h, t):
        raise HMLError("non-closed-targets", "targets are not ancestor-closed", field=h.category_name)
    par = h.parents
    has_pos_child = np.zeros(t.shape, dtype=bool)
    for i in range(1, h.n):
        has_pos_child[..., par[i]] |= t[..., i]
    terminal = t & ~has_pos_child
    mask = np.zeros(t.shape, dtype=bool)
    for i in range(1, h.n):
        p = par[i]
        mask[..., i] = ~t[..., i] & (mask[..., p] | terminal[..., p])
    return mask


def parse_annotation(h: Hierarchy, paths: Sequence[str]) -> CategoryAnnotation:
    """Encode a list of path strings for one category; ``[]`` means absent."""
    paths = [p for p in paths if p.strip()]
    if not paths:
        return absent(h)
    ends = [h.index_of(p) for p in paths]
    targets = np.zeros(h.n, dtype=bool)
    targets[sorted(ancestor_closure(h, ends))] = True
    return CategoryAnnotation(True, targets, derive_mask(h, targets))


def serialize_annotation(h: Hierarchy, ann: CategoryAnnotation) -> list[str]:
    """Minimal path list (one per terminal positive) that re-parses to ``ann``."""
    if not ann.present:
        return []
    return [h.paths[i] for i in terminal_positives(h, ann.targets)]


def component_paths(h: Hierarchy, targets: np.ndarray) -> list[tuple[int, ...]]:
    """Root-to-terminal-positive paths of an annotation, as node index tuples."""
    out = []
    for t in terminal_positives(h, targets):
        out.append(tuple(sorted([t, *h.ancestors(t)])))
    return out


def encode_batch(annotations: Sequence[AnnotationSet], h: Hierarchy) -> tuple[np.ndarray, np.ndarray]:
    """Stack one category's targets and masks into (B, n) bool matrices."""
    name = h.category_name
    targets = np.zeros((len(annotations), h.n), dtype=bool)
    mask = np.zeros((len(annotations), h.n), dtype=bool)
    for row, ann in enumerate(annotations):
        try:
            cat = ann.categories[name]
        except KeyError:
            raise HMLError("category-mismatch", f"sample {ann.sample_id!r} has no {name!r} entry", field=name) from None
        if cat.targets.shape != (h.n,):
            raise HMLError(
                "category-mismatch",
                f"sample {ann.sample_id!r}: {name!r} has {cat.targets.shape[0]} bits, hierarchy has {h.n}",
                field=name,
            )
        targets[row] = cat.targets
        mask[row] = cat.mask
    return targets, mask


def from_bits(h: Hierarchy, targets: np.ndarray, present: bool = True) -> CategoryAnnotation:
    if not present:
        return absent(h)
    t = np.asarray(targets, dtype=bool).copy()
    return CategoryAnnotation(True, t, derive_mask(h, t))


def read_annotation_csv(path: str | Path, hierarchies: Sequence[Hierarchy]) -> list[AnnotationSet]:
    """Read ``sample_id,<category>...`` rows; cells hold ``;``-joined paths."""
    path = Path(path)
    if not path.exists():
        raise HMLError("file-not-found", f"no such annotation file: {path}", file=str(path))
    by_name = {h.category_name: h for h in hierarchies}
    out = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "sample_id":
            raise HMLError("schema-mismatch", "first column must be sample_id", file=str(path), field="sample_id")
        cols = header[1:]
        missing = [n for n in by_name if n not in cols]
        if missing:
            raise HMLError("schema-mismatch", f"no column for categories {missing}", file=str(path), field=missing[0])
        for row in reader:
            if not row:
                continue
            ann = AnnotationSet(row[0])
            for col, cell in zip(cols, row[1:]):
                h = by_name.get(col)
                if h is None:
                    continue
                try:
                    ann.categories[col] = parse_annotation(h, cell.split(PATH_DELIMITER))
                except HMLError as err:
                    err.file, err.field = str(path), col
                    raise
            out.append(ann)
    return out


def write_annotation_csv(path: str | Path, annotations: Iterable[AnnotationSet], hierarchies: Sequence[Hierarchy]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", *(h.category_name for h in hierarchies)])
        for ann in annotations:
            writer.writerow(
                [ann.sample_id, *(PATH_DELIMITER.join(serialize_annotation(h, ann.categories[h.category_name])) for h in hierarchies)]
            )


def annotations_from_matrices(
    sample_ids: Sequence[str], hierarchies: Sequence[Hierarchy], targets: Mapping[str, np.ndarray], present: Mapping[str, np.ndarray]
) -> list[AnnotationSet]:
    out = []
    for b, sid in enumerate(sample_ids):
        ann = AnnotationSet(sid)
        for h in hierarchies:
            name = h.category_name
            ann.categories[name] = from_bits(h, targets[name][b], bool(present[name][b]))
        out.append(ann)
    return out
