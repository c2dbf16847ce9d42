"""Category hierarchies: parsing, pre-order indexing, descendant matrix, closure.

A hierarchy file lists one root-to-node path per line, e.g.::

    Substrate > Consolidated (hard) > Rock
    Substrate > Unconsolidated (soft) > Pebble / gravel

Every prefix of a listed path is a node. Nodes are indexed by a depth-first
pre-order walk in which siblings keep their order of first appearance, so
each subtree occupies a contiguous index range ``[i, i + subtree_size[i])``.
That index order fixes bit positions in every encoding downstream.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .errors import HMLError

SEPARATOR = " > "
_SPLIT = re.compile(r"\s+>\s+")

BUNDLED = ("substrate", "relief", "bedforms")


class Node(NamedTuple):
    index: int
    name: str
    parent: int | None
    depth: int


@dataclass(frozen=True, eq=False)
class Hierarchy:
    """Immutable rooted tree for one annotation category."""

    category_name: str
    nodes: tuple[Node, ...]

    root_index: int = 0

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def n(self) -> int:
        return len(self.nodes)

    @cached_property
    def parents(self) -> np.ndarray:
        """Parent index per node, -1 for the root."""
        return np.array([-1 if nd.parent is None else nd.parent for nd in self.nodes], dtype=np.int64)

    @cached_property
    def depths(self) -> np.ndarray:
        return np.array([nd.depth for nd in self.nodes], dtype=np.int64)

    @cached_property
    def children(self) -> tuple[tuple[int, ...], ...]:
        kids: list[list[int]] = [[] for _ in self.nodes]
        for nd in self.nodes:
            if nd.parent is not None:
                kids[nd.parent].append(nd.index)
        return tuple(tuple(k) for k in kids)

    @cached_property
    def subtree_sizes(self) -> np.ndarray:
        sizes = np.ones(self.n, dtype=np.int64)
        for i in range(self.n - 1, 0, -1):
            sizes[self.nodes[i].parent] += sizes[i]
        return sizes

    @cached_property
    def is_leaf(self) -> np.ndarray:
        return self.subtree_sizes == 1

    @property
    def max_depth(self) -> int:
        return int(self.depths.max())

    @cached_property
    def paths(self) -> tuple[str, ...]:
        """Full root-to-node path string for every node, in index order."""
        out: list[str] = []
        for nd in self.nodes:
            out.append(nd.name if nd.parent is None else out[nd.parent] + SEPARATOR + nd.name)
        return tuple(out)

    @cached_property
    def _path_index(self) -> dict[tuple[str, ...], int]:
        out: dict[tuple[str, ...], int] = {}
        for i, p in enumerate(self.paths):
            out[tuple(p.split(SEPARATOR))] = i
        return out

    def index_of(self, path: str) -> int:
        """Resolve a path string to a node index."""
        key = tuple(split_path(path))
        try:
            return self._path_index[key]
        except KeyError:
            raise HMLError("unknown-path", f"{path!r} is not a node of {self.category_name!r}", field=self.category_name) from None

    def ancestors(self, i: int) -> list[int]:
        """Strict ancestors of ``i`` from parent up to the root."""
        out = []
        p = self.nodes[i].parent
        while p is not None:
            out.append(p)
            p = self.nodes[p].parent
        return out

    def subtree(self, i: int) -> range:
        return range(i, i + int(self.subtree_sizes[i]))

    def serialize(self) -> str:
        """Path-per-line text that parses back to the identical hierarchy."""
        return "\n".join(self.paths) + "\n"


def split_path(path: str) -> list[str]:
    return [part.strip() for part in _SPLIT.split(path.strip())]


def parse_hierarchy(text: str | Iterable[str], *, source: str | None = None) -> Hierarchy:
    """Build a :class:`Hierarchy` from path lines.

    ``#`` starts a comment; blank lines are skipped. Raises ``HMLError``
    with code ``empty-category``, ``duplicate-path`` or ``orphan-path``
    (a path whose root name differs from the category root).
    """
    lines = text.splitlines() if isinstance(text, str) else list(text)
    root_name: str | None = None
    kids: dict[tuple[str, ...], list[str]] = {}
    seen_lines: set[tuple[str, ...]] = set()

    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = split_path(line)
        if any(not p for p in parts):
            raise HMLError("orphan-path", f"line {lineno}: empty node name in {line!r}", file=source)
        key = tuple(parts)
        if key in seen_lines:
            raise HMLError("duplicate-path", f"line {lineno}: {line!r} listed twice", file=source)
        seen_lines.add(key)
        if root_name is None:
            root_name = parts[0]
            kids[(root_name,)] = []
        elif parts[0] != root_name:
            raise HMLError(
                "orphan-path",
                f"line {lineno}: {line!r} does not start at root {root_name!r}",
                file=source,
            )
        for depth in range(1, len(parts)):
            prefix = key[:depth]
            node = key[: depth + 1]
            if node not in kids:
                kids[node] = []
                kids[prefix].append(parts[depth])

    if root_name is None:
        raise HMLError("empty-category", "no paths found", file=source)

    nodes: list[Node] = []
    stack: list[tuple[tuple[str, ...], int | None, int]] = [((root_name,), None, 0)]
    while stack:
        key, parent, depth = stack.pop()
        idx = len(nodes)
        nodes.append(Node(idx, key[-1], parent, depth))
        for name in reversed(kids[key]):
            stack.append((key + (name,), idx, depth + 1))
    return Hierarchy(root_name, tuple(nodes))


def load_hierarchy(path: str | Path) -> Hierarchy:
    """Read a hierarchy file, or a bundled tree by name (``"substrate"``)."""
    p = Path(path)
    if not p.exists() and str(path).lower() in BUNDLED:
        return bundled(str(path).lower())
    try:
        text = p.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise HMLError("file-not-found", f"no such hierarchy file: {path}", file=str(path)) from None
    return parse_hierarchy(text, source=str(path))


def bundled(name: str) -> Hierarchy:
    if name not in BUNDLED:
        raise HMLError("file-not-found", f"no bundled hierarchy named {name!r}; have {BUNDLED}")
    text = resources.files("hmlmask.data").joinpath(f"{name}.txt").read_text(encoding="utf-8")
    return parse_hierarchy(text, source=f"bundled:{name}")


def descendant_matrix(h: Hierarchy) -> np.ndarray:
    """n x n 0/1 matrix with ``R[i, j] = 1`` iff ``j`` is ``i`` or a descendant of ``i``."""
    R = np.zeros((h.n, h.n), dtype=np.int8)
    for i in range(h.n):
        R[i, i : i + h.subtree_sizes[i]] = 1
    return R


def ancestor_closure(h: Hierarchy, nodes: Iterable[int]) -> set[int]:
    out: set[int] = set()
    for i in nodes:
        if not 0 <= i < h.n:
            raise HMLError("invalid-index", f"node index {i} outside [0, {h.n})")
        while i is not None and i not in out:
            out.add(i)
            i = h.nodes[i].parent
    return out


def close_bits(h: Hierarchy, bits: np.ndarray) -> np.ndarray:
    """Ancestor closure of a 0/1 array of shape (..., n), vectorised over leading axes."""
    out = np.array(bits, dtype=bool, copy=True)
    parents = h.parents
    for i in range(h.n - 1, 0, -1):
        out[..., parents[i]] |= out[..., i]
    return out


def is_closed(h: Hierarchy, bits: np.ndarray) -> bool:
    b = np.asarray(bits, dtype=bool)
    if h.n == 1:
        return True
    child = b[..., 1:]
    par = b[..., h.parents[1:]]
    return bool(np.all(~child | par))
