"""Gold hierarchical cluster labels.

Labels file: one record per line, ``level<TAB>paper_id<TAB>cluster_id[,cluster_id...]``
with levels numbered from 1. Only level 1 may list several clusters for a
paper. Blank lines and ``#`` comments are skipped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import CitationGraph, GraphError


@dataclass
class GoldHierarchyLabels:
    """``assign[l][u]`` is the frozenset of cluster ids of paper ``u`` at
    level ``l + 1`` (papers addressed by graph position)."""

    assign: list[list[frozenset[str]]]

    def __post_init__(self):
        if not self.assign:
            raise GraphError("labels need at least one level")
        n = len(self.assign[0])
        for l, level in enumerate(self.assign):
            if len(level) != n:
                raise GraphError(f"level {l + 1} labels {len(level)} papers, expected {n}")
            for u, cs in enumerate(level):
                if not cs:
                    raise GraphError(f"paper #{u} has no cluster at level {l + 1}")
                if l > 0 and len(cs) != 1:
                    raise GraphError(f"paper #{u} has {len(cs)} clusters at hard level {l + 1}")

    @property
    def n_levels(self) -> int:
        return len(self.assign)

    @property
    def n_papers(self) -> int:
        return len(self.assign[0])

    def same(self, level: int, u: int, v: int) -> bool:
        """Whether papers ``u`` and ``v`` share any cluster at ``level`` (1-based)."""
        a = self.assign[level - 1]
        return not a[u].isdisjoint(a[v])

    def clusters(self, level: int) -> list[frozenset[int]]:
        """Paper sets of the gold clusters at ``level``, ordered by cluster id."""
        groups: dict[str, set[int]] = {}
        for u, cs in enumerate(self.assign[level - 1]):
            for c in cs:
                groups.setdefault(c, set()).add(u)
        return [frozenset(groups[c]) for c in sorted(groups)]

    def same_matrix(self, level: int) -> np.ndarray:
        n = self.n_papers
        M = np.zeros((n, n), dtype=bool)
        for c in self.clusters(level):
            idx = np.array(sorted(c))
            M[np.ix_(idx, idx)] = True
        return M

    def positives(self, level: int) -> list[np.ndarray]:
        M = self.same_matrix(level)
        np.fill_diagonal(M, False)
        return [np.flatnonzero(row) for row in M]

    @classmethod
    def from_flat(cls, per_level: list[list]) -> "GoldHierarchyLabels":
        """Build from per-level lists of one id (or an iterable of ids) per paper."""
        assign = []
        for level in per_level:
            assign.append([frozenset(map(str, x)) if isinstance(x, (set, frozenset, list, tuple))
                           else frozenset([str(x)]) for x in level])
        return cls(assign)

    def save(self, path, graph: CitationGraph) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for l, level in enumerate(self.assign, 1):
                for pid, cs in zip(graph.ids, level):
                    fh.write(f"{l}\t{pid}\t{','.join(sorted(cs))}\n")


def load_labels(path, graph: CitationGraph) -> GoldHierarchyLabels:
    raw: dict[int, dict[str, frozenset[str]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise GraphError(f"{path}:{lineno}: expected 'level<TAB>paper<TAB>clusters'")
            try:
                level = int(parts[0])
            except ValueError:
                raise GraphError(f"{path}:{lineno}: bad level {parts[0]!r}") from None
            graph.index(parts[1])
            raw.setdefault(level, {})[parts[1]] = frozenset(c for c in parts[2].split(",") if c)
    if sorted(raw) != list(range(1, len(raw) + 1)):
        raise GraphError(f"{path}: levels must be numbered 1..L")
    assign = []
    for level in range(1, len(raw) + 1):
        missing = [p for p in graph.ids if p not in raw[level]]
        if missing:
            raise GraphError(f"{path}: paper {missing[0]!r} unlabeled at level {level}")
        assign.append([raw[level][p] for p in graph.ids])
    return GoldHierarchyLabels(assign)
