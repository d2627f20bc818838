"""Density-guided hierarchical clustering of a citation graph.

Level 1 is clustered softly (clusters may overlap); every higher level is
clustered hard through argmax links and connected components. Each cluster
becomes a hyper-node of the next level, with features aggregated from its
members and edges lifted from the edges its members had.

Nodes of a level are addressed by position. Wherever a rule needs a
tie-break "by id", the node's position in its level is used.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .encoder import EncoderParams, LevelScores, PairProbTable, score_level
from .graph import CitationGraph, EmbeddingMatrix, GraphError, LevelGraph, init_level_graph

logger = logging.getLogger(__name__)

HIERARCHY_FORMAT = "citetax-hierarchy"
HIERARCHY_VERSION = 1

Scorer = Callable[[LevelGraph, str], LevelScores]


@dataclass
class ClusterConfig:
    p_tau: float = 0.5
    scope: str = "neighbors"
    root_size: int = 3
    max_levels: int = 4


def _sort_clusters(clusters) -> list[frozenset[int]]:
    return sorted((frozenset(c) for c in clusters), key=lambda c: (min(c), sorted(c)))


@dataclass
class ClusterSet:
    level: int
    clusters: list[frozenset[int]]
    overlap_allowed: bool = False

    def __len__(self) -> int:
        return len(self.clusters)

    def __iter__(self):
        return iter(self.clusters)

    def violations(self, n_nodes: int) -> list[str]:
        out = []
        if any(not c for c in self.clusters):
            out.append("empty cluster")
        covered = set().union(*self.clusters) if self.clusters else set()
        if covered != set(range(n_nodes)):
            out.append("clusters do not cover all nodes")
        if self.overlap_allowed:
            for i, a in enumerate(self.clusters):
                for j, b in enumerate(self.clusters):
                    if i != j and a < b:
                        out.append(f"cluster {i} is a strict subset of cluster {j}")
        elif sum(len(c) for c in self.clusters) != len(covered):
            out.append("clusters overlap")
        return out


def _partners(probs: PairProbTable, n: int) -> list[list[int]]:
    out: list[list[int]] = [[] for _ in range(n)]
    for i, j in dict.keys(probs):
        out[i].append(j)
        out[j].append(i)
    return [sorted(p) for p in out]


def soft_cluster_level1(level_graph: LevelGraph, probs: PairProbTable, densities, p_tau: float) -> ClusterSet:
    """Overlapping clusters from density-ordered candidate sets.

    The candidate for ``u`` is ``u`` plus every scored partner that ranks
    above it by ``(density, position)`` and whose pair probability exceeds
    ``p_tau``. Singleton candidates and strict subsets of other candidates
    are dropped. A node left uncovered joins the first cluster holding its
    most probable covered partner; failing that it stays a singleton.
    """
    n = level_graph.n
    if n == 0:
        raise GraphError("cannot cluster an empty graph")
    partners = _partners(probs, n)
    rank = [(float(densities[u]), u) for u in range(n)]

    candidates = set()
    for u in range(n):
        c = {u} | {v for v in partners[u] if rank[v] > rank[u] and probs[u, v] > p_tau}
        candidates.add(frozenset(c))
    kept = [c for c in candidates if len(c) > 1 and not any(c < d for d in candidates)]
    clusters = _sort_clusters(kept)

    covered = set().union(*clusters) if clusters else set()
    grown = [set(c) for c in clusters]
    singles = []
    for u in range(n):
        if u in covered:
            continue
        options = [v for v in partners[u] if v in covered]
        if not options:
            singles.append(frozenset([u]))
            continue
        best = max(options, key=lambda v: (probs[u, v], -v))
        host = next(i for i, c in enumerate(clusters) if best in c)
        grown[host].add(u)
    return ClusterSet(1, _sort_clusters([*grown, *singles]), overlap_allowed=True)


def hard_cluster(level_graph: LevelGraph, probs: PairProbTable) -> ClusterSet:
    """Disjoint clusters: link every node to its most probable partner and
    take connected components."""
    n = level_graph.n
    if n == 0:
        raise GraphError("cannot cluster an empty graph")
    if n == 1:
        return ClusterSet(level_graph.level, [frozenset([0])])
    partners = _partners(probs, n)
    rows, cols = [], []
    for u in range(n):
        if not partners[u]:
            raise GraphError(f"node {level_graph.node_ids[u]!r} has no scored partner")
        best = max(partners[u], key=lambda v: (probs[u, v], -v))
        rows.append(u)
        cols.append(best)
    adj = coo_matrix((np.ones(n), (rows, cols)), shape=(n, n))
    _, labels = connected_components(adj, directed=False)
    groups: dict[int, set[int]] = {}
    for u, lab in enumerate(labels):
        groups.setdefault(int(lab), set()).add(u)
    return ClusterSet(level_graph.level, _sort_clusters(groups.values()))


def lift_edges(level_graph: LevelGraph, clusters: ClusterSet) -> set[tuple[int, int]]:
    """Hyper-edges ``(i, j)``, ``i < j``, between clusters joined by an edge."""
    where: dict[int, list[int]] = {}
    for ci, c in enumerate(clusters.clusters):
        for u in c:
            where.setdefault(u, []).append(ci)
    out = set()
    for a, b in level_graph.edges:
        for ci in where.get(a, ()):
            for cj in where.get(b, ()):
                if ci != cj:
                    out.add((min(ci, cj), max(ci, cj)))
    return out


def representative(cluster, densities) -> int:
    """Highest-density member; ties go to the smaller position."""
    return max(cluster, key=lambda z: (float(densities[z]), -z))


def aggregate(clusters: ClusterSet, h, densities) -> np.ndarray:
    """Hyper-node features: member mean plus the representative's embedding."""
    h = np.asarray(h, dtype=np.float64)
    out = np.empty((len(clusters.clusters), h.shape[1]))
    for ci, c in enumerate(clusters.clusters):
        if not c:
            raise GraphError(f"cluster {ci} is empty")
        idx = sorted(c)
        out[ci] = h[idx].mean(axis=0) + h[representative(c, densities)]
    return out


def aggregation_matrix(clusters: ClusterSet, densities, n: int) -> np.ndarray:
    """Linear map ``A`` with ``aggregate(...) == A @ h`` for fixed representatives."""
    A = np.zeros((len(clusters.clusters), n))
    for ci, c in enumerate(clusters.clusters):
        idx = sorted(c)
        A[ci, idx] = 1.0 / len(idx)
        A[ci, representative(c, densities)] += 1.0
    return A


def next_level(level_graph: LevelGraph, clusters: ClusterSet, h, densities) -> LevelGraph:
    level = level_graph.level + 1
    members = [frozenset().union(*(level_graph.members[u] for u in c)) for c in clusters.clusters]
    return LevelGraph(
        level=level,
        node_ids=[f"L{level}.{i}" for i in range(len(clusters.clusters))],
        edges=sorted(lift_edges(level_graph, clusters)),
        features=aggregate(clusters, h, densities),
        members=members,
    )


@dataclass
class Hierarchy:
    """Levels ``1..L`` of the decomposition and the clusterings between them.

    ``assignments[l]`` clusters ``levels[l]`` into the nodes of
    ``levels[l + 1]``; ``scores_h`` and ``densities`` hold the encoder output
    and node densities for every clustered level.
    """

    graph: CitationGraph
    levels: list[LevelGraph]
    assignments: list[ClusterSet] = field(default_factory=list)
    densities: list[np.ndarray] = field(default_factory=list)
    embeddings: list[np.ndarray] = field(default_factory=list)
    config: ClusterConfig = field(default_factory=ClusterConfig)

    @property
    def depth(self) -> int:
        return len(self.levels)

    def paper_clusters(self, level: int) -> list[frozenset[int]]:
        """Base-paper sets of the clusters produced at ``level`` (1-based)."""
        lg = self.levels[level - 1]
        return [frozenset().union(*(lg.members[u] for u in c)) for c in self.assignments[level - 1].clusters]

    def to_dict(self) -> dict:
        ids = self.graph.ids
        levels = []
        for l, lg in enumerate(self.levels):
            rec = {
                "level": lg.level,
                "node_ids": lg.node_ids,
                "edges": [list(e) for e in lg.edges],
                "members": [sorted(ids[p] for p in m) for m in lg.members],
                "features": lg.features.tolist(),
                "densities": self.densities[l].tolist() if l < len(self.densities) else None,
                "clusters": ([sorted(c) for c in self.assignments[l].clusters]
                             if l < len(self.assignments) else None),
            }
            levels.append(rec)
        return {"format": HIERARCHY_FORMAT, "version": HIERARCHY_VERSION,
                "config": asdict(self.config), "papers": ids, "levels": levels}

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path, graph: CitationGraph) -> "Hierarchy":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("format") != HIERARCHY_FORMAT:
            raise ValueError(f"{path}: not a hierarchy dump")
        if doc["papers"] != graph.ids:
            raise GraphError(f"{path}: paper list does not match the citation graph")
        levels, assignments, dens = [], [], []
        for rec in doc["levels"]:
            levels.append(LevelGraph(
                level=rec["level"], node_ids=rec["node_ids"],
                edges=[tuple(e) for e in rec["edges"]],
                features=np.array(rec["features"], dtype=np.float64).reshape(len(rec["node_ids"]), -1),
                members=[frozenset(graph.index(p) for p in m) for m in rec["members"]],
            ))
            if rec["clusters"] is not None:
                assignments.append(ClusterSet(rec["level"], [frozenset(c) for c in rec["clusters"]],
                                              overlap_allowed=rec["level"] == 1))
            if rec["densities"] is not None:
                dens.append(np.array(rec["densities"], dtype=np.float64))
        return cls(graph, levels, assignments, dens, [], ClusterConfig(**doc["config"]))


def build_hierarchy(graph: CitationGraph, X: EmbeddingMatrix, params: EncoderParams | None,
                    config: ClusterConfig | None = None, scorer: Scorer | None = None) -> Hierarchy:
    """Cluster level by level until the stop rule fires.

    Recursion stops when a level has at most ``root_size`` nodes, when
    ``max_levels`` is reached, or when clustering would not merge anything.
    ``scorer`` replaces the trained encoder, e.g. with a label oracle.
    """
    config = config or ClusterConfig()
    if scorer is None:
        if params is None:
            raise ValueError("either params or scorer is required")
        scorer = lambda lg, scope: score_level(lg, params, scope)  # noqa: E731
    lg = init_level_graph(graph, X)
    hier = Hierarchy(graph, [lg], config=config)
    while lg.n > config.root_size and lg.level < config.max_levels:
        scores = scorer(lg, config.scope)
        if lg.level == 1:
            clusters = soft_cluster_level1(lg, scores.probs, scores.densities, config.p_tau)
        else:
            clusters = hard_cluster(lg, scores.probs)
        if len(clusters) >= lg.n:
            logger.info("level %d: no progress, stopping", lg.level)
            break
        hier.assignments.append(clusters)
        hier.densities.append(scores.densities)
        hier.embeddings.append(scores.h)
        lg = next_level(lg, clusters, scores.h, scores.densities)
        hier.levels.append(lg)
        logger.info("level %d: %d clusters", lg.level - 1, len(clusters))
    return hier
