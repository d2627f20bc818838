"""Clustering metrics, the K-means baseline and a gold-label oracle scorer."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .encoder import LevelScores, PairProbTable, densities, scope_pairs
from .graph import EmbeddingMatrix, GraphError, LevelGraph
from .hiclust import ClusterSet, Hierarchy
from .labels import GoldHierarchyLabels

METRIC_NOTE = ("pairwise accuracy: fraction of unordered paper pairs on which the prediction "
               "and the gold labels agree about sharing a cluster (any shared cluster counts)")


def comembership(clusters: Sequence[frozenset[int]], n: int) -> np.ndarray:
    M = np.zeros((n, n), dtype=bool)
    for c in clusters:
        idx = np.fromiter(c, dtype=np.intp)
        M[np.ix_(idx, idx)] = True
    return M


def pairwise_accuracy(pred: Sequence[frozenset[int]], gold: Sequence[frozenset[int]], n: int | None = None) -> float:
    """Agreement on same-cluster membership over all unordered pairs.

    Both arguments are lists of paper-index sets; overlapping clusters are
    read as "share any cluster".
    """
    up = set().union(*pred) if pred else set()
    ug = set().union(*gold) if gold else set()
    if up != ug:
        raise GraphError("prediction and gold cover different papers")
    if n is None:
        n = max(up) + 1 if up else 0
    if n < 2:
        return 1.0
    iu = np.triu_indices(n, 1)
    return float(np.mean(comembership(pred, n)[iu] == comembership(gold, n)[iu]))


def _farthest_first(X: np.ndarray, k: int, rng) -> np.ndarray:
    centers = [int(rng.integers(len(X)))]
    dist = np.sum((X - X[centers[0]]) ** 2, axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(dist))
        centers.append(nxt)
        dist = np.minimum(dist, np.sum((X - X[nxt]) ** 2, axis=1))
    return X[centers].copy()


def kmeans_baseline(X: EmbeddingMatrix | np.ndarray, k: int, seed: int = 0,
                    max_iter: int = 100, tol: float = 1e-6) -> ClusterSet:
    """Lloyd's algorithm from a seeded farthest-first initialisation."""
    X = np.asarray(getattr(X, "rows", X), dtype=np.float64)
    n = len(X)
    if not 1 <= k <= n:
        raise ValueError(f"k={k} outside [1, {n}]")
    rng = np.random.default_rng(seed)
    C = _farthest_first(X, k, rng)
    for _ in range(max_iter):
        d = ((X[:, None, :] - C[None, :, :]) ** 2).sum(-1)
        assign = np.argmin(d, axis=1)
        new = C.copy()
        for j in range(k):
            if np.any(assign == j):
                new[j] = X[assign == j].mean(axis=0)
        shift = float(np.max(np.abs(new - C)))
        C = new
        if shift < tol:
            break
    d = ((X[:, None, :] - C[None, :, :]) ** 2).sum(-1)
    assign = np.argmin(d, axis=1)
    groups = [frozenset(np.flatnonzero(assign == j).tolist()) for j in range(k)]
    groups = sorted((g for g in groups if g), key=lambda c: (min(c), sorted(c)))
    return ClusterSet(1, groups)


class OracleScorer:
    """Scores hyper-node pairs from gold labels: ``high`` when the majority
    gold clusters of the two nodes agree at the node's level, else ``low``.
    Node embeddings are the level features unchanged."""

    def __init__(self, labels: GoldHierarchyLabels, high: float = 0.99, low: float = 0.01):
        self.labels, self.high, self.low = labels, high, low

    def _label(self, lg: LevelGraph, u: int) -> frozenset[str]:
        level = min(lg.level, self.labels.n_levels)
        gold = self.labels.assign[level - 1]
        if lg.level == 1:
            (p,) = lg.members[u]
            return gold[p]
        votes: dict[str, int] = {}
        for p in lg.members[u]:
            for c in gold[p]:
                votes[c] = votes.get(c, 0) + 1
        return frozenset([min(votes, key=lambda c: (-votes[c], c))])

    def __call__(self, lg: LevelGraph, scope: str = "neighbors") -> LevelScores:
        names = [self._label(lg, u) for u in range(lg.n)]
        table = PairProbTable()
        for i, j in scope_pairs(lg, scope):
            table[i, j] = self.high if not names[i].isdisjoint(names[j]) else self.low
        h = np.asarray(lg.features, dtype=np.float64)
        return LevelScores(h, table, densities(lg, h, table))


@dataclass
class EvalReport:
    levels: list[int]
    method: list[float]
    baselines: dict[str, list[float]] = field(default_factory=dict)
    n_papers: int = 0
    seed: int = 0
    metric: str = METRIC_NOTE
    meta: dict = field(default_factory=dict)

    @property
    def average(self) -> float:
        return float(np.mean(self.method)) if self.method else float("nan")

    def baseline_average(self, name: str) -> float:
        return float(np.mean(self.baselines[name]))

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["average"] = self.average
        doc["baseline_averages"] = {k: self.baseline_average(k) for k in sorted(self.baselines)}
        return doc

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def predicted_level(hier: Hierarchy, level: int) -> list[frozenset[int]]:
    """Paper clusters predicted at ``level``; levels beyond the hierarchy's
    depth reuse its coarsest clustering (a single all-paper cluster if the
    hierarchy never clustered)."""
    if not hier.assignments:
        return [frozenset(range(len(hier.graph)))]
    return hier.paper_clusters(min(level, len(hier.assignments)))


def evaluate_hierarchy(hier: Hierarchy, labels: GoldHierarchyLabels, X: EmbeddingMatrix | None = None,
                       seed: int = 0) -> EvalReport:
    n = labels.n_papers
    levels = list(range(1, labels.n_levels + 1))
    method = [pairwise_accuracy(predicted_level(hier, l), labels.clusters(l), n) for l in levels]
    report = EvalReport(levels, method, n_papers=n, seed=seed,
                        meta={"hierarchy_depth": hier.depth,
                              "clusters_per_level": [len(a) for a in hier.assignments]})
    if X is not None:
        report.baselines["kmeans"] = [
            pairwise_accuracy(kmeans_baseline(X, len(labels.clusters(l)), seed).clusters,
                              labels.clusters(l), n)
            for l in levels]
    return report
