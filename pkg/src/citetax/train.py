"""Pre-training of the encoder and pair scorer on gold hierarchical labels.

Higher levels are built from the *gold* clusters while training (teacher
forcing): the level-``l`` hyper-nodes are the gold clusters of level
``l - 1`` and their features are aggregated from the current level-``l - 1``
embeddings. A base edge ``(a, b)`` supervises, at level ``l``, every
hyper-node pair containing ``a`` and ``b`` in both orientations; pairs
collapsed into one hyper-node are skipped. Scoring each orientation on its
own keeps the loss gradient alive when one orientation saturates, which the
averaged (symmetrised) probability used for clustering does not.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .encoder import (EncoderParams, PairProbTable, densities, encode_backward, encode_forward,
                      init_params, pair_probs_forward, scorer_backward, scorer_forward)
from .graph import CitationGraph, EmbeddingMatrix, LevelGraph, init_level_graph
from .hiclust import ClusterSet, aggregation_matrix, lift_edges
from .labels import GoldHierarchyLabels
from .losses import bce, bce_grad, himulcon_grad

logger = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    alpha: float = 1.0
    tau: float = 0.1
    delta: list[float] | None = None
    lam: float = 1.0
    p_tau: float = 0.5
    lr: float = 1e-3
    epochs: int = 500
    seed: int = 0
    patience: int = 100
    val_fraction: float = 0.2
    hidden: int = 64
    heads: int = 4
    n_layers: int = 2
    n_scorers: int = 1

    def __post_init__(self):
        if self.alpha < 0 or self.tau <= 0 or self.lam < 0:
            raise ValueError("need alpha >= 0, tau > 0, lam >= 0")
        if self.delta is not None and any(d < 0 for d in self.delta):
            raise ValueError("level weights must be non-negative")


@dataclass
class _Level:
    graph: LevelGraph
    # clusters of the previous level that form this level's nodes
    parent: ClusterSet | None
    # per supervised base edge: list of hyper-node pairs
    groups: dict[str, list[tuple[int, list[tuple[int, int]]]]] = field(default_factory=dict)


def _gold_cluster_set(prev: LevelGraph, labels: GoldHierarchyLabels, level: int) -> ClusterSet:
    """Group the nodes of ``prev`` by their gold cluster at ``level``."""
    gold = labels.assign[level - 1]
    names = sorted({c for cs in gold for c in cs})
    pos = {c: i for i, c in enumerate(names)}
    buckets: list[set[int]] = [set() for _ in names]
    for node, members in enumerate(prev.members):
        if prev.level == 1:
            (paper,) = members
            for c in gold[paper]:
                buckets[pos[c]].add(node)
        else:
            votes: dict[str, int] = {}
            for p in members:
                for c in gold[p]:
                    votes[c] = votes.get(c, 0) + 1
            best = min(votes, key=lambda c: (-votes[c], c))
            buckets[pos[best]].add(node)
    return ClusterSet(prev.level, [frozenset(b) for b in buckets if b], overlap_allowed=prev.level == 1)


class TrainingProblem:
    """Fixed teacher-forced structure for one graph and its gold labels."""

    def __init__(self, graph: CitationGraph, X: EmbeddingMatrix, labels: GoldHierarchyLabels,
                 val_fraction: float = 0.2, seed: int = 0):
        if labels.n_papers != len(graph):
            raise ValueError("labels do not cover the graph")
        self.labels = labels
        base = init_level_graph(graph, X)
        edges = list(base.edges)
        rng = np.random.default_rng(seed)
        order = rng.permutation(len(edges))
        n_val = int(round(val_fraction * len(edges))) if len(edges) > 1 else 0
        self.split = {"val": [edges[i] for i in sorted(order[:n_val])],
                      "train": [edges[i] for i in sorted(order[n_val:])]}
        self.levels: list[_Level] = [_Level(base, None)]
        for level in range(2, labels.n_levels + 1):
            prev = self.levels[-1].graph
            cs = _gold_cluster_set(prev, labels, level - 1)
            members = [frozenset().union(*(prev.members[u] for u in c)) for c in cs.clusters]
            lg = LevelGraph(level, [f"L{level}.{i}" for i in range(len(cs))],
                            sorted(lift_edges(prev, cs)), np.zeros((len(cs), 1)), members)
            self.levels.append(_Level(lg, cs))
        for lv in self.levels:
            where: dict[int, list[int]] = {}
            for i, m in enumerate(lv.graph.members):
                for p in m:
                    where.setdefault(p, []).append(i)
            for name, split_edges in self.split.items():
                groups = []
                for e, (a, b) in enumerate(split_edges):
                    pairs = [(i, j) for i in where[a] for j in where[b] if i != j]
                    if pairs:
                        groups.append((e, pairs))
                lv.groups[name] = groups

    def targets(self, level: int, split: str) -> np.ndarray:
        edges = self.split[split]
        groups = self.levels[level - 1].groups[split]
        return np.array([1.0 if self.labels.same(level, *edges[e]) else 0.0 for e, _ in groups])

    def supervised_edges(self, split: str = "train") -> list[list[tuple[int, int]]]:
        """Base edges that actually supervise each level (collapsed ones removed)."""
        return [[self.split[split][e] for e, _ in lv.groups[split]] for lv in self.levels]


@dataclass
class ObjectiveResult:
    loss: float
    cluster: float
    contrastive: float
    grads: dict | None
    edge_probs: list[np.ndarray]
    h: np.ndarray


def objective(params: EncoderParams, problem: TrainingProblem, config: TrainConfig,
              split: str = "train", with_grad: bool = True) -> ObjectiveResult:
    """Clustering loss plus ``alpha`` times the contrastive loss, with gradients."""
    grads = params.zeros_like() if with_grad else None
    caches = []
    cluster_total = 0.0
    edge_probs = []
    prev_h = None
    aggs = []
    for idx, lv in enumerate(problem.levels):
        lg = lv.graph
        if idx > 0:
            prev = problem.levels[idx - 1].graph
            # representatives follow the current densities but are held fixed for the gradient
            p_prev, _ = pair_probs_forward(prev_h, *_edge_arrays(prev), params, prev.level)
            table = PairProbTable()
            for (i, j), val in zip(prev.edges, p_prev):
                table[i, j] = float(val)
            A = aggregation_matrix(lv.parent, densities(prev, prev_h, table), prev.n)
            aggs.append(A)
            lg.features = A @ prev_h
        h, cache = encode_forward(lg, params)
        groups = lv.groups[split]
        term = None
        if groups:
            # every supervised hyper-node pair is scored in both orientations
            flat = [pr for _, prs in groups for pr in prs]
            counts = np.array([len(prs) for _, prs in groups])
            owner = np.repeat(np.arange(len(groups)), counts)
            q_edge = problem.targets(lg.level, split)
            u, v = map(np.array, zip(*flat))
            uu, vv = np.concatenate([u, v]), np.concatenate([v, u])
            p_ord, pcache = scorer_forward(h, uu, vv, params, lg.level)
            q = np.concatenate([q_edge[owner], q_edge[owner]])
            cluster_total += float(bce(p_ord, q).mean())
            m = len(u)
            p_sym = 0.5 * (p_ord[:m] + p_ord[m:])
            edge_probs.append(np.bincount(owner, weights=p_sym) / counts)
            term = (pcache, p_ord, q)
        else:
            edge_probs.append(np.array([]))
        caches.append((cache, term, h))
        prev_h = h

    L = problem.labels.n_levels
    pos = [problem.labels.positives(l) for l in range(1, L + 1)]
    base_h = caches[0][2]
    delta = config.delta if config.delta is not None else [1.0] * L
    con, dcon = himulcon_grad(base_h, pos, delta, config.tau)
    loss = cluster_total + config.alpha * con

    if with_grad:
        dfeat_next = None
        for idx in reversed(range(len(problem.levels))):
            cache, term, h = caches[idx]
            dh = np.zeros_like(h)
            if term is not None:
                pcache, p_ord, q = term
                dh += scorer_backward(bce_grad(p_ord, q) / len(p_ord), pcache, h.shape[0], params, grads)
            if dfeat_next is not None:
                dh += aggs[idx].T @ dfeat_next
            if idx == 0:
                dh += config.alpha * dcon
            dfeat_next = encode_backward(cache, dh, params, grads)
    return ObjectiveResult(loss, cluster_total, con, grads, edge_probs, base_h)


def _edge_arrays(lg: LevelGraph):
    if not lg.edges:
        return np.array([], dtype=np.intp), np.array([], dtype=np.intp)
    u, v = zip(*lg.edges)
    return np.array(u), np.array(v)


class Adam:
    def __init__(self, params: EncoderParams, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.t = 0

    def step(self, params: EncoderParams, grads: dict) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params.tensors[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class TrainResult:
    params: EncoderParams
    history: list[dict]
    best_epoch: int

    def save_report(self, path, config: TrainConfig | None = None) -> None:
        doc = {"best_epoch": self.best_epoch, "epochs": self.history}
        if config is not None:
            doc["config"] = asdict(config)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")


def edge_accuracy(p_edge: np.ndarray, q: np.ndarray, threshold: float = 0.5) -> float:
    if len(q) == 0:
        return float("nan")
    return float(np.mean((p_edge > threshold) == (q > 0.5)))


def train_clustering(graph: CitationGraph, X: EmbeddingMatrix, labels: GoldHierarchyLabels,
                     config: TrainConfig | None = None, params: EncoderParams | None = None) -> TrainResult:
    """Full-batch Adam on the clustering objective with early stopping on the
    validation clustering loss. Returns the best-validation parameters."""
    config = config or TrainConfig()
    problem = TrainingProblem(graph, X, labels, config.val_fraction, config.seed)
    if params is None:
        params = init_params(X.dim, config.hidden, config.heads, config.n_layers,
                             n_scorers=config.n_scorers, seed=config.seed)
    params = params.copy()
    opt = Adam(params, config.lr)
    has_val = any(lv.groups["val"] for lv in problem.levels)

    def evaluate(epoch):
        tr = objective(params, problem, config, "train", with_grad=True)
        if not np.isfinite(tr.loss):
            raise TrainingDiverged(epoch)
        rec = {"epoch": epoch, "loss": tr.loss, "cluster": tr.cluster, "contrastive": tr.contrastive}
        if has_val:
            va = objective(params, problem, config, "val", with_grad=False)
            rec["val_cluster"] = va.cluster
            rec["val_acc_l1"] = edge_accuracy(va.edge_probs[0], problem.targets(1, "val"), config.p_tau)
        return tr, rec

    history = []
    best = params.copy()
    best_score, best_epoch, stale = np.inf, 0, 0
    for epoch in range(config.epochs + 1):
        tr, rec = evaluate(epoch)
        history.append(rec)
        score = rec.get("val_cluster", tr.loss)
        if score < best_score - 1e-12:
            best_score, best_epoch, stale = score, epoch, 0
            best = params.copy()
        else:
            stale += 1
            if stale >= config.patience:
                logger.info("early stop at epoch %d (best %d)", epoch, best_epoch)
                break
        if epoch < config.epochs:
            opt.step(params, tr.grads)
    return TrainResult(best, history, best_epoch)
