"""Planted multi-level partition graphs with known gold hierarchies."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import CitationGraph, EmbeddingMatrix, PaperNode
from .labels import GoldHierarchyLabels

_TOPICS = [
    "graph", "neural", "clustering", "retrieval", "language", "vision", "robotics", "privacy",
    "optimization", "causal", "speech", "genomics", "federated", "bayesian", "quantum", "compiler",
    "recommendation", "translation", "reinforcement", "diffusion", "kernel", "sparse", "ranking", "audio",
]
_FILLER = ["study", "approach", "analysis", "framework", "results", "evaluation", "model", "data"]


@dataclass
class SynthConfig:
    """Nested block model.

    ``n_blocks[0]`` level-1 blocks of ``block_size`` papers are grouped
    contiguously into ``n_blocks[1]`` level-2 blocks, and so on. A pair of
    papers is linked with ``p_intra[l]`` when the finest level at which they
    share a block is ``l + 1`` (levels without an entry use ``p_inter``), and
    with ``p_inter`` when they share none. Embeddings are the sum of a
    common base vector and per-level block offsets of norm about
    ``spread[l]``, plus Gaussian noise with per-coordinate scale ``noise``.
    """

    n_blocks: tuple[int, ...] = (4, 2)
    block_size: int = 15
    p_intra: tuple[float, ...] = (0.9,)
    p_inter: float = 0.05
    noise: float = 0.1
    spread: tuple[float, ...] = (0.3, 0.15)
    dim: int = 16
    seed: int = 0
    edges_seed: int | None = None

    def __post_init__(self):
        self.n_blocks = tuple(self.n_blocks)
        self.p_intra = tuple(self.p_intra)
        self.spread = tuple(self.spread)
        if not self.n_blocks or min(self.n_blocks) < 1:
            raise ValueError("need at least one block per level")
        if self.block_size < 1 or self.dim < 2:
            raise ValueError("block_size must be >= 1 and dim >= 2")
        for a, b in zip(self.n_blocks, self.n_blocks[1:]):
            if a % b:
                raise ValueError(f"{a} blocks cannot nest evenly into {b}")
        for p in (*self.p_intra, self.p_inter):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"edge probability {p} outside [0, 1]")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")

    @property
    def n_papers(self) -> int:
        return self.n_blocks[0] * self.block_size

    def block_of(self, level: int) -> np.ndarray:
        """Block index of every paper at ``level`` (1-based)."""
        fine = np.repeat(np.arange(self.n_blocks[0]), self.block_size)
        return fine // (self.n_blocks[0] // self.n_blocks[level - 1])


@dataclass
class SynthInstance:
    graph: CitationGraph
    X: EmbeddingMatrix
    labels: GoldHierarchyLabels
    config: SynthConfig = field(repr=False, default=None)


def synth_graph(config: SynthConfig | None = None) -> SynthInstance:
    config = config or SynthConfig()
    rng = np.random.default_rng(config.seed)
    n, L, d = config.n_papers, len(config.n_blocks), config.dim
    blocks = [config.block_of(l) for l in range(1, L + 1)]

    # finest shared level per pair; 0 means none
    shared = np.zeros((n, n), dtype=int)
    for l in reversed(range(L)):
        same = blocks[l][:, None] == blocks[l][None, :]
        shared[same] = l + 1
    prob = np.full((n, n), config.p_inter)
    for l in range(L):
        p = config.p_intra[l] if l < len(config.p_intra) else config.p_inter
        prob[shared == l + 1] = p
    edge_rng = rng if config.edges_seed is None else np.random.default_rng(config.edges_seed)
    draws = edge_rng.random((n, n))
    flips = edge_rng.random((n, n)) < 0.5
    iu, ju = np.triu_indices(n, 1)
    keep = draws[iu, ju] < prob[iu, ju]
    ids = [f"p{i:04d}" for i in range(n)]
    edges = []
    for i, j, f in zip(iu[keep], ju[keep], flips[iu[keep], ju[keep]]):
        edges.append((ids[j], ids[i]) if f else (ids[i], ids[j]))

    base = rng.standard_normal(d)
    X = np.tile(base / np.linalg.norm(base), (n, 1))
    for l in range(L):
        scale = config.spread[l] if l < len(config.spread) else 0.0
        offsets = rng.standard_normal((config.n_blocks[l], d)) * scale / np.sqrt(d)
        X += offsets[blocks[l]]
    X += rng.standard_normal((n, d)) * config.noise

    nodes = []
    for i in range(n):
        words = [_TOPICS[(blocks[l][i] * (L - l) + 7 * l) % len(_TOPICS)] for l in reversed(range(L))]
        filler = _FILLER[rng.integers(len(_FILLER))]
        title = " ".join([*words, filler])
        abstract = f"On {' and '.join(words)}."
        nodes.append(PaperNode(ids[i], title, abstract))

    labels = GoldHierarchyLabels.from_flat(
        [[f"l{l + 1}b{b}" for b in blocks[l]] for l in range(L)])
    return SynthInstance(CitationGraph(nodes, edges), EmbeddingMatrix(X), labels, config)
