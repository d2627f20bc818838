"""Citation graphs, embedding ingestion and the base level graph.

File formats
------------
nodes file
    JSON Lines, UTF-8. One object per line with keys ``id``, ``title`` and
    ``abstract``. Blank lines are skipped.
edges file
    One citation per line, ``src<TAB>dst`` (the citing paper first). Blank
    lines and lines starting with ``#`` are skipped.
embeddings file (text)
    JSON Lines, one ``{"id": ..., "vector": [...]}`` object per line.
embeddings file (binary)
    ``b"CTXEMB01"`` magic, then little-endian ``uint32`` row count ``n`` and
    dimension ``d``, then ``n`` ids each as ``uint16`` byte length followed by
    UTF-8 bytes, then ``n * d`` little-endian ``float32`` values in row-major
    order.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

logger = logging.getLogger(__name__)

EMB_MAGIC = b"CTXEMB01"

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class GraphError(ValueError):
    """Raised for malformed or inconsistent graph input."""


@dataclass(frozen=True)
class PaperNode:
    id: str
    title: str = ""
    abstract: str = ""

    @property
    def text(self) -> str:
        return " ".join(s for s in (self.title, self.abstract) if s)


@dataclass
class CitationGraph:
    """Directed citation graph over papers.

    ``edges`` holds ``(citing, cited)`` id pairs. Construction validates the
    node ids, drops self-citations and removes duplicate edges; the number of
    dropped records is kept in ``dropped_self_loops`` and
    ``dropped_duplicates``.
    """

    nodes: list[PaperNode]
    edges: list[tuple[str, str]] = field(default_factory=list)
    dropped_self_loops: int = 0
    dropped_duplicates: int = 0

    def __post_init__(self):
        seen: dict[str, int] = {}
        for i, node in enumerate(self.nodes):
            if not node.id:
                raise GraphError(f"node #{i} has an empty id")
            if node.id in seen:
                raise GraphError(f"duplicate node id {node.id!r}")
            seen[node.id] = i
        self._index = seen

        clean: list[tuple[str, str]] = []
        uniq: set[tuple[str, str]] = set()
        for src, dst in self.edges:
            for end in (src, dst):
                if end not in seen:
                    raise GraphError(f"edge ({src!r}, {dst!r}) names unknown node {end!r}")
            if src == dst:
                self.dropped_self_loops += 1
                continue
            if (src, dst) in uniq:
                self.dropped_duplicates += 1
                continue
            uniq.add((src, dst))
            clean.append((src, dst))
        self.edges = clean
        if self.dropped_self_loops:
            logger.warning("dropped %d self-citation edge(s)", self.dropped_self_loops)

    @property
    def ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    def __len__(self) -> int:
        return len(self.nodes)

    def index(self, node_id: str) -> int:
        try:
            return self._index[node_id]
        except KeyError:
            raise GraphError(f"unknown node id {node_id!r}") from None

    def node(self, node_id: str) -> PaperNode:
        return self.nodes[self.index(node_id)]

    def __eq__(self, other):
        if not isinstance(other, CitationGraph):
            return NotImplemented
        return self.nodes == other.nodes and self.edges == other.edges

    def save(self, nodes_path, edges_path) -> None:
        with open(nodes_path, "w", encoding="utf-8") as fh:
            for n in self.nodes:
                rec = {"id": n.id, "title": n.title, "abstract": n.abstract}
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        with open(edges_path, "w", encoding="utf-8") as fh:
            for src, dst in self.edges:
                fh.write(f"{src}\t{dst}\n")


def _read_lines(path) -> Iterable[tuple[int, str]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if line.strip():
                yield lineno, line


def load_citation_graph(nodes_path, edges_path) -> CitationGraph:
    nodes = []
    for lineno, line in _read_lines(nodes_path):
        try:
            rec = json.loads(line)
            node = PaperNode(str(rec["id"]), rec.get("title") or "", rec.get("abstract") or "")
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise GraphError(f"{nodes_path}:{lineno}: malformed node record ({exc})") from None
        nodes.append(node)

    edges = []
    for lineno, line in _read_lines(edges_path):
        if line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise GraphError(f"{edges_path}:{lineno}: expected 'src<TAB>dst'")
        edges.append((parts[0], parts[1]))

    graph = CitationGraph(nodes, edges)
    logger.info(
        "loaded %d nodes, %d edges (%d self-loops, %d duplicates dropped)",
        len(graph.nodes), len(graph.edges), graph.dropped_self_loops, graph.dropped_duplicates,
    )
    return graph


@dataclass
class EmbeddingMatrix:
    """Row-aligned paper embeddings, one row per graph node."""

    rows: np.ndarray

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2:
            raise GraphError("embedding matrix must be 2-D")
        if self.rows.shape[1] < 2:
            raise GraphError(f"embedding dimension must be >= 2, got {self.rows.shape[1]}")
        if not np.all(np.isfinite(self.rows)):
            bad = int(np.argwhere(~np.isfinite(self.rows))[0, 0])
            raise GraphError(f"non-finite value in embedding row {bad}")

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return self.rows.shape[0]


def load_embeddings(path, graph: CitationGraph) -> EmbeddingMatrix:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, "rb") as fh:
        head = fh.read(len(EMB_MAGIC))
    if head == EMB_MAGIC:
        table = _read_binary_embeddings(path)
    else:
        table = {}
        dim = None
        for lineno, line in _read_lines(path):
            try:
                rec = json.loads(line)
                vid, vec = str(rec["id"]), [float(v) for v in rec["vector"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise GraphError(f"{path}:{lineno}: malformed embedding record ({exc})") from None
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise GraphError(f"{path}:{lineno}: dimension mismatch for {vid!r}: {len(vec)} != {dim}")
            table[vid] = vec

    for vid in table:
        if vid not in graph._index:
            raise GraphError(f"embedding row for unknown node id {vid!r}")
    missing = [i for i in graph.ids if i not in table]
    if missing:
        raise GraphError(f"no embedding for node id {missing[0]!r} ({len(missing)} missing)")
    return EmbeddingMatrix(np.array([table[i] for i in graph.ids], dtype=np.float64))


def _read_binary_embeddings(path) -> dict[str, list[float]]:
    data = Path(path).read_bytes()
    off = len(EMB_MAGIC)
    n, d = struct.unpack_from("<II", data, off)
    off += 8
    ids = []
    for _ in range(n):
        (ln,) = struct.unpack_from("<H", data, off)
        off += 2
        ids.append(data[off:off + ln].decode("utf-8"))
        off += ln
    if len(data) - off != 4 * n * d:
        raise GraphError(f"{path}: truncated embedding payload")
    mat = np.frombuffer(data, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    return {vid: mat[i].astype(np.float64).tolist() for i, vid in enumerate(ids)}


def save_embeddings(path, graph: CitationGraph, X: EmbeddingMatrix, binary: bool = False) -> None:
    if binary:
        with open(path, "wb") as fh:
            fh.write(EMB_MAGIC)
            fh.write(struct.pack("<II", len(X), X.dim))
            for vid in graph.ids:
                raw = vid.encode("utf-8")
                fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(X.rows.astype("<f4").tobytes())
        return
    with open(path, "w", encoding="utf-8") as fh:
        for vid, row in zip(graph.ids, X.rows):
            fh.write(json.dumps({"id": vid, "vector": [float(v) for v in row]}) + "\n")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _bucket(token: str, dim: int, seed: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=str(seed).encode()).digest()
    return int.from_bytes(digest, "little") % dim


def fallback_embed(graph: CitationGraph, dim: int = 64, seed: int = 0, field: str = "title+abstract") -> EmbeddingMatrix:
    """Hashed bag-of-tokens embedding, a deterministic offline stand-in for a
    dense language model. ``field`` selects ``"title+abstract"``, ``"title"``
    or ``"abstract"`` as the document text."""
    if dim < 2:
        raise GraphError("dim must be >= 2")
    rows = np.zeros((len(graph), dim))
    for i, node in enumerate(graph.nodes):
        if not node.title.strip() and not node.abstract.strip():
            raise GraphError(f"node {node.id!r} has no text to embed")
        text = {"title": node.title, "abstract": node.abstract}.get(field, node.text)
        for tok in tokenize(text):
            rows[i, _bucket(tok, dim, seed)] += 1.0
        norm = np.linalg.norm(rows[i])
        if norm == 0:
            raise GraphError(f"node {node.id!r} has no tokens in field {field!r}")
        rows[i] /= norm
    return EmbeddingMatrix(rows)


@dataclass
class LevelGraph:
    """One level of the hierarchical decomposition.

    Nodes are addressed by position; ``node_ids`` gives their names and
    ``members[i]`` the base paper indices hyper-node ``i`` coarsens to.
    ``edges`` holds undirected pairs ``(i, j)`` with ``i < j``.
    """

    level: int
    node_ids: list[str]
    edges: list[tuple[int, int]]
    features: np.ndarray
    members: list[frozenset[int]]

    def __post_init__(self):
        n = len(self.node_ids)
        if self.features.shape[0] != n:
            raise GraphError(f"feature rows ({self.features.shape[0]}) != node count ({n})")
        if len(self.members) != n:
            raise GraphError("members must list one set per node")
        adj: list[set[int]] = [set() for _ in range(n)]
        for i, j in self.edges:
            adj[i].add(j)
            adj[j].add(i)
        self._adj = [frozenset(a) for a in adj]

    @property
    def n(self) -> int:
        return len(self.node_ids)

    def neighbors(self, u: int) -> frozenset[int]:
        if not 0 <= u < self.n:
            raise GraphError(f"unknown node index {u}")
        return self._adj[u]

    def index(self, node_id: str) -> int:
        try:
            return self.node_ids.index(node_id)
        except ValueError:
            raise GraphError(f"unknown node id {node_id!r}") from None


def init_level_graph(graph: CitationGraph, X: EmbeddingMatrix) -> LevelGraph:
    if len(X) != len(graph):
        raise GraphError(f"embedding rows ({len(X)}) do not match node count ({len(graph)})")
    pairs = set()
    for src, dst in graph.edges:
        i, j = graph.index(src), graph.index(dst)
        pairs.add((min(i, j), max(i, j)))
    return LevelGraph(
        level=1,
        node_ids=graph.ids,
        edges=sorted(pairs),
        features=X.rows.copy(),
        members=[frozenset([i]) for i in range(len(graph))],
    )


def neighbors(level_graph: LevelGraph, u) -> set:
    """Undirected neighbourhood of ``u`` given by id (str) or index (int).
    The result uses the same addressing as the query."""
    if isinstance(u, str):
        idx = level_graph.index(u)
        return {level_graph.node_ids[k] for k in level_graph.neighbors(idx)}
    return set(level_graph.neighbors(u))
