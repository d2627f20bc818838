"""Graph attention encoder, pairwise same-cluster scorer and node density.

Everything here is plain numpy with hand-written backward passes so that the
clustering objective can be trained without an autodiff framework. The
backward functions are exercised against central finite differences in the
test-suite.

Checkpoint layout (little-endian)::

    b"CTXCKPT1"               magic
    uint32                    format version (1)
    uint32 + bytes            length-prefixed UTF-8 JSON metadata
    uint32                    tensor count T
    T x (uint16 + bytes,      tensor name
         uint8,               ndim
         ndim x uint32)       shape
    float64 payload           all tensors, row-major, in table order
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import GraphError, LevelGraph

CKPT_MAGIC = b"CTXCKPT1"
CKPT_VERSION = 1


@dataclass
class EncoderParams:
    """Named parameter tensors plus the architecture metadata needed to use them.

    Each attention layer adds its input back to the concatenated heads when
    ``residual`` is set; without it, attention on a densely connected level
    tends to give every node the same output.

    Tensor names: ``w_in`` (input projection, level 1 only), ``gat{l}.W`` with
    shape ``(heads, d_h, d_h // heads)``, ``gat{l}.a_src`` / ``gat{l}.a_dst``
    with shape ``(heads, d_h // heads)``, and for each scorer ``s`` the dense
    layers ``scorer{s}.W1, b1, W2, b2, W3, b3``.
    """

    tensors: dict[str, np.ndarray]
    heads: int = 4
    n_layers: int = 2
    n_scorers: int = 1
    negative_slope: float = 0.2
    residual: bool = True

    @property
    def in_dim(self) -> int:
        return self.tensors["w_in"].shape[0]

    @property
    def hidden(self) -> int:
        return self.tensors["w_in"].shape[1]

    def scorer_for(self, level: int) -> int:
        return min(level, self.n_scorers) - 1

    def copy(self) -> "EncoderParams":
        return EncoderParams({k: v.copy() for k, v in self.tensors.items()},
                             self.heads, self.n_layers, self.n_scorers, self.negative_slope, self.residual)

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def size(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def __eq__(self, other):
        if not isinstance(other, EncoderParams):
            return NotImplemented
        return (self.meta() == other.meta() and self.tensors.keys() == other.tensors.keys()
                and all(np.array_equal(v, other.tensors[k]) for k, v in self.tensors.items()))

    def meta(self) -> dict:
        return {"heads": self.heads, "n_layers": self.n_layers,
                "n_scorers": self.n_scorers, "negative_slope": self.negative_slope,
                "residual": self.residual}

    def save(self, path) -> None:
        meta = json.dumps(self.meta(), sort_keys=True).encode("utf-8")
        out = bytearray(CKPT_MAGIC)
        out += struct.pack("<II", CKPT_VERSION, len(meta)) + meta
        out += struct.pack("<I", len(self.tensors))
        for name, arr in self.tensors.items():
            raw = name.encode("utf-8")
            out += struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
            out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        for arr in self.tensors.values():
            out += np.ascontiguousarray(arr, dtype="<f8").tobytes()
        Path(path).write_bytes(bytes(out))

    @classmethod
    def load(cls, path) -> "EncoderParams":
        data = Path(path).read_bytes()
        if not data.startswith(CKPT_MAGIC):
            raise ValueError(f"{path}: not a parameter checkpoint")
        off = len(CKPT_MAGIC)
        version, meta_len = struct.unpack_from("<II", data, off)
        if version != CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        off += 8
        meta = json.loads(data[off:off + meta_len].decode("utf-8"))
        off += meta_len
        (count,) = struct.unpack_from("<I", data, off)
        off += 4
        table = []
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + ln].decode("utf-8")
            off += ln
            (ndim,) = struct.unpack_from("<B", data, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            table.append((name, shape))
        tensors = {}
        for name, shape in table:
            size = int(np.prod(shape))
            tensors[name] = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64)
            off += 8 * size
        return cls(tensors, **meta)


def init_params(in_dim: int, hidden: int = 64, heads: int = 4, n_layers: int = 2,
                scorer_hidden: int | None = None, n_scorers: int = 1, seed: int = 0,
                negative_slope: float = 0.2, residual: bool = True) -> EncoderParams:
    """Seeded random initialisation; weights are drawn with variance 1/fan_in."""
    if hidden % heads:
        raise ValueError(f"hidden width {hidden} is not divisible by {heads} heads")
    rng = np.random.default_rng(seed)
    m = scorer_hidden or hidden
    f = hidden // heads
    t: dict[str, np.ndarray] = {"w_in": rng.standard_normal((in_dim, hidden)) / np.sqrt(in_dim)}
    for l in range(n_layers):
        t[f"gat{l}.W"] = rng.standard_normal((heads, hidden, f)) / np.sqrt(hidden)
        t[f"gat{l}.a_src"] = rng.standard_normal((heads, f)) / np.sqrt(f)
        t[f"gat{l}.a_dst"] = rng.standard_normal((heads, f)) / np.sqrt(f)
    for s in range(n_scorers):
        t[f"scorer{s}.W1"] = rng.standard_normal((2 * hidden, m)) / np.sqrt(2 * hidden)
        t[f"scorer{s}.b1"] = np.zeros(m)
        t[f"scorer{s}.W2"] = rng.standard_normal((m, m)) / np.sqrt(m)
        t[f"scorer{s}.b2"] = np.zeros(m)
        t[f"scorer{s}.W3"] = rng.standard_normal((m, 2)) / np.sqrt(m)
        t[f"scorer{s}.b3"] = np.zeros(2)
    return EncoderParams(t, heads, n_layers, n_scorers, negative_slope, residual)


# -- graph attention ---------------------------------------------------------

def attention_edges(level_graph: LevelGraph) -> tuple[np.ndarray, np.ndarray]:
    """Receiver/sender arrays over both edge directions plus self-loops."""
    n = level_graph.n
    recv = [i for i in range(n)]
    send = [i for i in range(n)]
    for i, j in level_graph.edges:
        recv += [i, j]
        send += [j, i]
    return np.array(recv, dtype=np.intp), np.array(send, dtype=np.intp)


def _elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))


def _segment_softmax(e, recv, n):
    top = np.full(n, -np.inf)
    np.maximum.at(top, recv, e)
    ex = np.exp(e - top[recv])
    tot = np.zeros(n)
    np.add.at(tot, recv, ex)
    return ex / tot[recv]


def _gat_layer(x, W, a_src, a_dst, recv, send, slope):
    n = x.shape[0]
    outs, caches = [], []
    for k in range(W.shape[0]):
        z = x @ W[k]
        pre = (z @ a_src[k])[recv] + (z @ a_dst[k])[send]
        e = np.where(pre > 0, pre, slope * pre)
        alpha = _segment_softmax(e, recv, n)
        out = np.zeros_like(z)
        np.add.at(out, recv, alpha[:, None] * z[send])
        outs.append(out)
        caches.append((z, pre, alpha))
    return np.concatenate(outs, axis=1), caches


def _gat_layer_backward(dout, x, W, a_src, a_dst, recv, send, slope, caches):
    n = x.shape[0]
    f = W.shape[2]
    dx = np.zeros_like(x)
    dW = np.zeros_like(W)
    da_src = np.zeros_like(a_src)
    da_dst = np.zeros_like(a_dst)
    for k, (z, pre, alpha) in enumerate(caches):
        g = dout[:, k * f:(k + 1) * f]
        dz = np.zeros_like(z)
        np.add.at(dz, send, alpha[:, None] * g[recv])
        dalpha = np.einsum("ef,ef->e", g[recv], z[send])
        weighted = np.zeros(n)
        np.add.at(weighted, recv, alpha * dalpha)
        de = alpha * (dalpha - weighted[recv])
        dpre = np.where(pre > 0, de, slope * de)
        ds = np.zeros(n)
        np.add.at(ds, recv, dpre)
        dt = np.zeros(n)
        np.add.at(dt, send, dpre)
        dz += np.outer(ds, a_src[k]) + np.outer(dt, a_dst[k])
        da_src[k] = ds @ z
        da_dst[k] = dt @ z
        dW[k] = x.T @ dz
        dx += dz @ W[k].T
    return dx, dW, da_src, da_dst


@dataclass
class EncodeCache:
    level: int
    x0: np.ndarray
    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    heads: list = field(default_factory=list)
    recv: np.ndarray | None = None
    send: np.ndarray | None = None


def encode_forward(level_graph: LevelGraph, params: EncoderParams):
    """Run the encoder; returns ``(h, cache)`` for :func:`encode_backward`."""
    x = np.asarray(level_graph.features, dtype=np.float64)
    t = params.tensors
    if level_graph.level == 1:
        if x.shape[1] != params.in_dim:
            raise GraphError(f"feature dim {x.shape[1]} != encoder input dim {params.in_dim}")
        x0 = x
        x = x @ t["w_in"]
    else:
        if x.shape[1] != params.hidden:
            raise GraphError(f"level-{level_graph.level} feature dim {x.shape[1]} != hidden {params.hidden}")
        x0 = x
    recv, send = attention_edges(level_graph)
    cache = EncodeCache(level_graph.level, x0, recv=recv, send=send)
    for l in range(params.n_layers):
        cache.inputs.append(x)
        out, hc = _gat_layer(x, t[f"gat{l}.W"], t[f"gat{l}.a_src"], t[f"gat{l}.a_dst"],
                             recv, send, params.negative_slope)
        if params.residual:
            out = out + x
        cache.pre.append(out)
        cache.heads.append(hc)
        x = _elu(out) if l < params.n_layers - 1 else out
    return x, cache


def encode_backward(cache: EncodeCache, dh: np.ndarray, params: EncoderParams,
                    grads: dict[str, np.ndarray]) -> np.ndarray:
    """Accumulate parameter gradients into ``grads``; return d(loss)/d(features)."""
    t = params.tensors
    g = dh
    for l in reversed(range(params.n_layers)):
        if l < params.n_layers - 1:
            pre = cache.pre[l]
            g = g * np.where(pre > 0, 1.0, np.exp(np.minimum(pre, 0)))
        dx, dW, das, dad = _gat_layer_backward(
            g, cache.inputs[l], t[f"gat{l}.W"], t[f"gat{l}.a_src"], t[f"gat{l}.a_dst"],
            cache.recv, cache.send, params.negative_slope, cache.heads[l])
        grads[f"gat{l}.W"] += dW
        grads[f"gat{l}.a_src"] += das
        grads[f"gat{l}.a_dst"] += dad
        g = dx + g if params.residual else dx
    if cache.level == 1:
        grads["w_in"] += cache.x0.T @ g
        g = g @ t["w_in"].T
    return g


def encode(level_graph: LevelGraph, params: EncoderParams) -> np.ndarray:
    return encode_forward(level_graph, params)[0]


# -- pair scorer --------------------------------------------------------------

def _scorer_forward(h, u, v, params: EncoderParams, s: int):
    t = params.tensors
    P = np.concatenate([h[u], h[v]], axis=1)
    a1 = np.tanh(P @ t[f"scorer{s}.W1"] + t[f"scorer{s}.b1"])
    a2 = np.tanh(a1 @ t[f"scorer{s}.W2"] + t[f"scorer{s}.b2"])
    logits = a2 @ t[f"scorer{s}.W3"] + t[f"scorer{s}.b3"]
    # P(same) = softmax(logits)[0]
    diff = logits[:, 0] - logits[:, 1]
    p = 0.5 * (1.0 + np.tanh(0.5 * diff))
    return p, (P, a1, a2, p)


def _scorer_backward(dp, cache, u, v, n, params: EncoderParams, s: int, grads):
    t = params.tensors
    P, a1, a2, p = cache
    dd = dp * p * (1 - p)
    dlogits = np.stack([dd, -dd], axis=1)
    grads[f"scorer{s}.W3"] += a2.T @ dlogits
    grads[f"scorer{s}.b3"] += dlogits.sum(0)
    dz2 = (dlogits @ t[f"scorer{s}.W3"].T) * (1 - a2 ** 2)
    grads[f"scorer{s}.W2"] += a1.T @ dz2
    grads[f"scorer{s}.b2"] += dz2.sum(0)
    dz1 = (dz2 @ t[f"scorer{s}.W2"].T) * (1 - a1 ** 2)
    grads[f"scorer{s}.W1"] += P.T @ dz1
    grads[f"scorer{s}.b1"] += dz1.sum(0)
    dP = dz1 @ t[f"scorer{s}.W1"].T
    d = P.shape[1] // 2
    dh = np.zeros((n, d))
    np.add.at(dh, u, dP[:, :d])
    np.add.at(dh, v, dP[:, d:])
    return dh


def scorer_forward(h, u, v, params: EncoderParams, level: int = 1):
    """Ordered-pair probabilities for index arrays ``u``, ``v``."""
    s = params.scorer_for(level)
    p, cache = _scorer_forward(h, np.asarray(u, dtype=np.intp), np.asarray(v, dtype=np.intp), params, s)
    return p, (cache, np.asarray(u, dtype=np.intp), np.asarray(v, dtype=np.intp), s)


def scorer_backward(dp, cache, n, params: EncoderParams, grads) -> np.ndarray:
    sc, u, v, s = cache
    return _scorer_backward(dp, sc, u, v, n, params, s, grads)


def pair_probs_forward(h, u, v, params: EncoderParams, level: int = 1):
    """Symmetrised same-cluster probabilities for index arrays ``u``, ``v``."""
    u = np.asarray(u, dtype=np.intp)
    v = np.asarray(v, dtype=np.intp)
    s = params.scorer_for(level)
    both_u = np.concatenate([u, v])
    both_v = np.concatenate([v, u])
    p, cache = _scorer_forward(h, both_u, both_v, params, s)
    m = len(u)
    return 0.5 * (p[:m] + p[m:]), (cache, both_u, both_v, s)


def pair_probs_backward(dp, cache, n, params: EncoderParams, grads) -> np.ndarray:
    sc, both_u, both_v, s = cache
    dfull = 0.5 * np.concatenate([dp, dp])
    return _scorer_backward(dfull, sc, both_u, both_v, n, params, s, grads)


def pair_prob(h, u: int, v: int, params: EncoderParams, level: int = 1) -> float:
    """P(same cluster) for the ordered pair ``[h_u; h_v]``."""
    if u == v:
        raise ValueError("pair_prob needs two distinct nodes")
    p, _ = _scorer_forward(np.asarray(h, dtype=np.float64), np.array([u]), np.array([v]),
                           params, params.scorer_for(level))
    return float(p[0])


def symmetrized_pair_prob(h, u: int, v: int, params: EncoderParams, level: int = 1) -> float:
    return (pair_prob(h, u, v, params, level) + pair_prob(h, v, u, params, level)) / 2


# -- density --------------------------------------------------------------------

class PairProbTable(dict):
    """Unordered pair -> probability; keys are stored as ``(min, max)``."""

    def __setitem__(self, key, value):
        u, v = key
        super().__setitem__((min(u, v), max(u, v)), value)

    def __getitem__(self, key):
        u, v = key
        try:
            return super().__getitem__((min(u, v), max(u, v)))
        except KeyError:
            raise KeyError(f"no probability for pair ({u}, {v})") from None

    def __contains__(self, key):
        u, v = key
        return super().__contains__((min(u, v), max(u, v)))


def cosine_matrix(h) -> np.ndarray:
    norms = np.linalg.norm(h, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = h / safe[:, None]
    unit[norms == 0] = 0.0
    return unit @ unit.T


def _cos(a, b) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


def node_density(level_graph: LevelGraph, h, probs, u: int) -> float:
    nbrs = sorted(level_graph.neighbors(u))
    if not nbrs:
        return 0.0
    return sum(probs[u, k] * _cos(h[u], h[k]) for k in nbrs) / len(nbrs)


def densities(level_graph: LevelGraph, h, probs) -> np.ndarray:
    cos = cosine_matrix(h)
    out = np.zeros(level_graph.n)
    for u in range(level_graph.n):
        nbrs = sorted(level_graph.neighbors(u))
        if nbrs:
            out[u] = sum(probs[u, k] * cos[u, k] for k in nbrs) / len(nbrs)
    return out


@dataclass
class LevelScores:
    h: np.ndarray
    probs: PairProbTable
    densities: np.ndarray


def scope_pairs(level_graph: LevelGraph, scope: str = "neighbors") -> list[tuple[int, int]]:
    """Unordered pairs to score. Under ``"neighbors"`` an isolated node is
    paired with every other node so hard clustering can still pick a partner."""
    n = level_graph.n
    if scope == "all-pairs":
        return [(i, j) for i in range(n) for j in range(i + 1, n)]
    if scope != "neighbors":
        raise ValueError(f"unknown scope {scope!r}")
    pairs = set(level_graph.edges)
    if n > 1:
        for u in range(n):
            if not level_graph.neighbors(u):
                pairs.update((min(u, v), max(u, v)) for v in range(n) if v != u)
    return sorted(pairs)


def score_level(level_graph: LevelGraph, params: EncoderParams, scope: str = "neighbors") -> LevelScores:
    h = encode(level_graph, params)
    pairs = scope_pairs(level_graph, scope)
    table = PairProbTable()
    if pairs:
        u, v = map(np.array, zip(*pairs))
        p, _ = pair_probs_forward(h, u, v, params, level_graph.level)
        for (i, j), val in zip(pairs, p):
            table[i, j] = float(val)
    return LevelScores(h, table, densities(level_graph, h, table))
