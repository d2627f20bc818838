"""Clustering and hierarchical contrastive losses, the joint objective, and a
finite-difference gradient checker."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np

from .encoder import EncoderParams, cosine_matrix
from .labels import GoldHierarchyLabels

EPS = 1e-12


def bce(p, q) -> np.ndarray:
    """Elementwise binary cross-entropy with probabilities clamped to [EPS, 1 - EPS]."""
    p = np.clip(np.asarray(p, dtype=np.float64), EPS, 1 - EPS)
    q = np.asarray(q, dtype=np.float64)
    return -(q * np.log(p) + (1 - q) * np.log1p(-p))


def bce_grad(p, q) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    inside = (p > EPS) & (p < 1 - EPS)
    pc = np.clip(p, EPS, 1 - EPS)
    return np.where(inside, (pc - q) / (pc * (1 - pc)), 0.0)


def cluster_loss(probs: Sequence[Mapping], labels: GoldHierarchyLabels,
                 edges: Sequence[Sequence[tuple[int, int]]]) -> float:
    """Sum over levels of the mean edge-wise BCE between predicted and gold
    co-membership.

    ``probs[l]`` maps a base-paper pair ``(u, v)`` to the predicted
    probability at level ``l + 1``; ``edges[l]`` lists the pairs supervised
    at that level. A paper pair counts as same-cluster at level 1 when the
    papers share any gold cluster.
    """
    total = 0.0
    for l, (table, level_edges) in enumerate(zip(probs, edges)):
        if not level_edges:
            continue
        p, q = [], []
        for u, v in level_edges:
            try:
                val = table[u, v]
            except KeyError:
                val = table[v, u]
            p.append(val)
            q.append(1.0 if labels.same(l + 1, u, v) else 0.0)
        total += float(bce(p, q).mean())
    return total


@dataclass
class ContrastiveConfig:
    tau: float = 0.1
    delta: Sequence[float] | None = None

    def weights(self, n_levels: int) -> list[float]:
        if self.delta is None:
            return [1.0] * n_levels
        if len(self.delta) < n_levels:
            raise ValueError(f"need {n_levels} level weights, got {len(self.delta)}")
        return list(self.delta[:n_levels])


def himulcon_grad(h, positives: Sequence[Sequence[np.ndarray]], delta: Sequence[float],
                  tau: float) -> tuple[float, np.ndarray]:
    """Multi-level supervised contrastive loss on cosine similarities and its
    gradient with respect to ``h``.

    ``positives[l][u]`` holds the indices sharing a cluster with ``u`` at
    level ``l + 1``; nodes without positives contribute nothing there.
    """
    h = np.asarray(h, dtype=np.float64)
    n = h.shape[0]
    if n < 2:
        raise ValueError("contrastive loss needs at least two nodes")
    if tau <= 0:
        raise ValueError("temperature must be positive")
    L = len(positives)
    norms = np.linalg.norm(h, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = h / safe[:, None]
    unit[norms == 0] = 0.0
    logits = (unit @ unit.T) / tau
    np.fill_diagonal(logits, -np.inf)
    top = logits.max(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(np.exp(logits - top).sum(axis=1))
    soft = np.exp(logits - lse[:, None])

    loss = 0.0
    dlogits = np.zeros((n, n))
    for l in range(L):
        for u in range(n):
            pos = positives[l][u]
            if len(pos) == 0:
                continue
            w = delta[l] / L
            loss += -w * float(np.mean(logits[u, pos] - lse[u]))
            dlogits[u] += w * soft[u]
            dlogits[u, pos] -= w / len(pos)
    dsim = dlogits / tau
    np.fill_diagonal(dsim, 0.0)
    dunit = (dsim + dsim.T) @ unit
    radial = np.einsum("ij,ij->i", dunit, unit)
    dh = (dunit - radial[:, None] * unit) / safe[:, None]
    dh[norms == 0] = 0.0
    return loss, dh


def himulcon_loss(h, labels: GoldHierarchyLabels, config: ContrastiveConfig | None = None) -> float:
    config = config or ContrastiveConfig()
    L = labels.n_levels
    pos = [labels.positives(l) for l in range(1, L + 1)]
    return himulcon_grad(h, pos, config.weights(L), config.tau)[0]


def hicluster_loss(probs, edges, h, labels: GoldHierarchyLabels, alpha: float = 1.0,
                   config: ContrastiveConfig | None = None) -> float:
    return cluster_loss(probs, labels, edges) + alpha * himulcon_loss(h, labels, config)


def generation_loss(token_logprobs: Mapping[tuple[int, int], Sequence[float] | None]) -> float | None:
    """Summed log-likelihood of every generated concept, or ``None`` when any
    concept lacks token log-probabilities."""
    total = 0.0
    for lp in token_logprobs.values():
        if lp is None:
            return None
        total += math.fsum(lp)
    return total


class JointObjective(NamedTuple):
    total: float | None
    generation: float | None
    hicluster: float


def joint_objective(gen: float | None, hiclust: float, lam: float = 1.0) -> JointObjective:
    if gen is None:
        return JointObjective(None, None, hiclust)
    return JointObjective(gen + lam * hiclust, gen, hiclust)


@dataclass
class GradCheckReport:
    max_rel_error: float = 0.0
    checked: list[tuple[str, tuple, float, float, float]] = field(default_factory=list)

    @property
    def worst(self):
        return max(self.checked, key=lambda r: r[4]) if self.checked else None


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def grad_check(loss_fn: Callable[[EncoderParams], tuple[float, dict]], params: EncoderParams,
               eps: float = 1e-6, sample_size: int = 200, seed: int = 0,
               floor: float = 1e-8) -> GradCheckReport:
    """Compare the analytic gradient with central differences on a random
    sample of coordinates.

    ``loss_fn(params)`` returns ``(loss, grads)`` with ``grads`` keyed like
    ``params.tensors``. Relative errors use ``max(|a|, |n|, floor)`` as the
    denominator.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    report = GradCheckReport()
    if sample_size <= 0:
        return report
    _, grads = loss_fn(params)
    names = list(params.tensors)
    sizes = np.array([params.tensors[k].size for k in names])
    rng = np.random.default_rng(seed)
    flat = rng.choice(sizes.sum(), size=min(sample_size, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    probe = params.copy()
    for f in sorted(flat):
        t = int(np.searchsorted(offsets, f, side="right") - 1)
        name = names[t]
        idx = np.unravel_index(int(f - offsets[t]), params.tensors[name].shape)
        arr = probe.tensors[name]
        orig = arr[idx]
        arr[idx] = orig + eps
        fp = loss_fn(probe)[0]
        arr[idx] = orig - eps
        fm = loss_fn(probe)[0]
        arr[idx] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite loss probing {name}{idx}")
        num = (fp - fm) / (2 * eps)
        ana = float(grads[name][idx])
        err = relative_error(ana, num, floor)
        report.checked.append((name, tuple(int(i) for i in idx), ana, num, err))
        report.max_rel_error = max(report.max_rel_error, err)
    return report
