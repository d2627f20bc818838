import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from citetax.encoder import PairProbTable, init_params
from citetax.labels import GoldHierarchyLabels
from citetax.losses import (ContrastiveConfig, bce, cluster_loss, generation_loss, grad_check,
                            hicluster_loss, himulcon_grad, himulcon_loss, joint_objective)
from citetax.synth import SynthConfig, synth_graph
from citetax.train import TrainConfig, TrainingProblem, objective


def scalar_himulcon(h, labels, delta, tau):
    n = len(h)
    L = labels.n_levels

    def sim(a, b):
        return sum(x * y for x, y in zip(a, b)) / math.sqrt(sum(x * x for x in a) * sum(y * y for y in b))

    total = 0.0
    for l in range(1, L + 1):
        for u in range(n):
            pos = [v for v in range(n) if v != u and labels.same(l, u, v)]
            if not pos:
                continue
            denom = sum(math.exp(sim(h[u], h[k]) / tau) for k in range(n) if k != u)
            acc = sum(math.log(math.exp(sim(h[u], h[v]) / tau) / denom) for v in pos)
            total += -delta[l - 1] / L * acc / len(pos)
    return total


def two_level_labels(n=6):
    return GoldHierarchyLabels.from_flat([[i // 2 for i in range(n)], [i // 3 for i in range(n)]])


def test_cluster_loss_half_is_ln2_per_level():
    labels = two_level_labels()
    edges = [[(0, 1), (1, 2), (3, 5)], [(0, 4), (2, 3)]]
    probs = [{e: 0.5 for e in lv} for lv in edges]
    assert cluster_loss(probs, labels, edges) == pytest.approx(2 * math.log(2), abs=1e-12)
    assert cluster_loss(probs[:1], labels, edges[:1]) == pytest.approx(math.log(2), abs=1e-12)


def test_cluster_loss_examples():
    labels = two_level_labels()
    assert cluster_loss([{(0, 1): 0.9}], labels, [[(0, 1)]]) == pytest.approx(-math.log(0.9), abs=1e-12)
    # stored the other way round
    assert cluster_loss([{(1, 0): 0.9}], labels, [[(0, 1)]]) == pytest.approx(-math.log(0.9), abs=1e-12)
    perfect = cluster_loss([{(0, 1): 1.0, (1, 2): 0.0}], labels, [[(0, 1), (1, 2)]])
    assert 0 <= perfect <= -math.log1p(-1e-12) + 1e-15
    assert np.isfinite(bce(0.0, 1.0))


@given(st.lists(st.floats(0, 1), min_size=5, max_size=5))
def test_cluster_loss_nonnegative(ps):
    labels = two_level_labels()
    edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]
    assert cluster_loss([dict(zip(edges, ps))], labels, [edges]) >= 0


def test_himulcon_uniform_closed_form():
    labels = GoldHierarchyLabels.from_flat([[0, 0, 0]])
    assert himulcon_loss(np.ones((3, 4)), labels) == pytest.approx(3 * math.log(2), abs=1e-10)
    # two levels, some nodes without positives
    labels = GoldHierarchyLabels.from_flat([[0, 0, 1, 2, 3], [0, 0, 0, 1, 1]])
    delta = [0.5, 2.0]
    want = (0.5 / 2 * 2 + 2.0 / 2 * 5) * math.log(4)
    got = himulcon_loss(np.tile([1.0, 2.0], (5, 1)), labels, ContrastiveConfig(tau=0.3, delta=delta))
    assert got == pytest.approx(want, abs=1e-10)


def test_himulcon_two_nodes_zero():
    labels = GoldHierarchyLabels.from_flat([[0, 0]])
    assert himulcon_loss(np.array([[1.0, 0.0], [0.3, 2.0]]), labels) == pytest.approx(0.0, abs=1e-12)


def test_himulcon_scalar_oracle():
    rng = np.random.default_rng(5)
    labels = GoldHierarchyLabels.from_flat([[0, 0, 1, 1], [0, 0, 0, 1]])
    for _ in range(10):
        h = rng.standard_normal((4, 3))
        got = himulcon_loss(h, labels, ContrastiveConfig(tau=1.0))
        assert got == pytest.approx(scalar_himulcon(h, labels, [1, 1], 1.0), abs=1e-10)
    h = rng.standard_normal((4, 3))
    cfg = ContrastiveConfig(tau=0.1, delta=[2.0, 0.5])
    assert himulcon_loss(h, labels, cfg) == pytest.approx(scalar_himulcon(h, labels, [2.0, 0.5], 0.1), abs=1e-10)


@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_himulcon_scale_invariant(seed, c):
    labels = two_level_labels()
    h = np.random.default_rng(seed).standard_normal((6, 3))
    assert himulcon_loss(c * h, labels) == pytest.approx(himulcon_loss(h, labels), abs=1e-10)


def test_himulcon_gradient():
    labels = two_level_labels()
    h = np.random.default_rng(0).standard_normal((6, 3))
    pos = [labels.positives(l) for l in (1, 2)]
    _, dh = himulcon_grad(h, pos, [1.0, 0.7], 0.2)
    eps = 1e-6
    for idx in [(0, 0), (3, 2), (5, 1)]:
        a, b = h.copy(), h.copy()
        a[idx] += eps
        b[idx] -= eps
        num = (himulcon_grad(a, pos, [1.0, 0.7], 0.2)[0] - himulcon_grad(b, pos, [1.0, 0.7], 0.2)[0]) / (2 * eps)
        assert dh[idx] == pytest.approx(num, rel=1e-6, abs=1e-9)


def test_himulcon_errors():
    labels = GoldHierarchyLabels.from_flat([[0]])
    with pytest.raises(ValueError):
        himulcon_loss(np.ones((1, 2)), labels)
    with pytest.raises(ValueError):
        himulcon_loss(np.ones((3, 2)), two_level_labels(3), ContrastiveConfig(delta=[1.0]))


def test_hicluster_affine_in_alpha():
    labels = two_level_labels()
    edges = [[(0, 1), (2, 3)], [(1, 4)]]
    probs = [{(0, 1): 0.7, (2, 3): 0.2}, {(1, 4): 0.6}]
    h = np.random.default_rng(1).standard_normal((6, 3))
    c = cluster_loss(probs, labels, edges)
    m = himulcon_loss(h, labels)
    assert hicluster_loss(probs, edges, h, labels, alpha=0) == pytest.approx(c, abs=1e-12)
    assert hicluster_loss(probs, edges, h, labels, alpha=1) == pytest.approx(c + m, abs=1e-12)
    diff = hicluster_loss(probs, edges, h, labels, 2) - hicluster_loss(probs, edges, h, labels, 1)
    assert diff == pytest.approx(m, abs=1e-12)


def test_generation_and_joint():
    assert generation_loss({(1, 0): [0.0, 0.0]}) == 0.0
    assert generation_loss({(1, 0): [-1.0, -2.0]}) == -3.0
    assert generation_loss({(1, 0): [-1.0], (1, 1): None}) is None
    assert joint_objective(-3.0, 2.0, 1.0).total == -1.0
    assert joint_objective(-3.0, 2.0, 0.0).total == -3.0
    j = joint_objective(None, 2.0)
    assert j.total is None and j.hicluster == 2.0


def test_grad_check_quadratic():
    p = init_params(3, hidden=4, heads=2, seed=0)

    def quad(q):
        loss = sum(float(np.sum(v ** 2)) for v in q.tensors.values())
        return loss, {k: 2 * v for k, v in q.tensors.items()}

    rep = grad_check(quad, p, eps=1e-6, sample_size=50)
    assert rep.max_rel_error < 1e-8 and len(rep.checked) == 50
    assert grad_check(quad, p, sample_size=0).checked == []
    with pytest.raises(ValueError):
        grad_check(quad, p, eps=0)

    def broken(q):
        return float("nan"), {k: v for k, v in q.tensors.items()}

    with pytest.raises(FloatingPointError):
        grad_check(broken, p, sample_size=1)


def six_node_objective():
    inst = synth_graph(SynthConfig(n_blocks=(3, 1), block_size=2, p_intra=(1.0,), p_inter=0.3, seed=3))
    problem = TrainingProblem(inst.graph, inst.X, inst.labels, 0.0, 0)
    params = init_params(inst.X.dim, hidden=8, heads=2, n_layers=2, seed=1)
    cfg = TrainConfig()

    def fn(q):
        r = objective(q, problem, cfg)
        return r.loss, r.grads

    return fn, params


def test_grad_check_hicluster_six_nodes():
    fn, params = six_node_objective()
    rep = grad_check(fn, params, eps=1e-6, sample_size=200, seed=0)
    assert len(rep.checked) == 200
    assert rep.max_rel_error < 1e-4, rep.worst
