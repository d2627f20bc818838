"""Acceptance criteria, one test each, at their stated tolerances.

Each test records a PASS/FAIL line that is printed in the terminal summary
(``pytest tests/test_acceptance.py``) and to stdout when run with ``-s``.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from citetax.cli import main
from citetax.encoder import init_params
from citetax.evaluation import OracleScorer, evaluate_hierarchy
from citetax.hiclust import ClusterConfig, ClusterSet, aggregate, build_hierarchy, hard_cluster, soft_cluster_level1
from citetax.labels import GoldHierarchyLabels
from citetax.losses import ContrastiveConfig, cluster_loss, grad_check, himulcon_loss
from citetax.synth import SynthConfig, synth_graph
from citetax.taxonomy import assemble, export_json, load_taxonomy, validate
from citetax.train import TrainConfig, TrainingProblem, objective, train_clustering
from citetax.verbalizer import StubClient, verbalize_hierarchy

from helpers import ACCEPTANCE, brute_soft, hierarchy_violations, random_instance, union_find_hard
from test_hiclust import random_hierarchy


@contextmanager
def criterion(name):
    """Run a block, record PASS/FAIL with the detail string set via ``info``."""
    info = {"detail": ""}
    t0 = time.perf_counter()
    ok = False
    try:
        yield info
        ok = True
    finally:
        line = f"{info['detail']} [{time.perf_counter() - t0:.2f}s]".strip()
        ACCEPTANCE.append((name, ok, line))
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {line}")


def test_soft_clustering_oracle():
    with criterion("soft-clustering oracle equivalence") as info:
        rng = np.random.default_rng(20240607)
        t0 = time.perf_counter()
        matches = 0
        for _ in range(1000):
            lg, probs, dens = random_instance(rng, n_max=8)
            p_tau = float(rng.choice([0.1, 0.2, 0.5, 0.8]))
            matches += soft_cluster_level1(lg, probs, dens, p_tau).clusters == brute_soft(lg.n, probs, dens, p_tau)
        elapsed = time.perf_counter() - t0
        info["detail"] = f"{matches}/1000 instances match, {elapsed:.2f}s"
        assert matches == 1000 and elapsed < 10


def test_hard_clustering_oracle():
    with criterion("hard-clustering oracle equivalence") as info:
        rng = np.random.default_rng(7)
        t0 = time.perf_counter()
        matches = 0
        for _ in range(1000):
            lg, probs, _ = random_instance(rng, n_max=12)
            matches += hard_cluster(lg, probs).clusters == union_find_hard(lg.n, probs)
        elapsed = time.perf_counter() - t0
        info["detail"] = f"{matches}/1000 instances match, {elapsed:.2f}s"
        assert matches == 1000 and elapsed < 10


def test_gradient_correctness():
    with criterion("gradient correctness") as info:
        inst = synth_graph(SynthConfig(n_blocks=(3, 1), block_size=2, p_intra=(1.0,), p_inter=0.3, seed=3))
        assert len(inst.graph) == 6
        problem = TrainingProblem(inst.graph, inst.X, inst.labels, 0.0, 0)
        params = init_params(inst.X.dim, hidden=8, heads=2, n_layers=2, seed=1)
        cfg = TrainConfig()

        def fn(q):
            r = objective(q, problem, cfg)
            return r.loss, r.grads

        t0 = time.perf_counter()
        rep = grad_check(fn, params, eps=1e-6, sample_size=200, seed=0)
        elapsed = time.perf_counter() - t0
        info["detail"] = f"max relative error {rep.max_rel_error:.2e} over {len(rep.checked)} coordinates"
        assert len(rep.checked) == 200 and rep.max_rel_error < 1e-4 and elapsed < 30


def test_closed_form_losses():
    with criterion("closed-form loss values") as info:
        labels = GoldHierarchyLabels.from_flat([[0, 0, 1, 1, 2, 3], [0, 0, 0, 1, 1, 1], [0] * 6])
        edges = [[(0, 1), (1, 2), (3, 4)], [(0, 5), (2, 3)], [(1, 4)]]
        got = cluster_loss([{e: 0.5 for e in lv} for lv in edges], labels, edges)
        err1 = abs(got - 3 * math.log(2))
        # identical embeddings: every similarity equals 1
        delta = [1.0, 0.5, 2.0]
        has_pos = [sum(len(p) > 0 for p in labels.positives(l)) for l in (1, 2, 3)]
        want = sum(d / 3 * k * math.log(5) for d, k in zip(delta, has_pos))
        err2 = abs(himulcon_loss(np.tile([0.3, -1.2, 2.0], (6, 1)), labels, ContrastiveConfig(0.1, delta)) - want)
        h = np.random.default_rng(0).standard_normal((6, 5))
        base = himulcon_loss(h, labels)
        err3 = max(abs(himulcon_loss(c * h, labels) - base) for c in (1e-3, 0.5, 7.0, 1e4))
        info["detail"] = f"errors {err1:.1e} / {err2:.1e} / {err3:.1e}"
        assert err1 <= 1e-12 and err2 <= 1e-10 and err3 <= 1e-10


def test_planted_hierarchy_recovery():
    with criterion("planted-hierarchy recovery") as info:
        t0 = time.perf_counter()
        inst = synth_graph(SynthConfig(n_blocks=(4, 2), block_size=15, p_intra=(0.9,), p_inter=0.05,
                                       noise=0.1, seed=7))
        res = train_clustering(inst.graph, inst.X, inst.labels, TrainConfig(seed=7, epochs=500))
        hier = build_hierarchy(inst.graph, inst.X, res.params, ClusterConfig(scope="all-pairs"))
        rep = evaluate_hierarchy(hier, inst.labels, inst.X, seed=7)
        elapsed = time.perf_counter() - t0
        l1, l2 = rep.method
        k1, k2 = rep.baselines["kmeans"]
        info["detail"] = (f"L1 {l1:.4f} (kmeans {k1:.4f}), L2 {l2:.4f} (kmeans {k2:.4f}), "
                          f"{len(res.history) - 1} epochs")
        assert len(res.history) - 1 <= 500
        assert l1 >= 0.9 and l2 >= 0.85 and l1 > k1 and l2 > k2 and elapsed < 300


def test_hierarchy_invariants():
    with criterion("hierarchy invariants") as info:
        bad = []
        for seed in range(200):
            hier, rescore = random_hierarchy(seed)
            if hierarchy_violations(hier, rescore):
                bad.append(seed)
        info["detail"] = f"{200 - len(bad)}/200 runs clean"
        assert not bad


def pipeline(out, seed):
    out.mkdir()
    d = out / "data"
    g = ["--nodes", d / "nodes.jsonl", "--edges", d / "edges.tsv"]
    steps = [
        ["synth", "--out-dir", d, "--seed", seed],
        ["train", *g, "--embeddings", d / "embeddings.jsonl", "--labels", d / "labels.tsv",
         "--epochs", 40, "--hidden", 16, "--heads", 2, "--seed", seed, "--out", out / "m.ckpt"],
        ["cluster", *g, "--embeddings", d / "embeddings.jsonl", "--checkpoint", out / "m.ckpt",
         "--scope", "all-pairs", "--out", out / "h.json"],
        ["verbalize", *g, "--hierarchy", out / "h.json", "--instruction", "research topics",
         "--out", out / "labels.json"],
        ["export", *g, "--hierarchy", out / "h.json", "--labels", out / "labels.json",
         "--instruction", "research topics", "--json", out / "tax.json", "--dot", out / "tax.dot"],
    ]
    for step in steps:
        assert main([str(a) for a in step]) == 0, step[0]
    return (out / "tax.json").read_bytes(), (out / "tax.dot").read_bytes()


def test_end_to_end_determinism(tmp_path):
    with criterion("end-to-end determinism") as info:
        a = pipeline(tmp_path / "run1", 7)
        b = pipeline(tmp_path / "run2", 7)
        info["detail"] = f"taxonomy {len(a[0])} bytes, identical={a == b}"
        assert a == b


def driver_hierarchies():
    for seed in range(200):
        yield f"random-{seed}", random_hierarchy(seed)[0]
    for seed in range(5):
        inst = synth_graph(SynthConfig(seed=seed))
        for scope in ("neighbors", "all-pairs"):
            yield f"oracle-{seed}-{scope}", build_hierarchy(inst.graph, inst.X, None, ClusterConfig(scope=scope),
                                                            scorer=OracleScorer(inst.labels))


def test_taxonomy_validity(tmp_path):
    with criterion("taxonomy validity") as info:
        checked, invalid, unstable = 0, [], []
        for name, hier in driver_hierarchies():
            labels = verbalize_hierarchy(hier, "topics", StubClient())
            tree = assemble(hier, labels, "topics")
            checked += 1
            if not validate(tree).ok:
                invalid.append(name)
                continue
            export_json(tree, tmp_path / "a.json")
            export_json(load_taxonomy(tmp_path / "a.json"), tmp_path / "b.json")
            if (tmp_path / "a.json").read_bytes() != (tmp_path / "b.json").read_bytes():
                unstable.append(name)
        info["detail"] = f"{checked} trees, {len(invalid)} invalid, {len(unstable)} unstable round-trips"
        assert not invalid and not unstable


def test_aggregation_closed_forms():
    with criterion("aggregation closed forms") as info:
        h = np.random.default_rng(3).standard_normal((4, 6))
        single = aggregate(ClusterSet(1, [frozenset([2])]), h, np.zeros(4))
        err1 = float(np.max(np.abs(single[0] - 2 * h[2])))
        two = aggregate(ClusterSet(1, [frozenset([0, 1])]), np.array([[1.0, 0.0], [0.0, 1.0]]), [0.2, 0.7])
        err2 = float(np.max(np.abs(two[0] - [0.5, 1.5])))
        info["detail"] = f"errors {err1:.1e} / {err2:.1e}"
        assert err1 <= 1e-12 and err2 <= 1e-12


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
