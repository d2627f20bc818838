import numpy as np
import pytest

from citetax.encoder import LevelScores, PairProbTable
from citetax.evaluation import OracleScorer
from citetax.graph import EmbeddingMatrix
from citetax.hiclust import ClusterConfig, build_hierarchy
from citetax.synth import SynthConfig, synth_graph
from citetax.taxonomy import (TaxonomyError, TaxonomyTree, TopicNode, assemble, export_dot, export_json,
                              load_taxonomy, to_dot, validate)
from citetax.verbalizer import StubClient, verbalize_hierarchy

from conftest import make_graph
from test_hiclust import random_hierarchy
from test_verbalizer import three_plus_one


def labels_for(hier):
    return {(l + 1, i): f"topic {l + 1}.{i}" for l, a in enumerate(hier.assignments) for i in range(len(a))}


def test_single_top_cluster_no_synthetic_root():
    h = three_plus_one()
    tree = assemble(h, labels_for(h))
    assert len(tree) == 4 and tree.root == "t2.0"
    assert tree.children("t2.0") == ["t1.0", "t1.1", "t1.2"]
    assert validate(tree).ok


def test_synthetic_root():
    inst = synth_graph(SynthConfig(seed=1))
    h = build_hierarchy(inst.graph, inst.X, None, ClusterConfig(scope="all-pairs"), scorer=OracleScorer(inst.labels))
    assert len(h.assignments[-1]) == 2
    with pytest.raises(TaxonomyError):
        assemble(h, labels_for(h))
    tree = assemble(h, labels_for(h), root_label="machine learning")
    assert tree.root == "root" and tree.children("root") == ["t2.0", "t2.1"]
    assert tree.nodes["root"].label == "machine learning" and len(tree.nodes["root"].members) == 60
    assert len(tree) == 4 + 2 + 1
    assert validate(tree).ok


def overlap_hierarchy():
    g = make_graph(3, [(0, 1), (1, 2)])

    def scorer(lg, scope):
        if lg.level == 1:
            return LevelScores(lg.features, PairProbTable({(0, 1): 0.9, (1, 2): 0.9}), np.array([0.1, 0.9, 0.2]))
        return LevelScores(lg.features, PairProbTable({(0, 1): 0.9}), np.zeros(lg.n))

    return build_hierarchy(g, EmbeddingMatrix(np.eye(3)), None, ClusterConfig(root_size=1), scorer=scorer)


def test_overlap_papers_listed_twice():
    h = overlap_hierarchy()
    tree = assemble(h, labels_for(h))
    assert tree.nodes["t1.0"].members == ("a", "b") and tree.nodes["t1.1"].members == ("b", "c")
    assert tree.parents("t1.0") == ["t2.0"] and tree.parents("t1.1") == ["t2.0"]
    assert validate(tree).ok


def test_missing_label():
    h = three_plus_one()
    labs = labels_for(h)
    del labs[(1, 2)]
    with pytest.raises(TaxonomyError, match=r"\(1, 2\)"):
        assemble(h, labs)


def small_tree():
    n = {"r": TopicNode("r", 2, 0, "root", ("a", "b", "c")),
         "x": TopicNode("x", 1, 0, "x", ("a", "b")),
         "y": TopicNode("y", 1, 1, "y", ("c",)),
         "z": TopicNode("z", 1, 2, "z", ("c",))}
    return TaxonomyTree(n, [("r", "x"), ("r", "y"), ("r", "z")], "r")


def test_validate_catches_violations():
    t = small_tree()
    assert validate(t).ok
    t.nodes["w"] = TopicNode("w", 2, 1, "other", ("c",))
    t.edges.append(("w", "z"))
    rep = validate(t)
    rules = {(v.node, v.rule) for v in rep.violations}
    assert ("z", "multiple-parents") in rules and ("w", "extra-root") in rules
    t = small_tree()
    t.nodes["y"] = TopicNode("y", 1, 1, "  ", ("c",))
    assert [(v.node, v.rule) for v in validate(t).violations] == [("y", "empty-label")]
    t = small_tree()
    t.nodes["r"] = TopicNode("r", 2, 0, "root", ("a", "b"))
    assert [v.rule for v in validate(t).violations] == ["member-mismatch"]
    t = small_tree()
    t.nodes["r"] = TopicNode("r", 3, 0, "root", ("a", "b", "c"))
    assert {v.rule for v in validate(t).violations} == {"level-gap"}
    t = small_tree()
    t.edges.append(("x", "ghost"))
    assert "dangling-edge" in {v.rule for v in validate(t).violations}


def test_export_roundtrip_and_dot(tmp_path):
    t = small_tree()
    export_json(t, tmp_path / "a.json")
    back = load_taxonomy(tmp_path / "a.json")
    export_json(back, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert back.nodes == t.nodes and sorted(back.edges) == sorted(t.edges)
    h = three_plus_one()
    tree = assemble(h, labels_for(h))
    export_dot(tree, tmp_path / "t.dot")
    lines = (tmp_path / "t.dot").read_text().splitlines()
    assert sum("[label=" in ln for ln in lines) == 4
    assert sum("->" in ln for ln in lines) == 3
    assert 'label="topic 2.0 (9)"' in to_dot(tree)


def test_export_refuses_invalid(tmp_path):
    t = small_tree()
    t.nodes["x"] = TopicNode("x", 1, 0, "", ("a", "b"))
    with pytest.raises(TaxonomyError, match="empty-label"):
        export_json(t, tmp_path / "a.json")
    with pytest.raises(TaxonomyError):
        export_dot(t, tmp_path / "a.dot")
    assert not (tmp_path / "a.json").exists()


def test_load_rejects_foreign(tmp_path):
    (tmp_path / "x.json").write_text('{"format": "other"}')
    with pytest.raises(TaxonomyError):
        load_taxonomy(tmp_path / "x.json")


def test_node_count_identity_on_driver_hierarchies():
    for seed in range(30):
        h, _ = random_hierarchy(seed)
        if not h.assignments:
            continue
        labs = verbalize_hierarchy(h, "topics", StubClient())
        tree = assemble(h, labs, "topics")
        top = len(h.assignments[-1])
        assert len(tree) == sum(len(a) for a in h.assignments) + (top > 1)
        assert validate(tree).ok, (seed, str(validate(tree)))
