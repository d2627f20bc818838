import os

import numpy as np
import pytest
from hypothesis import settings

from citetax.graph import CitationGraph, EmbeddingMatrix, PaperNode, init_level_graph

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))


def make_graph(n, edges, texts=None):
    ids = [chr(ord("a") + i) if n <= 26 else f"n{i}" for i in range(n)]
    texts = texts or [f"paper {i} title" for i in range(n)]
    nodes = [PaperNode(ids[i], texts[i], "") for i in range(n)]
    return CitationGraph(nodes, [(ids[i], ids[j]) for i, j in edges])


def level_graph(n, edges, dim=4, seed=0):
    g = make_graph(n, edges)
    X = np.random.default_rng(seed).standard_normal((n, dim))
    return init_level_graph(g, EmbeddingMatrix(X))


@pytest.fixture
def path3():
    return level_graph(3, [(0, 1), (1, 2)])


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
