# ---
# jupyter:
#   jupytext:
#     formats: py:percent
#     text_representation:
#       extension: .py
#       format_name: percent
#       format_version: '1.3'
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # Clustering rules on toy graphs
#
# Level 1 is clustered softly, so one paper can sit in two topics. Higher
# levels are clustered hard. Both rules are small enough to follow by hand.

# %%
import numpy as np

from citetax.encoder import PairProbTable
from citetax.graph import CitationGraph, EmbeddingMatrix, PaperNode, init_level_graph
from citetax.hiclust import ClusterSet, aggregate, hard_cluster, soft_cluster_level1

# %% [markdown]
# A path a - b - c. Node b is the densest, and both of its links are likely
# same-topic, so each endpoint forms a candidate cluster with b.

# %%
g = CitationGraph([PaperNode(k, f"paper {k}") for k in "abc"], [("a", "b"), ("b", "c")])
lg = init_level_graph(g, EmbeddingMatrix(np.eye(3)))
probs = PairProbTable({(0, 1): 0.8, (1, 2): 0.8})
soft = soft_cluster_level1(lg, probs, densities=[0.1, 0.9, 0.2], p_tau=0.5)
[sorted(lg.node_ids[i] for i in c) for c in soft]

# %% [markdown]
# Hard clustering links each node to its most probable partner and keeps the
# connected components.

# %%
g4 = CitationGraph([PaperNode(k, k) for k in "abcd"], [("a", "b"), ("b", "c"), ("c", "d")])
lg4 = init_level_graph(g4, EmbeddingMatrix(np.eye(4)))
hard = hard_cluster(lg4, PairProbTable({(0, 1): 0.9, (1, 2): 0.2, (2, 3): 0.8}))
hard.clusters

# %% [markdown]
# A cluster's features are its member mean plus the embedding of its densest
# member. For a singleton that is twice the member's vector.

# %%
h = np.array([[1.0, 0.0], [0.0, 1.0]])
aggregate(ClusterSet(1, [frozenset([0, 1]), frozenset([0])]), h, densities=[0.2, 0.7])
