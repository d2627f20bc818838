"""Topic taxonomies from citation graphs.

Papers are encoded with a graph attention network, clustered level by level
under density guidance, labeled bottom-up by a text generator and exported
as a rooted topic tree.
"""

from .encoder import EncoderParams, PairProbTable, encode, init_params, score_level
from .evaluation import EvalReport, OracleScorer, evaluate_hierarchy, kmeans_baseline, pairwise_accuracy
from .graph import (CitationGraph, EmbeddingMatrix, GraphError, LevelGraph, PaperNode, fallback_embed,
                    init_level_graph, load_citation_graph, load_embeddings, save_embeddings)
from .hiclust import (ClusterConfig, ClusterSet, Hierarchy, aggregate, build_hierarchy, hard_cluster,
                      soft_cluster_level1)
from .labels import GoldHierarchyLabels, load_labels
from .losses import cluster_loss, grad_check, hicluster_loss, himulcon_loss
from .synth import SynthConfig, synth_graph
from .taxonomy import TaxonomyTree, assemble, export_dot, export_json, load_taxonomy, validate
from .train import TrainConfig, train_clustering
from .verbalizer import HttpClient, StubClient, build_prompt, verbalize_hierarchy, verbalize_node

__version__ = "0.1.0"
