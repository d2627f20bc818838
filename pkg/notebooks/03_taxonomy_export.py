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
# # From clusters to a labeled taxonomy
#
# Every cluster gets a short label, starting with the finest level. Parents
# see their children's labels in the prompt. The offline stub client picks
# salient terms, and `HttpClient` does the same job against a real
# generation service.

# %%
import tempfile
from pathlib import Path

from citetax.evaluation import OracleScorer
from citetax.hiclust import ClusterConfig, build_hierarchy
from citetax.synth import SynthConfig, synth_graph
from citetax.taxonomy import assemble, export_json, load_taxonomy, to_dot, validate
from citetax.verbalizer import StubClient, build_prompt, verbalize_hierarchy

inst = synth_graph(SynthConfig(seed=3))
hier = build_hierarchy(inst.graph, inst.X, None, ClusterConfig(scope="all-pairs"), scorer=OracleScorer(inst.labels))

# %% [markdown]
# The prompt for the first level-1 cluster, cut to a small character budget
# so only the densest papers fit.

# %%
print(build_prompt(hier, 1, 0, "machine learning research", budget=400).serialize())

# %%
labels = verbalize_hierarchy(hier, "machine learning research", StubClient())
{k: v.text for k, v in labels.items()}

# %% [markdown]
# The top level has two clusters, so a synthetic root named after the
# instruction holds the tree together.

# %%
tree = assemble(hier, labels, root_label="machine learning research")
print(validate(tree))
print(to_dot(tree))

# %%
out = Path(tempfile.mkdtemp()) / "taxonomy.json"
export_json(tree, out)
load_taxonomy(out).nodes["root"].label
