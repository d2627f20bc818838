"""Topic trees built from a labeled hierarchy, their checks and exports.

Every cluster of every level becomes a topic node ``t<level>.<index>``;
papers are node metadata, never tree nodes, so a paper inside two
overlapping level-1 clusters is listed under both leaves. When the top
level holds more than one cluster a synthetic ``root`` one level higher
joins them.

JSON schema (``format`` "citetax-taxonomy", ``version`` 1)::

    {"format": ..., "version": 1, "root": "<node id>",
     "nodes": [{"id", "level", "index", "label", "members": [paper ids],
                "children": [node ids]}, ...]}

Nodes are listed by level, then index; children and members are sorted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping

from .hiclust import Hierarchy

TAXONOMY_FORMAT = "citetax-taxonomy"
TAXONOMY_VERSION = 1
ROOT_ID = "root"


class TaxonomyError(ValueError):
    pass


@dataclass(frozen=True)
class TopicNode:
    id: str
    level: int
    index: int
    label: str
    members: tuple[str, ...]


@dataclass
class TaxonomyTree:
    nodes: dict[str, TopicNode]
    edges: list[tuple[str, str]]
    root: str

    def _key(self, nid: str):
        n = self.nodes[nid]
        return (n.level, n.index, n.id)

    def ordered(self) -> list[TopicNode]:
        return [self.nodes[k] for k in sorted(self.nodes, key=self._key)]

    def children(self, nid: str) -> list[str]:
        return sorted((c for p, c in self.edges if p == nid), key=self._key)

    def parents(self, nid: str) -> list[str]:
        return [p for p, c in self.edges if c == nid]

    def __len__(self) -> int:
        return len(self.nodes)


def _node_id(level: int, index: int) -> str:
    return f"t{level}.{index}"


def assemble(hier: Hierarchy, labels: Mapping[tuple[int, int], object],
             root_label: str | None = None) -> TaxonomyTree:
    """One topic per cluster, edges from each cluster to the clusters it merges.

    ``labels`` maps ``(level, index)`` to a label string or any object with
    a ``text`` attribute. ``root_label`` names the synthetic root and is
    required when one is needed.
    """
    ids = hier.graph.ids
    nodes: dict[str, TopicNode] = {}
    edges: list[tuple[str, str]] = []
    L = len(hier.assignments)
    for level in range(1, L + 1):
        paper_sets = hier.paper_clusters(level)
        for i, c in enumerate(hier.assignments[level - 1].clusters):
            try:
                lab = labels[(level, i)]
            except KeyError:
                raise TaxonomyError(f"no label for cluster {(level, i)}") from None
            text = getattr(lab, "text", lab)
            nid = _node_id(level, i)
            nodes[nid] = TopicNode(nid, level, i, str(text), tuple(sorted(ids[p] for p in paper_sets[i])))
            if level > 1:
                edges.extend((nid, _node_id(level - 1, k)) for k in sorted(c))
    top = [n for n in nodes.values() if n.level == L]
    if len(top) == 1:
        return TaxonomyTree(nodes, edges, top[0].id)
    if root_label is None or not root_label.strip():
        raise TaxonomyError("the top level has several clusters; a root label is required")
    everyone = tuple(sorted(set().union(*(n.members for n in top)) if top else ids))
    nodes[ROOT_ID] = TopicNode(ROOT_ID, L + 1, 0, root_label.strip(), everyone)
    edges.extend((ROOT_ID, n.id) for n in sorted(top, key=lambda n: n.index))
    return TaxonomyTree(nodes, edges, ROOT_ID)


@dataclass
class Violation:
    node: str
    rule: str
    detail: str = ""


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, node: str, rule: str, detail: str = "") -> None:
        self.violations.append(Violation(node, rule, detail))

    def __str__(self) -> str:
        if self.ok:
            return "no violations"
        return "\n".join(f"{v.node}: {v.rule} {v.detail}".rstrip() for v in self.violations)


def validate(tree: TaxonomyTree) -> ValidationReport:
    """Check the tree invariants; violations are returned, never raised."""
    rep = ValidationReport()
    if tree.root not in tree.nodes:
        rep.add(tree.root, "missing-root")
    for p, c in tree.edges:
        for end in (p, c):
            if end not in tree.nodes:
                rep.add(end, "dangling-edge", f"{p} -> {c}")
    if len(set(tree.edges)) != len(tree.edges):
        rep.add(tree.root, "duplicate-edge")
    parents: dict[str, list[str]] = {k: [] for k in tree.nodes}
    kids: dict[str, list[str]] = {k: [] for k in tree.nodes}
    for p, c in tree.edges:
        if p in tree.nodes and c in tree.nodes:
            parents[c].append(p)
            kids[p].append(c)
    for nid, node in sorted(tree.nodes.items()):
        ps = parents[nid]
        if nid == tree.root:
            if ps:
                rep.add(nid, "root-has-parent", ", ".join(sorted(ps)))
        elif not ps:
            rep.add(nid, "extra-root")
        elif len(ps) > 1:
            rep.add(nid, "multiple-parents", ", ".join(sorted(ps)))
        for p in ps:
            if tree.nodes[p].level != node.level + 1:
                rep.add(nid, "level-gap", f"parent {p} at level {tree.nodes[p].level}")
        if not node.label.strip():
            rep.add(nid, "empty-label")
        if not node.members:
            rep.add(nid, "no-members")
        if kids[nid]:
            union = set().union(*(tree.nodes[c].members for c in kids[nid]))
            if union != set(node.members):
                rep.add(nid, "member-mismatch",
                        f"{len(union ^ set(node.members))} papers differ from the children's union")
        elif node.level != 1:
            rep.add(nid, "leaf-above-level-1")
    # reachability catches cycles detached from the root
    if tree.root in tree.nodes:
        seen, stack = set(), [tree.root]
        while stack:
            u = stack.pop()
            if u in seen:
                continue
            seen.add(u)
            stack.extend(kids[u])
        for nid in sorted(set(tree.nodes) - seen):
            rep.add(nid, "unreachable")
    return rep


def to_dict(tree: TaxonomyTree) -> dict:
    return {
        "format": TAXONOMY_FORMAT,
        "version": TAXONOMY_VERSION,
        "root": tree.root,
        "nodes": [{"id": n.id, "level": n.level, "index": n.index, "label": n.label,
                   "members": sorted(n.members), "children": tree.children(n.id)}
                  for n in tree.ordered()],
    }


def _gate(tree: TaxonomyTree) -> None:
    rep = validate(tree)
    if not rep.ok:
        raise TaxonomyError(f"refusing to export an invalid taxonomy:\n{rep}")


def export_json(tree: TaxonomyTree, path) -> None:
    _gate(tree)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_dict(tree), fh, indent=1, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


def load_taxonomy(path) -> TaxonomyTree:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != TAXONOMY_FORMAT:
        raise TaxonomyError(f"{path}: not a taxonomy file")
    if doc.get("version") != TAXONOMY_VERSION:
        raise TaxonomyError(f"{path}: unsupported version {doc.get('version')}")
    nodes = {r["id"]: TopicNode(r["id"], r["level"], r["index"], r["label"], tuple(r["members"]))
             for r in doc["nodes"]}
    edges = [(r["id"], c) for r in doc["nodes"] for c in r["children"]]
    return TaxonomyTree(nodes, edges, doc["root"])


def _dot_quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", " ") + '"'


def to_dot(tree: TaxonomyTree) -> str:
    lines = ["digraph taxonomy {", "  rankdir=TB;"]
    for n in tree.ordered():
        lines.append(f"  {_dot_quote(n.id)} [label={_dot_quote(f'{n.label} ({len(n.members)})')}];")
    for n in tree.ordered():
        for c in tree.children(n.id):
            lines.append(f"  {_dot_quote(n.id)} -> {_dot_quote(c)};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_dot(tree: TaxonomyTree, path) -> None:
    _gate(tree)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(to_dot(tree))
