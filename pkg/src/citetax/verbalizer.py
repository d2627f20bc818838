"""Concept labels for every cluster of a hierarchy, generated bottom-up.

A cluster's prompt carries the instruction, the labels already chosen for
its child clusters and the titles and abstracts of the papers it coarsens
to. Any object with a ``complete(bundle, max_tokens)`` method returning a
:class:`Completion` can serve as the generator; :class:`StubClient` is an
offline keyword extractor and :class:`HttpClient` talks JSON over HTTP.

Prompt layout (``PromptBundle.serialize``)::

    Instruction: <instruction>
    Cluster: level <l>, <size> papers, representative <paper id>
    Subtopics:                  (levels >= 2 only)
    - <child label>
    Papers:
    [<paper id>] <title>. <abstract>
    ...
    Answer with one short topic label.

Member records appear by descending level-1 density, ties by paper id, and
are dropped whole once the character budget would be exceeded.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .graph import tokenize
from .hiclust import Hierarchy

logger = logging.getLogger(__name__)

DEFAULT_BUDGET = 4000
DEFAULT_MAX_TOKENS = 16
API_KEY_ENV = "CITETAX_API_KEY"

_CLOSING = "Answer with one short topic label."

STOPWORDS = frozenset("""
a about above after again against all also an and any are as at be because been before being
below between both but by can could did do does doing down during each few for from further had
has have having here how i if in into is it its itself just more most no nor not of off on once
only or other our out over own present presents propose proposes same she should so some such
than that the their them then there these they this those through to too under until up very
via was we were what when where which while who whom why will with would you your
""".split())


class VerbalizationError(RuntimeError):
    """A node could not be labeled. ``partial`` keeps the labels finished
    before the failure and ``node`` names the failing ``(level, index)``."""

    def __init__(self, node: tuple[int, int], partial: dict, cause: BaseException):
        super().__init__(f"labeling cluster {node} failed: {cause}")
        self.node = node
        self.partial = partial
        self.cause = cause


class ClientError(RuntimeError):
    """Generation request failed for good."""


class TransientClientError(ClientError):
    """Generation request failed in a way worth retrying."""


class EmptyResponseError(ClientError):
    pass


@dataclass(frozen=True)
class Completion:
    text: str
    logprobs: tuple[float, ...] | None = None


class GenerationClient(Protocol):
    source: str

    def complete(self, bundle: "PromptBundle", max_tokens: int) -> Completion: ...


@dataclass(frozen=True)
class ConceptLabel:
    text: str
    source: str = "client"
    logprobs: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.text.strip():
            raise EmptyResponseError("concept label is empty")


# projector


@dataclass
class ProjectorParams:
    """Two-layer map from encoder space to a text-embedding space:
    ``W2 @ relu(W1 @ x + b1) + b2``."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        self.W1, self.b1, self.W2, self.b2 = (np.asarray(a, dtype=np.float64)
                                              for a in (self.W1, self.b1, self.W2, self.b2))
        if self.W1.ndim != 2 or self.W2.ndim != 2 or self.W2.shape[1] != self.W1.shape[0]:
            raise ValueError("projector weight shapes do not chain")
        if self.b1.shape != (self.W1.shape[0],) or self.b2.shape != (self.W2.shape[0],):
            raise ValueError("projector bias shapes do not match the weights")
        if not all(np.all(np.isfinite(a)) for a in (self.W1, self.b1, self.W2, self.b2)):
            raise ValueError("projector parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W2.shape[0]


def init_projector(in_dim: int, out_dim: int, hidden: int | None = None, seed: int = 0) -> ProjectorParams:
    hidden = hidden or max(in_dim, out_dim)
    rng = np.random.default_rng(seed)
    return ProjectorParams(rng.standard_normal((hidden, in_dim)) / np.sqrt(in_dim), np.zeros(hidden),
                           rng.standard_normal((out_dim, hidden)) / np.sqrt(hidden), np.zeros(out_dim))


def project_cluster(cluster_embedding, proj: ProjectorParams) -> np.ndarray:
    x = np.asarray(cluster_embedding, dtype=np.float64)
    if x.shape != (proj.in_dim,):
        raise ValueError(f"expected a vector of length {proj.in_dim}, got shape {x.shape}")
    return proj.W2 @ np.maximum(proj.W1 @ x + proj.b1, 0.0) + proj.b2


# prompts


def _check_cluster(hier: Hierarchy, level: int, index: int) -> None:
    if not 1 <= level <= len(hier.assignments):
        raise IndexError(f"level {level} outside 1..{len(hier.assignments)}")
    if not 0 <= index < len(hier.assignments[level - 1]):
        raise IndexError(f"level {level} has no cluster {index}")


def coarsen_members(hier: Hierarchy, level: int, cluster_index: int) -> frozenset[str]:
    """Ids of the base papers under cluster ``cluster_index`` of ``level``."""
    _check_cluster(hier, level, cluster_index)
    ids = hier.graph.ids
    return frozenset(ids[p] for p in hier.paper_clusters(level)[cluster_index])


def children(hier: Hierarchy, level: int, cluster_index: int) -> list[int]:
    """Indices of the level ``level - 1`` clusters merged into this one."""
    _check_cluster(hier, level, cluster_index)
    if level == 1:
        return []
    return sorted(hier.assignments[level - 1].clusters[cluster_index])


@dataclass(frozen=True)
class PromptBundle:
    instruction: str
    level: int
    cluster_index: int
    size: int
    representative: str
    members: tuple[tuple[str, str], ...]
    child_labels: tuple[str, ...] = ()
    truncated: bool = False
    budget: int = DEFAULT_BUDGET
    projected: tuple[float, ...] | None = field(default=None, compare=False)

    def _head(self) -> list[str]:
        lines = [f"Instruction: {self.instruction}",
                 f"Cluster: level {self.level}, {self.size} papers, representative {self.representative}"]
        if self.child_labels:
            lines.append("Subtopics:")
            lines.extend(f"- {c}" for c in self.child_labels)
        lines.append("Papers:")
        return lines

    def serialize(self) -> str:
        lines = self._head() + [_record(pid, text) for pid, text in self.members] + [_CLOSING]
        return "\n".join(lines) + "\n"

    @property
    def instruction_chars(self) -> int:
        return len(self.instruction)

    @property
    def member_chars(self) -> int:
        return sum(len(_record(p, t)) + 1 for p, t in self.members)

    def to_dict(self) -> dict:
        return {"level": self.level, "cluster": self.cluster_index, "size": self.size,
                "representative": self.representative, "n_members_shown": len(self.members),
                "child_labels": list(self.child_labels), "truncated": self.truncated,
                "budget": self.budget, "instruction_chars": self.instruction_chars,
                "member_chars": self.member_chars,
                "projected": list(self.projected) if self.projected is not None else None}


def _record(pid: str, text: str) -> str:
    return f"[{pid}] {' '.join(text.split())}"


def _paper_text(node) -> str:
    title = node.title.strip().rstrip(".")
    return f"{title}. {node.abstract.strip()}".strip() if node.abstract.strip() else title


def build_prompt(hier: Hierarchy, level: int, cluster_index: int, instruction: str,
                 child_labels: Sequence[str] | None = None, budget: int = DEFAULT_BUDGET,
                 projector: ProjectorParams | None = None) -> PromptBundle:
    """Assemble the prompt for one cluster.

    ``child_labels`` must hold one label per child cluster (in child index
    order) for levels above 1. Raises ``ValueError`` when the budget cannot
    hold the instruction, header and child labels.
    """
    if not instruction or not instruction.strip():
        raise ValueError("instruction must be non-empty")
    kids = children(hier, level, cluster_index)
    child_labels = tuple(child_labels or ())
    if len(child_labels) != len(kids):
        raise ValueError(f"cluster {(level, cluster_index)} has {len(kids)} children, "
                         f"got {len(child_labels)} labels")
    papers = hier.paper_clusters(level)[cluster_index]
    dens = hier.densities[0]
    ids = hier.graph.ids
    order = sorted(papers, key=lambda p: (-float(dens[p]), ids[p]))
    projected = None
    if projector is not None:
        vec = hier.levels[level].features[cluster_index]
        projected = tuple(float(v) for v in project_cluster(vec, projector))

    base = PromptBundle(instruction.strip(), level, cluster_index, len(papers), ids[order[0]], (),
                        child_labels, False, budget, projected)
    used = len(base.serialize())
    if used > budget:
        raise ValueError(f"budget {budget} is smaller than the fixed prompt part ({used} chars)")
    members = []
    for p in order:
        rec = (ids[p], _paper_text(hier.graph.nodes[p]))
        cost = len(_record(*rec)) + 1
        if used + cost > budget:
            break
        members.append(rec)
        used += cost
    return PromptBundle(base.instruction, level, cluster_index, len(papers), base.representative,
                        tuple(members), child_labels, len(members) < len(order), budget, projected)


# clients


def tfidf_terms(records: Sequence[str], top: int = 3) -> list[tuple[str, float]]:
    """Terms ranked by summed term frequency times smoothed inverse document
    frequency ``ln((1 + N) / (1 + df)) + 1`` over ``records``; ties go to the
    alphabetically first term."""
    docs = [[t for t in tokenize(r) if t not in STOPWORDS and not t.isdigit()] for r in records]
    N = len(docs)
    tf = Counter(t for d in docs for t in d)
    df = Counter(t for d in docs for t in set(d))
    scores = {t: tf[t] * (math.log((1 + N) / (1 + df[t])) + 1) for t in tf}
    return sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:top]


class StubClient:
    """Deterministic offline generator: the top TF-IDF terms of the member
    records (child labels when no member record fits), joined by spaces."""

    source = "stub"

    def __init__(self, n_terms: int = 3):
        self.n_terms = n_terms

    def complete(self, bundle: PromptBundle, max_tokens: int = DEFAULT_MAX_TOKENS) -> Completion:
        records = [t for _, t in bundle.members] or list(bundle.child_labels)
        terms = tfidf_terms(records, self.n_terms)
        if not terms:
            raise ClientError(f"cluster {(bundle.level, bundle.cluster_index)}: no scorable terms")
        return Completion(" ".join(t for t, _ in terms))


def stub_client(bundle: PromptBundle) -> ConceptLabel:
    return verbalize_node(bundle, StubClient())


class HttpClient:
    """JSON-over-HTTP generator.

    Sends ``{"prompt", "max_tokens", "temperature": 0}`` by POST and expects
    ``{"text": ..., "logprobs": [...] | null}`` back. The credential, if set
    in ``api_key_env``, goes out as a bearer token. Timeouts, connection
    errors, 429 and 5xx responses are transient; other failures are not.
    """

    source = "client"

    def __init__(self, endpoint: str, api_key_env: str = API_KEY_ENV, timeout: float = 30.0,
                 session=None):
        import requests

        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self.timeout = timeout
        self._requests = requests
        self.session = session or requests.Session()

    def complete(self, bundle: PromptBundle, max_tokens: int = DEFAULT_MAX_TOKENS) -> Completion:
        rq = self._requests
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        body = {"prompt": bundle.serialize(), "max_tokens": max_tokens, "temperature": 0}
        try:
            resp = self.session.post(self.endpoint, json=body, headers=headers, timeout=self.timeout)
        except (rq.Timeout, rq.ConnectionError) as exc:
            raise TransientClientError(str(exc)) from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientClientError(f"HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise ClientError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            doc = resp.json()
            text = doc["text"]
            lp = doc.get("logprobs")
        except (ValueError, KeyError, TypeError) as exc:
            raise ClientError(f"malformed response: {exc}") from exc
        if not isinstance(text, str):
            raise ClientError("response text is not a string")
        return Completion(text, tuple(float(v) for v in lp) if lp is not None else None)


# driver


def clean_label(text: str, max_tokens: int) -> str:
    """First non-empty line, trimmed and cut to ``max_tokens`` words."""
    for line in text.splitlines():
        line = line.strip().strip("\"'")
        if line:
            return " ".join(line.split()[:max_tokens])
    return ""


def verbalize_node(bundle: PromptBundle, client: GenerationClient, max_tokens: int = DEFAULT_MAX_TOKENS,
                   retries: int = 3, backoff: float = 0.5, sleep=time.sleep) -> ConceptLabel:
    """Label one cluster, retrying transient failures up to ``retries``
    attempts in total with delays ``backoff * 2**k``."""
    if max_tokens < 1 or retries < 1:
        raise ValueError("max_tokens and retries must be positive")
    for attempt in range(retries):
        try:
            out = client.complete(bundle, max_tokens)
            break
        except TransientClientError as exc:
            if attempt == retries - 1:
                raise ClientError(f"giving up after {retries} attempts: {exc}") from exc
            logger.warning("cluster %s: attempt %d failed (%s), retrying",
                           (bundle.level, bundle.cluster_index), attempt + 1, exc)
            sleep(backoff * 2 ** attempt)
    text = clean_label(out.text, max_tokens)
    if not text:
        raise EmptyResponseError(f"cluster {(bundle.level, bundle.cluster_index)}: empty response")
    return ConceptLabel(text, getattr(client, "source", "client"), out.logprobs)


def verbalize_hierarchy(hier: Hierarchy, instruction: str, client: GenerationClient,
                        budget: int = DEFAULT_BUDGET, max_tokens: int = DEFAULT_MAX_TOKENS,
                        workers: int = 1, retries: int = 3, backoff: float = 0.5,
                        projector: ProjectorParams | None = None,
                        transcript=None) -> dict[tuple[int, int], ConceptLabel]:
    """Label every cluster, level 1 first; parents see their children's labels.

    Requests inside a level run on up to ``workers`` threads; results and
    transcript lines are merged in cluster order. ``transcript`` is a path
    appended to with one JSON object per labeled node. A failure raises
    :class:`VerbalizationError` carrying the labels finished so far.
    """
    labels: dict[tuple[int, int], ConceptLabel] = {}
    for level in range(1, len(hier.assignments) + 1):
        keys = [(level, i) for i in range(len(hier.assignments[level - 1]))]

        def run(key):
            kids = children(hier, *key)
            bundle = build_prompt(hier, key[0], key[1], instruction,
                                  [labels[(key[0] - 1, k)].text for k in kids], budget, projector)
            return bundle, verbalize_node(bundle, client, max_tokens, retries, backoff)

        results: dict = {}
        failed = None
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = {k: pool.submit(run, k) for k in keys}
                for k in keys:
                    try:
                        results[k] = futures[k].result()
                    except Exception as exc:  # noqa: BLE001
                        failed = failed or (k, exc)
        else:
            for k in keys:
                try:
                    results[k] = run(k)
                except Exception as exc:  # noqa: BLE001
                    failed = (k, exc)
                    break
        for k in keys:
            if k in results:
                labels[k] = results[k][1]
        if transcript is not None:
            _append_transcript(transcript, [results[k] for k in keys if k in results])
        if failed:
            raise VerbalizationError(failed[0], dict(labels), failed[1]) from failed[1]
    return labels


def _append_transcript(path, rows) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        for bundle, label in rows:
            rec = bundle.to_dict()
            rec.update(prompt=bundle.serialize(), label=label.text, source=label.source,
                       logprobs=list(label.logprobs) if label.logprobs is not None else None)
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
