"""Command-line pipeline: ``citetax <subcommand> ...``.

Every input and output path is an explicit flag. ``--config FILE`` reads an
INI file whose ``[citetax]`` section, then the section named after the
subcommand, supply flag defaults (keys are flag names with ``_`` or ``-``);
flags given on the command line win.

File layouts are documented in :mod:`citetax.graph` (papers, citations,
embeddings), :mod:`citetax.labels` (gold labels), :mod:`citetax.hiclust`
(hierarchy) and :mod:`citetax.taxonomy` (taxonomy). Concept labels are a
JSON file ``{"labels": [{"level", "index", "text", "source", "logprobs"}]}``.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from pathlib import Path

from .encoder import EncoderParams
from .evaluation import OracleScorer, evaluate_hierarchy
from .graph import CitationGraph, GraphError, fallback_embed, load_citation_graph, load_embeddings, save_embeddings
from .hiclust import ClusterConfig, Hierarchy, build_hierarchy
from .labels import load_labels
from .synth import SynthConfig, synth_graph
from .taxonomy import TaxonomyError, assemble, export_dot, export_json
from .train import TrainConfig, TrainingDiverged, train_clustering
from .verbalizer import (API_KEY_ENV, DEFAULT_BUDGET, DEFAULT_MAX_TOKENS, ClientError, ConceptLabel,
                         HttpClient, StubClient, VerbalizationError, verbalize_hierarchy)

logger = logging.getLogger("citetax")

LABELS_FORMAT = "citetax-labels"


def _floats(s: str) -> list[float]:
    return [float(x) for x in s.split(",") if x.strip()]


def _ints(s: str) -> list[int]:
    return [int(x) for x in s.split(",") if x.strip()]


def _graph_args(p, need_edges=True):
    p.add_argument("--nodes", required=True, help="papers, JSON Lines")
    p.add_argument("--edges", required=need_edges, help="citations, src<TAB>dst per line")


def _load_graph(args) -> CitationGraph:
    return load_citation_graph(args.nodes, args.edges)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="citetax", description="Build topic taxonomies from citation graphs.")
    ap.add_argument("--config", help="INI file with flag defaults")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("synth", help="write a planted multi-level instance")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--blocks", type=_ints, default=[4, 2], help="blocks per level, e.g. 4,2")
    p.add_argument("--block-size", type=int, default=15)
    p.add_argument("--p-intra", type=_floats, default=[0.9], help="link probability per shared level")
    p.add_argument("--p-inter", type=float, default=0.05)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--spread", type=_floats, default=[0.3, 0.15])
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("ingest", help="validate a citation graph and write it back normalized")
    _graph_args(p)
    p.add_argument("--out-nodes", required=True)
    p.add_argument("--out-edges", required=True)

    p = sub.add_parser("embed", help="hashed bag-of-words embeddings for papers without vectors")
    _graph_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--field", choices=["title+abstract", "title", "abstract"], default="title+abstract")
    p.add_argument("--binary", action="store_true", help="write the binary embedding format")

    p = sub.add_parser("train", help="train encoder and pair scorer on gold labels")
    _graph_args(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--labels", required=True, help="gold hierarchy labels")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--report", help="per-epoch loss trace (JSON)")
    d = TrainConfig()
    for name in ("alpha", "tau", "lam", "p_tau", "lr", "val_fraction"):
        p.add_argument("--" + name.replace("_", "-"), type=float, default=getattr(d, name))
    for name in ("epochs", "seed", "patience", "hidden", "heads", "n_layers", "n_scorers"):
        p.add_argument("--" + name.replace("_", "-"), type=int, default=getattr(d, name))
    p.add_argument("--delta", type=_floats, default=None, help="per-level contrastive weights")

    p = sub.add_parser("cluster", help="build the cluster hierarchy")
    _graph_args(p)
    p.add_argument("--embeddings", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", help="trained parameters")
    src.add_argument("--oracle-labels", help="score pairs from gold labels instead of a model")
    p.add_argument("--out", required=True)
    c = ClusterConfig()
    p.add_argument("--p-tau", type=float, default=c.p_tau)
    p.add_argument("--scope", choices=["neighbors", "all-pairs"], default=c.scope)
    p.add_argument("--root-size", type=int, default=c.root_size)
    p.add_argument("--max-levels", type=int, default=c.max_levels)

    p = sub.add_parser("verbalize", help="label every cluster bottom-up")
    _graph_args(p)
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--instruction", required=True)
    p.add_argument("--out", required=True, help="concept labels (JSON)")
    p.add_argument("--client", choices=["stub", "http"], default="stub")
    p.add_argument("--endpoint", help="generation endpoint URL for --client http")
    p.add_argument("--api-key-env", default=API_KEY_ENV, help="environment variable holding the credential")
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--budget", type=int, default=DEFAULT_BUDGET, help="prompt size limit in characters")
    p.add_argument("--max-tokens", type=int, default=DEFAULT_MAX_TOKENS)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--retries", type=int, default=3)
    p.add_argument("--transcript", help="append prompts and responses here (JSON Lines)")

    p = sub.add_parser("export", help="assemble, validate and write the taxonomy")
    _graph_args(p)
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--labels", required=True, help="concept labels from verbalize")
    p.add_argument("--instruction", help="label of the synthetic root, when one is needed")
    p.add_argument("--json", required=True, dest="json_out")
    p.add_argument("--dot", help="also write a Graphviz file")

    p = sub.add_parser("eval", help="pairwise clustering accuracy against gold labels")
    _graph_args(p)
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--labels", required=True, help="gold hierarchy labels")
    p.add_argument("--embeddings", help="also score the K-means baseline on these vectors")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    return ap


def _apply_config(ap: argparse.ArgumentParser, path: str, command: str) -> None:
    cp = configparser.ConfigParser()
    if not cp.read(path, encoding="utf-8"):
        raise OSError(f"cannot read config file {path}")
    sub = next(a for a in ap._actions if isinstance(a, argparse._SubParsersAction)).choices[command]
    actions = {a.dest: a for a in sub._actions}
    for section in ("citetax", command):
        if not cp.has_section(section):
            continue
        for key, raw in cp.items(section):
            dest = key.replace("-", "_")
            dest = {"json": "json_out"}.get(dest, dest)
            act = actions.get(dest)
            if act is None:
                if section == command:
                    raise ValueError(f"{path}: unknown key {key!r} in [{section}]")
                continue
            if isinstance(act, argparse._StoreTrueAction):
                value = cp.getboolean(section, key)
            else:
                value = act.type(raw) if act.type else raw
            act.required = False
            sub.set_defaults(**{dest: value})


def _write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def save_concept_labels(path, labels: dict) -> None:
    rows = [{"level": l, "index": i, "text": lab.text, "source": lab.source,
             "logprobs": list(lab.logprobs) if lab.logprobs is not None else None}
            for (l, i), lab in sorted(labels.items())]
    _write_json(path, {"format": LABELS_FORMAT, "version": 1, "labels": rows})


def load_concept_labels(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != LABELS_FORMAT:
        raise ValueError(f"{path}: not a concept-label file")
    return {(r["level"], r["index"]): ConceptLabel(r["text"], r["source"],
                                                   tuple(r["logprobs"]) if r["logprobs"] is not None else None)
            for r in doc["labels"]}


def cmd_synth(args) -> None:
    cfg = SynthConfig(n_blocks=tuple(args.blocks), block_size=args.block_size, p_intra=tuple(args.p_intra),
                      p_inter=args.p_inter, noise=args.noise, spread=tuple(args.spread), dim=args.dim,
                      seed=args.seed)
    inst = synth_graph(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    inst.graph.save(out / "nodes.jsonl", out / "edges.tsv")
    save_embeddings(out / "embeddings.jsonl", inst.graph, inst.X)
    inst.labels.save(out / "labels.tsv", inst.graph)
    print(f"wrote {len(inst.graph)} papers, {len(inst.graph.edges)} citations to {out}")


def cmd_ingest(args) -> None:
    g = _load_graph(args)
    g.save(args.out_nodes, args.out_edges)
    print(f"{len(g)} papers, {len(g.edges)} citations "
          f"({g.dropped_self_loops} self-citations, {g.dropped_duplicates} duplicates dropped)")


def cmd_embed(args) -> None:
    g = _load_graph(args)
    X = fallback_embed(g, args.dim, args.seed, args.field)
    save_embeddings(args.out, g, X, binary=args.binary)


def cmd_train(args) -> None:
    g = _load_graph(args)
    X = load_embeddings(args.embeddings, g)
    labels = load_labels(args.labels, g)
    cfg = TrainConfig(alpha=args.alpha, tau=args.tau, delta=args.delta, lam=args.lam, p_tau=args.p_tau,
                      lr=args.lr, epochs=args.epochs, seed=args.seed, patience=args.patience,
                      val_fraction=args.val_fraction, hidden=args.hidden, heads=args.heads,
                      n_layers=args.n_layers, n_scorers=args.n_scorers)
    res = train_clustering(g, X, labels, cfg)
    res.params.save(args.out)
    if args.report:
        res.save_report(args.report, cfg)
    last = res.history[res.best_epoch]
    print(f"best epoch {res.best_epoch} of {len(res.history) - 1}: loss {last['loss']:.4f}")


def cmd_cluster(args) -> None:
    g = _load_graph(args)
    X = load_embeddings(args.embeddings, g)
    cfg = ClusterConfig(p_tau=args.p_tau, scope=args.scope, root_size=args.root_size, max_levels=args.max_levels)
    if args.oracle_labels:
        hier = build_hierarchy(g, X, None, cfg, scorer=OracleScorer(load_labels(args.oracle_labels, g)))
    else:
        hier = build_hierarchy(g, X, EncoderParams.load(args.checkpoint), cfg)
    hier.dump(args.out)
    print("clusters per level:", [len(a) for a in hier.assignments])


def cmd_verbalize(args) -> None:
    g = _load_graph(args)
    hier = Hierarchy.load(args.hierarchy, g)
    if args.client == "http":
        if not args.endpoint:
            raise ValueError("--client http needs --endpoint")
        client = HttpClient(args.endpoint, args.api_key_env, args.timeout)
    else:
        client = StubClient()
    try:
        labels = verbalize_hierarchy(hier, args.instruction, client, budget=args.budget,
                                     max_tokens=args.max_tokens, workers=args.workers,
                                     retries=args.retries, transcript=args.transcript)
    except VerbalizationError as exc:
        partial = args.out + ".partial"
        save_concept_labels(partial, exc.partial)
        raise ClientError(f"{exc} ({len(exc.partial)} labels kept in {partial})") from exc
    save_concept_labels(args.out, labels)
    print(f"labeled {len(labels)} clusters")


def cmd_export(args) -> None:
    g = _load_graph(args)
    hier = Hierarchy.load(args.hierarchy, g)
    tree = assemble(hier, load_concept_labels(args.labels), args.instruction)
    export_json(tree, args.json_out)
    if args.dot:
        export_dot(tree, args.dot)
    print(f"taxonomy with {len(tree)} topics")


def cmd_eval(args) -> None:
    g = _load_graph(args)
    hier = Hierarchy.load(args.hierarchy, g)
    labels = load_labels(args.labels, g)
    X = load_embeddings(args.embeddings, g) if args.embeddings else None
    report = evaluate_hierarchy(hier, labels, X, args.seed)
    report.save(args.out)
    row = " ".join(f"L{l}={a:.4f}" for l, a in zip(report.levels, report.method))
    print(f"{row} avg={report.average:.4f}")


COMMANDS = {"synth": cmd_synth, "ingest": cmd_ingest, "embed": cmd_embed, "train": cmd_train,
            "cluster": cmd_cluster, "verbalize": cmd_verbalize, "export": cmd_export, "eval": cmd_eval}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        pre = argparse.ArgumentParser(add_help=False)
        pre.add_argument("--config")
        known, rest = pre.parse_known_args(argv)
        command = next((a for a in rest if a in COMMANDS), None)
        if known.config and command:
            _apply_config(ap, known.config, command)
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (OSError, ValueError, configparser.Error) as exc:
        print(f"citetax: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (GraphError, TaxonomyError, ClientError, TrainingDiverged, OSError, ValueError, KeyError) as exc:
        print(f"citetax: error: {exc}", file=sys.stderr)
        return 1
    return 0


run_pipeline = main

if __name__ == "__main__":
    sys.exit(main())
