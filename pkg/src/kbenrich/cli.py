"""Command line interface: ``kbenrich <group> <command> [options]``.

Exit codes: 0 success (including empty results), 1 configuration error,
2 data error, 3 optimisation did not converge.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import EXAMPLE, ConfigError, PipelineConfig, load_config
from .gnn import load_checkpoint, rank_properties, save_checkpoint, train
from .graph import EntityPropertyGraph, build_graph
from .kb import KBParseError, load_kb, save_kb, synthetic_kb
from .pipeline import enrich, write_back
from .protocol import run_synthetic_protocol, write_report
from .similarity import corpus_stats, top_k_neighbors
from .sources import ClaimPoolExtractor, World, generate_world, load_claims, load_facts_jsonl
from .truth import verify

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NONCONVERGED = 0, 1, 2, 3

log = logging.getLogger("kbenrich")


class DataError(Exception):
    pass


def _input(args, cfg: PipelineConfig, name: str, flag: str | None = None) -> Path:
    """Path from a command line flag, else from ``[paths]``."""
    value = getattr(args, flag or name, None)
    if value is not None:
        p = Path(value)
        if not p.exists():
            raise DataError(f"{p} does not exist")
        return p
    return cfg.path(name)


def _output(args, cfg: PipelineConfig, name: str, flag: str = "out") -> Path:
    value = getattr(args, flag, None)
    return Path(value) if value is not None else cfg.path(name, must_exist=False)


def _emit(text: str) -> None:
    sys.stdout.write(text)


# --- commands ------------------------------------------------------------------

def cmd_kb_stats(args, cfg):
    kb = load_kb(_input(args, cfg, "kb"))
    _emit(json.dumps(kb.stats(), sort_keys=True) + "\n")


def cmd_sim_topk(args, cfg):
    kb = load_kb(_input(args, cfg, "kb"))
    k = args.k or cfg.k
    for e, s in top_k_neighbors(kb, corpus_stats(kb), cfg.weights, args.entity, k):
        _emit(f"{e}\t{s:.6f}\n")


def cmd_graph_build(args, cfg):
    kb = load_kb(_input(args, cfg, "kb"))
    g = build_graph(kb, cfg.weights, args.k or cfg.k, symmetrize=args.symmetrize_ee)
    out = _output(args, cfg, "graph")
    g.save(out)
    _emit(f"{out}\t{g.n} entities\t{g.m} properties\n")


def cmd_gnn_train(args, cfg):
    graph = EntityPropertyGraph.load(_input(args, cfg, "graph"))
    gcfg = cfg.gnn
    if args.epochs:
        gcfg = dataclasses.replace(gcfg, epochs=args.epochs)
    if args.per_role_attention:
        gcfg = dataclasses.replace(gcfg, per_role_attention=True)
    if args.no_attention:
        gcfg = dataclasses.replace(gcfg, attention_enabled=False)
    result = train(graph, gcfg)
    out = _output(args, cfg, "checkpoint")
    save_checkpoint(out, result, graph)
    _emit(f"{out}\tloss {result.history[0]:.4f} -> {result.history[-1]:.4f}\n")


def _model(args, cfg):
    graph = EntityPropertyGraph.load(_input(args, cfg, "graph"))
    model = load_checkpoint(_input(args, cfg, "checkpoint"))
    if model.entity_nodes != graph.entity_nodes or model.property_nodes != graph.property_nodes:
        raise DataError("checkpoint was trained on a different graph")
    return graph, model


def cmd_gnn_rank(args, cfg):
    graph, model = _model(args, cfg)
    for p, s in rank_properties(graph, model.params, args.entity, args.m or cfg.m,
                                model.config.attention_enabled):
        _emit(f"{p}\t{s:.6f}\n")


def cmd_world_generate(args, cfg):
    wc = cfg.protocol.world
    world = generate_world(n_facts=args.n_facts, n_sources=args.n_sources or wc.n_sources,
                           powerlaw_exponent=args.exponent or wc.powerlaw_exponent,
                           variance_range=tuple(wc.variance_range), seed=cfg.seed,
                           prior_fraction=wc.prior_fraction,
                           min_claims_per_fact=wc.min_claims_per_fact)
    out = _output(args, cfg, "world")
    world.save(out)
    _emit(f"{out}\t{len(world.facts)} facts\t{len(world.sources)} sources\t"
          f"{len(world.claims)} claims\n")


def _claims_and_priors(args, cfg):
    if getattr(args, "claims", None) or "claims" in cfg.paths:
        claims = load_claims(_input(args, cfg, "claims"))
        priors = load_facts_jsonl(_input(args, cfg, "priors")) \
            if getattr(args, "priors", None) or "priors" in cfg.paths else []
        return claims, priors
    world = World.load(_input(args, cfg, "world"))
    return world.claims, world.prior_truths


def cmd_verify(args, cfg):
    claims, priors = _claims_and_priors(args, cfg)
    assignment, stats = verify(claims, priors, cfg.truth)
    out = _output(args, cfg, "output")
    out.mkdir(parents=True, exist_ok=True)
    kinds = {c.fact.key: c.fact.kind for c in claims}
    lines = ["entity\tproperty\tvalue\tkind\tz\tlabel"]
    for key in sorted(assignment.z):
        lines.append("\t".join([*key, kinds[key], f"{assignment.z[key]:.6f}",
                                str(assignment.labels[key]).lower()]))
    (out / "facts.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    lines = ["source\tnu\ttau2\treliability"]
    for s in sorted(stats):
        st = stats[s]
        lines.append(f"{s}\t{st.nu:g}\t{st.tau2:.6g}\t{st.reliability:.6g}")
    (out / "sources.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    n_true = sum(assignment.labels.values())
    _emit(f"{out}\t{len(assignment.z)} facts\t{n_true} true\n")
    if not assignment.converged:
        log.warning("truth inference hit the iteration limit")
        return EXIT_NONCONVERGED
    return EXIT_OK


def _ranges(cfg) -> dict[str, str]:
    if "ranges" not in cfg.paths:
        return {}
    out = {}
    for no, line in enumerate(cfg.path("ranges").read_text(encoding="utf-8").splitlines(), 1):
        if line.strip() and not line.startswith("#"):
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"ranges line {no}: expected 'property<TAB>class'")
            out[parts[0]] = parts[1]
    return out


def cmd_enrich(args, cfg):
    kb = load_kb(_input(args, cfg, "kb"))
    graph, model = _model(args, cfg)
    claims, priors = _claims_and_priors(args, cfg)
    result = enrich(args.entity, graph, model, [ClaimPoolExtractor(claims)], args.m or cfg.m,
                    cfg.truth, kb, context_claims=claims, prior_truths=priors)
    out = _output(args, cfg, "output")
    out.mkdir(parents=True, exist_ok=True)
    (out / "enrichment.json").write_text(result.to_json(), encoding="utf-8")
    (out / "enrichment.tsv").write_text(result.to_tsv(), encoding="utf-8")
    if args.write_back:
        updated, audit = write_back(kb, result, _ranges(cfg))
        save_kb(updated, out / "kb_enriched.tsv")
        (out / "audit.json").write_text(json.dumps(audit, indent=2, sort_keys=True) + "\n",
                                        encoding="utf-8")
    _emit(f"{out}\t{len(result.facts)} candidate facts\t{len(result.verified)} verified\n")
    if not result.converged:
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_eval_run(args, cfg):
    if "kb" in cfg.paths:
        kb = load_kb(cfg.path("kb"))
    else:
        s = cfg.synthetic
        kb = synthetic_kb(s.n_classes, s.entities_per_class, s.properties_per_class, seed=cfg.seed)
    classes = cfg.classes or sorted(c for c in kb.classes if kb.members(c) and "_sub" not in c)
    report = run_synthetic_protocol(kb, classes, cfg.protocol)
    out = Path(args.out) if args.out else cfg.path("output", must_exist=False) / "report.json"
    for p in write_report(report, out, figures=not args.no_figures):
        _emit(f"{p}\n")


def cmd_config_example(args, cfg):
    _emit(EXAMPLE)


# --- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kbenrich", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="INI configuration file")
    parser.add_argument("-v", "--verbose", action="store_true")
    groups = parser.add_subparsers(dest="group", required=True)

    def command(group, name, func, help):
        p = group.add_parser(name, help=help)
        p.add_argument("--config", default=argparse.SUPPRESS, help="INI configuration file")
        p.set_defaults(func=func)
        return p

    kb = groups.add_parser("kb", help="knowledge base utilities").add_subparsers(
        dest="cmd", required=True)
    p = command(kb, "stats", cmd_kb_stats, "entity/property/class/literal/fact counts")
    p.add_argument("--kb", help="KB file (default: paths.kb)")

    sim = groups.add_parser("sim", help="entity similarity").add_subparsers(dest="cmd", required=True)
    p = command(sim, "topk", cmd_sim_topk, "most similar entities")
    p.add_argument("--kb", help="KB file (default: paths.kb)")
    p.add_argument("--entity", required=True, help="entity id")
    p.add_argument("--k", type=int, help="neighbours per entity (default: similarity.k)")

    graph = groups.add_parser("graph", help="entity-property graph").add_subparsers(
        dest="cmd", required=True)
    p = command(graph, "build", cmd_graph_build, "build and save the graph")
    p.add_argument("--kb", help="KB file (default: paths.kb)")
    p.add_argument("--k", type=int, help="neighbours per entity (default: similarity.k)")
    p.add_argument("--out", help="graph JSON to write (default: paths.graph)")
    p.add_argument("--symmetrize-ee", action="store_true",
                   help="add reverse entity-entity edges")

    gnn = groups.add_parser("gnn", help="property prediction model").add_subparsers(
        dest="cmd", required=True)
    p = command(gnn, "train", cmd_gnn_train, "train and checkpoint the model")
    p.add_argument("--graph", help="graph JSON (default: paths.graph)")
    p.add_argument("--out", help="checkpoint to write (default: paths.checkpoint)")
    p.add_argument("--epochs", type=int, help="override gnn.epochs")
    p.add_argument("--per-role-attention", action="store_true",
                   help="separate attention parameters per neighbour role")
    p.add_argument("--no-attention", action="store_true", help="uniform coefficients")
    p = command(gnn, "rank", cmd_gnn_rank, "top-m predicted properties for an entity")
    p.add_argument("--graph", help="graph JSON (default: paths.graph)")
    p.add_argument("--checkpoint", help="model checkpoint (default: paths.checkpoint)")
    p.add_argument("--entity", required=True, help="entity id")
    p.add_argument("--m", type=int, help="properties to predict (default: pipeline.m)")

    world = groups.add_parser("world", help="simulated sources").add_subparsers(
        dest="cmd", required=True)
    p = command(world, "generate", cmd_world_generate, "write a synthetic claim world")
    p.add_argument("--out", help="world directory to write (default: paths.world)")
    p.add_argument("--n-facts", type=int, default=200, help="candidate facts to simulate")
    p.add_argument("--n-sources", type=int, help="override world.n_sources")
    p.add_argument("--exponent", type=float, help="override world.powerlaw_exponent")

    p = groups.add_parser("verify", help="verify claims")
    p.add_argument("--config", default=argparse.SUPPRESS, help="INI configuration file")
    p.add_argument("--claims", help="claims JSONL (default: paths.claims, else the world's claims)")
    p.add_argument("--priors", help="prior-truth facts JSONL")
    p.add_argument("--world", help="world directory (default: paths.world)")
    p.add_argument("--out", help="output directory (default: paths.output)")
    p.set_defaults(func=cmd_verify)

    p = groups.add_parser("enrich", help="enrich one entity end to end")
    p.add_argument("--config", default=argparse.SUPPRESS, help="INI configuration file")
    p.add_argument("--entity", required=True, help="entity id")
    p.add_argument("--kb", help="KB file (default: paths.kb)")
    p.add_argument("--graph", help="graph JSON (default: paths.graph)")
    p.add_argument("--checkpoint", help="model checkpoint (default: paths.checkpoint)")
    p.add_argument("--claims", help="claims JSONL (default: paths.claims, else the world's claims)")
    p.add_argument("--priors", help="prior-truth facts JSONL")
    p.add_argument("--world", help="world directory (default: paths.world)")
    p.add_argument("--m", type=int, help="properties to predict (default: pipeline.m)")
    p.add_argument("--out", help="output directory (default: paths.output)")
    p.add_argument("--write-back", action="store_true",
                   help="also write kb_enriched.tsv and audit.json")
    p.set_defaults(func=cmd_enrich)

    ev = groups.add_parser("eval", help="evaluation protocol").add_subparsers(
        dest="cmd", required=True)
    p = command(ev, "run", cmd_eval_run, "run the synthetic protocol and write a report")
    p.add_argument("--out", help="report JSON path (default: paths.output/report.json)")
    p.add_argument("--no-figures", action="store_true", help="skip the PNG figures")

    cfg = groups.add_parser("config", help="configuration").add_subparsers(
        dest="cmd", required=True)
    command(cfg, "example", cmd_config_example, "print an example configuration")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        code = args.func(args, cfg)
        return EXIT_OK if code is None else code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, KBParseError, ValueError, KeyError, FileNotFoundError,
            json.JSONDecodeError, FloatingPointError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"data error: {msg}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
