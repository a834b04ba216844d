"""Synthetic evaluation protocol: property ranking and fact verification per class.

For every class: sample train/validation/test entities, hide all but five
properties of each validation and test entity, build the entity-property
graph over the training KB, train the GNN and rank the hidden properties.
The hidden facts of the test entities, padded with wrong candidate values,
then go through simulated sources and the verifier.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .gnn import GnnConfig, predict_all, rank_properties, train
from .graph import build_graph
from .kb import TYPE_PROPERTY, Fact, KnowledgeBase, apply_leave_n_out, sample_synthetic_split
from .metrics import fact_prf, mean_average_precision, ndcg_at_m, precision_at_m
from .similarity import SimilarityWeights
from .sources import generate_world
from .truth import TruthConfig, majority_init, predict_cardinality, verify

log = logging.getLogger(__name__)

REPORT_SCHEMA = "kbenrich-report"
REPORT_VERSION = 1
RANK_METRICS = ("prec@5", "prec@10", "ndcg@5", "ndcg@10", "map")
FACT_METRICS = ("precision", "recall", "f1")


@dataclass
class WorldConfig:
    n_sources: int = 50
    powerlaw_exponent: float = 2.0
    variance_range: tuple[float, float] = (0.01, 0.25)
    distractors_per_group: int = 3
    prior_fraction: float = 0.1
    min_claims_per_fact: int = 2


@dataclass
class ProtocolConfig:
    n_train: int = 40
    n_val: int = 5
    n_test: int = 15
    leave_n: int = 5
    popular_fraction: float = 0.2
    seed: int = 0
    weights: SimilarityWeights = field(default_factory=SimilarityWeights)
    gnn: GnnConfig = field(default_factory=lambda: GnnConfig(init_std=0.1))
    attention_ablation: bool = True
    select_every: int = 10  # validation check interval in epochs; 0 keeps the last epoch
    verification: bool = True
    truth: TruthConfig = field(default_factory=TruthConfig)
    world: WorldConfig = field(default_factory=WorldConfig)


@dataclass
class RankingResult:
    entity: str
    ranked: list[str]
    relevant: set[str]

    def __post_init__(self):
        # relevance is judged inside the candidate universe only
        self.relevant = self.relevant & set(self.ranked)


def popularity_baseline(kb: KnowledgeBase, class_id: str, entity: str | None = None,
                        m: int | None = 10) -> list[str]:
    """Properties of ``class_id`` ranked by how many members use them (ties by id).

    The list is class-global: ``entity`` does not change it.
    """
    members = kb.members(class_id)
    if not members:
        raise ValueError(f"class {class_id!r} has no members")
    counts: Counter[str] = Counter()
    for e in members:
        counts.update(p for p in kb.properties_of(e) if p != TYPE_PROPERTY)
    ranked = sorted(counts, key=lambda p: (-counts[p], p))
    return ranked if m is None else ranked[:m]


def ranking_metrics(results: Sequence[RankingResult]) -> dict[str, float]:
    if not results:
        return {k: 0.0 for k in RANK_METRICS}
    out = {}
    for m in (5, 10):
        out[f"prec@{m}"] = float(np.mean([precision_at_m(r.ranked, r.relevant, m) for r in results]))
        out[f"ndcg@{m}"] = float(np.mean([ndcg_at_m(r.ranked, r.relevant, m) for r in results]))
    out["map"] = mean_average_precision((r.ranked, r.relevant) for r in results)
    return {k: out[k] for k in RANK_METRICS}


def _class_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _popular(kb: KnowledgeBase, entities: Iterable[str], fraction: float) -> list[str]:
    ranked = sorted(entities, key=lambda e: (-len(kb.properties_of(e)), e))
    return sorted(ranked[:max(1, int(round(fraction * len(ranked))))])


def _distractors(kb: KnowledgeBase, held_out: list[Fact], per_group: int,
                 rng: np.random.Generator) -> list[Fact]:
    """Wrong candidate values for each held-out (entity, property) group."""
    value_pool: dict[str, set[tuple[str, str]]] = defaultdict(set)
    for f in kb.facts:
        if f.kind != "class":
            value_pool[f.property].add((f.object, f.kind))
    groups: dict[tuple[str, str], set[str]] = defaultdict(set)
    for f in held_out:
        groups[(f.subject, f.property)].add(f.object)
    out = []
    for (e, p), true_vals in sorted(groups.items()):
        pool = sorted(v for v in value_pool[p] if v[0] not in true_vals)
        if not pool:
            continue
        picks = rng.choice(len(pool), size=min(per_group, len(pool)), replace=False)
        out.extend(Fact(e, p, pool[i][0], pool[i][1]) for i in sorted(picks))
    return out


def _round(d: dict) -> dict:
    return {k: round(v, 6) if isinstance(v, float) else v for k, v in d.items()}


def _gnn_rankings(graph, params, split, entities, attention, scores) -> list[RankingResult]:
    out = []
    for e in entities:
        ranked = [p for p, _ in rank_properties(graph, params, e, None, attention, scores)]
        out.append(RankingResult(e, ranked, split.removed_ground_truth[e][0]))
    return out


def _train_selected(graph, gcfg: GnnConfig, split, every: int):
    """Train, keeping the parameters with the best validation MAP (checked every ``every`` epochs)."""
    if every <= 0 or not split.validation:
        return train(graph, gcfg), gcfg.epochs
    best = {"map": -1.0, "epoch": 0, "state": None}

    def check(epoch, params):
        if epoch % every and epoch != gcfg.epochs:
            return
        scores = predict_all(graph, params, gcfg.attention_enabled)
        res = _gnn_rankings(graph, params, split, split.validation, gcfg.attention_enabled, scores)
        value = ranking_metrics(res)["map"]
        if value > best["map"]:
            best.update(map=value, epoch=epoch,
                        state={k: v.detach().clone() for k, v in params.state_dict().items()})

    result = train(graph, gcfg, check)
    result.params.load_state_dict(best["state"])
    return result, best["epoch"]


def run_class(kb: KnowledgeBase, class_id: str, config: ProtocolConfig, index: int = 0) -> dict:
    """Ranking and verification rows for one class."""
    seed = _class_seed(config.seed, index)
    rng = np.random.default_rng(seed)
    split = sample_synthetic_split(kb, class_id, config.n_train, config.n_val, config.n_test, seed)
    held = split.validation + split.test
    apply_leave_n_out(kb, split, held, config.leave_n, seed)

    facts = [f for e in split.train for f in kb.facts_of(e)]
    facts += [f for e in held for f in split.kept[e]]
    class_kb = KnowledgeBase(facts)
    graph = build_graph(class_kb, config.weights, config.gnn.k)
    universe = set(graph.property_nodes)

    rows = []
    variants = [("gnn", True)] + ([("gnn-uniform", False)] if config.attention_ablation else [])
    for name, attention in variants:
        gcfg = dataclasses.replace(config.gnn, seed=seed, attention_enabled=attention)
        result, epoch = _train_selected(graph, gcfg, split, config.select_every)
        scores = predict_all(graph, result.params, attention)
        res = _gnn_rankings(graph, result.params, split, split.test, attention, scores)
        rows.append({"class": class_id, "method": name, **ranking_metrics(res),
                     "epoch": epoch})

    popular_ranking = popularity_baseline(class_kb, class_id, m=None)
    res = []
    for e in split.test:
        used = class_kb.properties_of(e)
        ranked = [p for p in popular_ranking if p not in used and p in universe]
        res.append(RankingResult(e, ranked, split.removed_ground_truth[e][0]))
    rows.append({"class": class_id, "method": "popularity", **ranking_metrics(res)})

    verification = []
    if config.verification:
        verification = _verify_class(kb, class_kb, class_id, split, config, rng, seed)
    return {"ranking": [_round(r) for r in rows], "verification": [_round(r) for r in verification]}


def _verify_class(kb, class_kb, class_id, split, config, rng, seed) -> list[dict]:
    wc = config.world
    held_out = sorted(f for e in split.test for f in split.removed_ground_truth[e][1])
    if not held_out:
        return []
    wrong = _distractors(kb, held_out, wc.distractors_per_group, rng)
    candidates = sorted(set(held_out) | set(wrong))
    truths = {f.key: f in set(held_out) for f in candidates}

    popular = _popular(class_kb, split.train, config.popular_fraction)
    pool = sorted(f for e in popular for f in class_kb.facts_of(e) if f.kind != "class")
    n_prior = min(len(pool), int(round(wc.prior_fraction * len(candidates))))
    priors = sorted(pool[i] for i in rng.choice(len(pool), size=n_prior, replace=False)) if n_prior else []

    world = generate_world(n_sources=wc.n_sources, powerlaw_exponent=wc.powerlaw_exponent,
                           variance_range=tuple(wc.variance_range), seed=seed,
                           facts=candidates, truths=truths, prior_facts=priors,
                           min_claims_per_fact=wc.min_claims_per_fact)
    cardinality = {}
    for e, p in {(f.subject, f.property) for f in candidates}:
        cardinality[(e, p)] = predict_cardinality(class_kb, p, popular,
                                                  config.truth.cardinality_threshold)
    claimed = sorted({c.fact.key for c in world.claims})
    prior_keys = {f.key for f in world.prior_truths}
    gold = world.gold()

    assignment, _ = verify(world.claims, world.prior_truths, config.truth, cardinality, claimed)
    zhat = majority_init(world.claims).z
    predicted = {
        "extraction": {k for k in claimed if k not in prior_keys},
        "majority": {k for k, z in zhat.items() if z >= config.truth.epsilon and k not in prior_keys},
        "verifier": {k for k, l in assignment.labels.items() if l and k not in prior_keys},
    }
    rows = []
    for name, pred in predicted.items():
        p, r, f1 = fact_prf(pred, gold)
        rows.append({"class": class_id, "method": name, "precision": p, "recall": r, "f1": f1})
    return rows


def _average(rows: list[dict], metrics: Sequence[str]) -> list[dict]:
    by_method: dict[str, list[dict]] = defaultdict(list)
    for r in rows:
        by_method[r["method"]].append(r)
    return [_round({"class": "avg", "method": m,
                    **{k: float(np.mean([r[k] for r in rs])) for k in metrics}})
            for m, rs in by_method.items()]


def run_synthetic_protocol(kb: KnowledgeBase, classes: Sequence[str],
                           config: ProtocolConfig | None = None) -> dict:
    """Per-class rows plus unweighted class averages, as a JSON-ready report."""
    config = config or ProtocolConfig()
    ranking, verification = [], []
    for idx, c in enumerate(classes):
        try:
            out = run_class(kb, c, config, idx)
        except (ValueError, KeyError, FloatingPointError) as exc:
            raise type(exc)(f"class {c}: {exc}") from exc
        ranking += out["ranking"]
        verification += out["verification"]
        log.info("class %s done", c)
    return {
        "schema": REPORT_SCHEMA,
        "version": REPORT_VERSION,
        "config": _config_dict(config),
        "classes": list(classes),
        "ranking": {"rows": ranking, "average": _average(ranking, RANK_METRICS)},
        "verification": {"rows": verification, "average": _average(verification, FACT_METRICS)},
    }


def _config_dict(config: ProtocolConfig) -> dict:
    d = dataclasses.asdict(config)
    d["truth"]["beta"] = list(config.truth.beta)
    d["world"]["variance_range"] = list(config.world.variance_range)
    return d


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def report_tsv(rows: Sequence[dict], metrics: Sequence[str]) -> str:
    lines = ["\t".join(("class", "method", *metrics))]
    for r in rows:
        lines.append("\t".join([r["class"], r["method"], *(f"{r[k]:.6f}" for k in metrics)]))
    return "\n".join(lines) + "\n"


def write_report(report: dict, out: str | Path, figures: bool = True) -> list[Path]:
    """report.json plus ranking/verification TSVs (and PNG charts) next to it."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report_json(report), encoding="utf-8")
    written = [out]
    for part, metrics in (("ranking", RANK_METRICS), ("verification", FACT_METRICS)):
        rows = report[part]["rows"] + report[part]["average"]
        path = out.with_name(f"{out.stem}_{part}.tsv")
        path.write_text(report_tsv(rows, metrics), encoding="utf-8")
        written.append(path)
    if figures:
        from .plotting import render_report_figures
        written += render_report_figures(report, out.parent, out.stem)
    return written
