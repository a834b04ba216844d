"""Per-entity enrichment: predict properties, collect claims, verify, write back."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .gnn import TrainResult, rank_properties
from .graph import EntityPropertyGraph
from .kb import TYPE_PROPERTY, Fact, KnowledgeBase
from .sources import Claim, ExtractorContract, merge_claims
from .truth import TruthConfig, predict_cardinality, verify

log = logging.getLogger(__name__)

NAME_PROPERTIES = ("name", "label")


@dataclass(frozen=True)
class EnrichedFact:
    fact: Fact
    z: float
    label: bool
    sources: tuple[str, ...]

    def to_dict(self) -> dict:
        return {**self.fact.to_dict(), "z": round(self.z, 9), "label": self.label,
                "sources": list(self.sources)}


@dataclass
class EnrichmentResult:
    entity: str
    predicted: list[tuple[str, float]]
    facts: list[EnrichedFact] = field(default_factory=list)
    diagnostics: dict[str, str] = field(default_factory=dict)
    converged: bool = True

    @property
    def verified(self) -> list[EnrichedFact]:
        return [f for f in self.facts if f.label]

    def to_json(self) -> str:
        doc = {
            "entity": self.entity,
            "predicted": [{"property": p, "score": round(s, 9)} for p, s in self.predicted],
            "facts": [f.to_dict() for f in self.facts],
            "diagnostics": self.diagnostics,
            "converged": self.converged,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def to_tsv(self) -> str:
        lines = ["entity\tproperty\tvalue\tkind\tz\tlabel\tsources"]
        for f in self.facts:
            lines.append("\t".join([f.fact.subject, f.fact.property, f.fact.object, f.fact.kind,
                                    f"{f.z:.6f}", str(f.label).lower(), ",".join(f.sources)]))
        return "\n".join(lines) + "\n"


def _cardinality(kb: KnowledgeBase | None, entity: str, props: Iterable[str],
                 threshold: float, popular_fraction: float = 0.2) -> dict[tuple[str, str], str]:
    """Cardinality per (entity, property) from the popular peers of ``entity``."""
    if kb is None:
        return {}
    peers: set[str] = set()
    for t in kb.types_of(entity) if entity in kb.entities else ():
        peers.update(kb.members(t))
    peers.discard(entity)
    ranked = sorted(peers, key=lambda e: (-len(kb.properties_of(e)), e))
    popular = ranked[:max(1, int(round(popular_fraction * len(ranked))))] if ranked else []
    return {(entity, p): predict_cardinality(kb, p, popular, threshold) for p in props}


def enrich(entity: str, graph: EntityPropertyGraph, model: TrainResult,
           extractors: Sequence[ExtractorContract], m: int = 10,
           truth: TruthConfig | None = None, kb: KnowledgeBase | None = None,
           context_claims: Sequence[Claim] = (), prior_truths: Iterable = ()) -> EnrichmentResult:
    """Predict ``m`` properties for ``entity``, gather their claims and verify them.

    Source hyperparameters are estimated over ``context_claims`` (typically
    the full claim pool) together with the entity's own claims, since most
    sources say too little about a single entity. Only facts about the
    predicted properties are returned.
    """
    truth = truth or TruthConfig()
    predicted = rank_properties(graph, model.params, entity, m,
                                model.config.attention_enabled)
    props = [p for p, _ in predicted]
    gathered: list[Claim] = []
    diagnostics = {}
    for p in props:
        found = merge_claims(*(ex.extract(entity, p) for ex in extractors))
        diagnostics[p] = f"{len(found)} claims" if found else "no claims"
        gathered += found
    if not gathered:
        return EnrichmentResult(entity, predicted, [], diagnostics)

    claims = merge_claims(context_claims, gathered)
    cardinality = _cardinality(kb, entity, props, truth.cardinality_threshold)
    assignment, _ = verify(claims, prior_truths, truth, cardinality)
    wanted = {(entity, p) for p in props}
    facts = []
    kinds = {c.fact.key: c.fact.kind for c in gathered}
    for key in sorted(k for k in assignment.z if (k[0], k[1]) in wanted):
        facts.append(EnrichedFact(Fact(*key, kinds.get(key, "literal")), assignment.z[key],
                                  bool(assignment.labels.get(key, False)),
                                  tuple(assignment.sources_of.get(key, ()))))
    return EnrichmentResult(entity, predicted, facts, diagnostics, assignment.converged)


def _match_entity(kb: KnowledgeBase, value: str) -> str | None:
    """Exact id match first, then exact name match (smallest id wins)."""
    if value in kb.entities:
        return value
    hits = sorted(f.subject for f in kb.facts
                  if f.property in NAME_PROPERTIES and f.object == value)
    return hits[0] if hits else None


def write_back(kb: KnowledgeBase, enrichment: EnrichmentResult,
               ranges: Mapping[str, str] | None = None) -> tuple[KnowledgeBase, list[dict]]:
    """Add the verified facts to ``kb``; returns the new KB and an audit log.

    Relation values resolve to existing entities by id, then by name. An
    unresolved value becomes a new entity, typed with the property's range
    when one is declared and otherwise left untyped and flagged.
    """
    ranges = ranges or {}
    additions: list[Fact] = []
    audit = []
    current = kb
    for ef in enrichment.verified:
        f = ef.fact
        entry = {"entity": f.subject, "property": f.property, "value": f.object,
                 "kind": f.kind, "z": round(ef.z, 9), "sources": list(ef.sources)}
        new = []
        if f.kind == "entity":
            target = _match_entity(current, f.object)
            if target is None:
                target = f.object
                rng_class = ranges.get(f.property)
                if rng_class:
                    new.append(Fact(target, TYPE_PROPERTY, rng_class, "class"))
                    entry["created"] = {"entity": target, "type": rng_class}
                else:
                    entry["created"] = {"entity": target, "type": None}
                    entry["flag"] = "untyped"
            fact = Fact(f.subject, f.property, target, "entity")
        else:
            fact = Fact(f.subject, f.property, f.object, "class" if f.kind == "class" else "literal")
        entry["fact"] = list(fact.key)
        if fact in current:
            entry["action"] = "skipped"
            entry["reason"] = "already present"
        else:
            entry["action"] = "added"
            new.append(fact)
            additions += new
            current = current.with_facts(new)
        audit.append(entry)
    return current, audit
