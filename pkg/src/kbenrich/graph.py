"""Entity-property graph with usage edges and top-k similarity edges."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kb import KnowledgeBase
from .similarity import SimilarityWeights, corpus_stats, top_k_neighbors

GRAPH_FORMAT_VERSION = 1


@dataclass
class EntityPropertyGraph:
    entity_nodes: list[str]
    property_nodes: list[str]
    entity_props: list[list[int]]      # N_i^P
    property_entities: list[list[int]]  # M_j^E
    entity_neighbors: list[list[int]]   # N_i^E, best first
    k: int
    symmetrized: bool = False

    def __post_init__(self):
        self.entity_index = {e: i for i, e in enumerate(self.entity_nodes)}
        self.property_index = {p: j for j, p in enumerate(self.property_nodes)}

    @property
    def n(self) -> int:
        return len(self.entity_nodes)

    @property
    def m(self) -> int:
        return len(self.property_nodes)

    def ep_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Entity-property usage edges as parallel (entity, property) index arrays."""
        ei = [i for i, ps in enumerate(self.entity_props) for _ in ps]
        pj = [j for ps in self.entity_props for j in ps]
        return np.asarray(ei, dtype=np.int64), np.asarray(pj, dtype=np.int64)

    def ee_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """(center, neighbor) index arrays for entity-entity edges."""
        c = [i for i, ns in enumerate(self.entity_neighbors) for _ in ns]
        nb = [j for ns in self.entity_neighbors for j in ns]
        return np.asarray(c, dtype=np.int64), np.asarray(nb, dtype=np.int64)

    def used_properties(self, entity: str) -> set[str]:
        i = self.entity_index[entity]
        return {self.property_nodes[j] for j in self.entity_props[i]}

    def check_consistency(self) -> None:
        for i, ps in enumerate(self.entity_props):
            for j in ps:
                if i not in self.property_entities[j]:
                    raise AssertionError(f"edge ({i},{j}) missing from property side")
        for j, es in enumerate(self.property_entities):
            for i in es:
                if j not in self.entity_props[i]:
                    raise AssertionError(f"edge ({i},{j}) missing from entity side")
        if any(len(ns) > self.k for ns in self.entity_neighbors) and not self.symmetrized:
            raise AssertionError("entity neighbor list longer than k")

    def to_json(self) -> str:
        """Canonical serialization (sorted keys, no whitespace variation)."""
        return json.dumps({
            "version": GRAPH_FORMAT_VERSION,
            "k": self.k,
            "symmetrized": self.symmetrized,
            "entity_nodes": self.entity_nodes,
            "property_nodes": self.property_nodes,
            "entity_props": self.entity_props,
            "property_entities": self.property_entities,
            "entity_neighbors": self.entity_neighbors,
        }, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "EntityPropertyGraph":
        d = json.loads(text)
        if d.get("version") != GRAPH_FORMAT_VERSION:
            raise ValueError(f"unsupported graph version {d.get('version')}")
        return cls(d["entity_nodes"], d["property_nodes"], d["entity_props"],
                   d["property_entities"], d["entity_neighbors"], d["k"], d["symmetrized"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "EntityPropertyGraph":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def build_graph(kb: KnowledgeBase, weights: SimilarityWeights | None = None, k: int = 10,
                symmetrize: bool = False) -> EntityPropertyGraph:
    """Build the graph over the KB's subject entities and used properties.

    Node indices follow sorted id order. Entity-entity edges run from each
    entity to its own top-k list; ``symmetrize`` also adds the reverse edges.
    """
    weights = weights or SimilarityWeights()
    entities = kb.subjects()
    properties = sorted({f.property for f in kb.facts})
    pidx = {p: j for j, p in enumerate(properties)}
    eidx = {e: i for i, e in enumerate(entities)}

    entity_props = [sorted(pidx[p] for p in kb.properties_of(e)) for e in entities]
    property_entities: list[list[int]] = [[] for _ in properties]
    for i, ps in enumerate(entity_props):
        for j in ps:
            property_entities[j].append(i)

    stats = corpus_stats(kb)
    neighbors = [[eidx[o] for o, _ in top_k_neighbors(kb, stats, weights, e, k, entities)]
                 for e in entities]
    if symmetrize:
        sets = [set(ns) for ns in neighbors]
        for i, ns in enumerate(neighbors):
            for j in ns:
                sets[j].add(i)
        neighbors = [ns + sorted(sets[i] - set(ns)) for i, ns in enumerate(neighbors)]

    return EntityPropertyGraph(entities, properties, entity_props, property_entities,
                               neighbors, k, symmetrize)
