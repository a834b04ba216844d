"""Entity-entity similarity: type-, property- and value-based, and their blend."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

from .kb import KnowledgeBase


@dataclass(frozen=True)
class SimilarityWeights:
    alpha1: float = 0.3  # type
    alpha2: float = 0.3  # property
    alpha3: float = 0.4  # value

    def __post_init__(self):
        ws = (self.alpha1, self.alpha2, self.alpha3)
        if any(not 0.0 <= w <= 1.0 for w in ws):
            raise ValueError(f"similarity weights must lie in [0, 1], got {ws}")
        if abs(sum(ws) - 1.0) > 1e-9:
            raise ValueError(f"similarity weights must sum to 1, got {sum(ws)}")


@dataclass
class CorpusStats:
    """Type weights q_t = |E| / |{e : e has t}| and value information
    info(v) = log(|E| / |{e : e has v}|), over the KB's subject entities."""

    n_entities: int
    type_weight: dict[str, float]
    value_info: dict[str, float]


def corpus_stats(kb: KnowledgeBase) -> CorpusStats:
    ents = kb.subjects()
    n = len(ents)
    tcount: Counter[str] = Counter()
    vcount: Counter[str] = Counter()
    for e in ents:
        tcount.update(kb.type_index.get(e, ()))
        vcount.update(kb.value_index.get(e, ()))
    return CorpusStats(
        n,
        {t: n / c for t, c in tcount.items()},
        {v: math.log(n / c) for v, c in vcount.items()},
    )


def _check(kb: KnowledgeBase, *entities: str) -> None:
    for e in entities:
        if e not in kb.entities:
            raise KeyError(f"unknown entity {e!r}")


def _weighted_dice(a: frozenset[str] | set[str], b: frozenset[str] | set[str],
                   weight: dict[str, float]) -> float:
    denom = sum(weight.get(x, 0.0) for x in a) + sum(weight.get(x, 0.0) for x in b)
    if denom <= 0.0:
        return 0.0
    # sorted so the sum is order-independent and therefore exactly symmetric
    num = 2.0 * sum(weight.get(x, 0.0) for x in sorted(a & b))
    return min(1.0, num / denom)


def type_similarity(kb: KnowledgeBase, stats: CorpusStats, e1: str, e2: str) -> float:
    _check(kb, e1, e2)
    return _weighted_dice(kb.type_index.get(e1, frozenset()), kb.type_index.get(e2, frozenset()),
                          stats.type_weight)


def property_similarity(kb: KnowledgeBase, e1: str, e2: str) -> float:
    _check(kb, e1, e2)
    p1, p2 = kb.properties_of(e1), kb.properties_of(e2)
    if not p1 and not p2:
        return 0.0
    return 2.0 * len(p1 & p2) / (len(p1) + len(p2))


def value_similarity(kb: KnowledgeBase, stats: CorpusStats, e1: str, e2: str) -> float:
    _check(kb, e1, e2)
    return _weighted_dice(kb.value_index.get(e1, frozenset()), kb.value_index.get(e2, frozenset()),
                          stats.value_info)


def overall_similarity(weights: SimilarityWeights, s_t: float, s_p: float, s_v: float) -> float:
    return weights.alpha1 * s_t + weights.alpha2 * s_p + weights.alpha3 * s_v


def similarity(kb: KnowledgeBase, stats: CorpusStats, weights: SimilarityWeights,
               e1: str, e2: str) -> float:
    return overall_similarity(
        weights,
        type_similarity(kb, stats, e1, e2),
        property_similarity(kb, e1, e2),
        value_similarity(kb, stats, e1, e2),
    )


def top_k_neighbors(kb: KnowledgeBase, stats: CorpusStats, weights: SimilarityWeights,
                    e: str, k: int, candidates: list[str] | None = None) -> list[tuple[str, float]]:
    """The ``k`` most similar entities to ``e``, best first; ties by id.

    ``candidates`` defaults to the KB's subject entities.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    _check(kb, e)
    pool = kb.subjects() if candidates is None else candidates
    scored = [(other, similarity(kb, stats, weights, e, other)) for other in pool if other != e]
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored[:k]
