"""Ranking metrics (precision@m, NDCG@m, MAP) and set-based fact P/R/F1."""

from __future__ import annotations

import math
from typing import Collection, Iterable, Sequence


def precision_at_m(ranked: Sequence, relevant: Collection, m: int) -> float:
    if m < 1:
        raise ValueError("m must be >= 1")
    if not relevant:
        return 0.0
    return sum(1 for x in ranked[:m] if x in relevant) / m


def dcg_at_m(ranked: Sequence, relevant: Collection, m: int) -> float:
    return sum(1.0 / math.log2(r + 2) for r, x in enumerate(ranked[:m]) if x in relevant)


def ndcg_at_m(ranked: Sequence, relevant: Collection, m: int) -> float:
    """Binary-relevance NDCG with log2(rank + 1) discount."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if not relevant:
        return 0.0
    ideal = sum(1.0 / math.log2(r + 2) for r in range(min(m, len(relevant))))
    return dcg_at_m(ranked, relevant, m) / ideal


def average_precision(ranked: Sequence, relevant: Collection) -> float:
    if not relevant:
        return 0.0
    hits, total = 0, 0.0
    for r, x in enumerate(ranked, 1):
        if x in relevant:
            hits += 1
            total += hits / r
    return total / len(relevant)


def mean_average_precision(results: Iterable[tuple[Sequence, Collection]]) -> float:
    aps = [average_precision(ranked, relevant) for ranked, relevant in results]
    return sum(aps) / len(aps) if aps else 0.0


def fact_prf(predicted: Collection, gold: Collection) -> tuple[float, float, float]:
    """Set precision, recall and F1; each is 0 when its denominator is empty."""
    pred, gold = set(predicted), set(gold)
    hit = len(pred & gold)
    p = hit / len(pred) if pred else 0.0
    r = hit / len(gold) if gold else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1
