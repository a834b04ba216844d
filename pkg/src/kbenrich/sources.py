"""Claims, sources, the extractor seam and a seeded long-tail claim simulator."""

from __future__ import annotations

import abc
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .kb import Fact

SOURCE_TYPES = ("vertical", "text", "structured")


@dataclass(frozen=True)
class Source:
    id: str
    true_error_variance: float
    claim_count: int = 0

    def __post_init__(self):
        if not self.true_error_variance > 0:
            raise ValueError("source error variance must be positive")


@dataclass(frozen=True)
class Claim:
    fact: Fact
    source: str
    observation: float

    def to_dict(self) -> dict:
        return {"entity": self.fact.subject, "property": self.fact.property,
                "value": self.fact.object, "kind": self.fact.kind,
                "source": self.source, "observation": self.observation}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Claim":
        o = float(d["observation"])
        if not 0.0 <= o <= 1.0:
            raise ValueError(f"observation {o} outside [0, 1]")
        return cls(_fact(d), str(d["source"]), o)


def _fact(d: Mapping) -> Fact:
    return Fact(str(d["entity"]), str(d["property"]), str(d["value"]), d.get("kind", "literal"))


def _fact_dict(f: Fact) -> dict:
    return {"entity": f.subject, "property": f.property, "value": f.object, "kind": f.kind}


class ExtractorContract(abc.ABC):
    """Where real value extractors plug in: one call per (entity, property)."""

    source_type: str = "structured"

    @abc.abstractmethod
    def extract(self, entity: str, prop: str) -> list[Claim]:
        """Claims about values of ``prop`` for ``entity``; observations in [0, 1]."""


class ClaimPoolExtractor(ExtractorContract):
    """Serves claims from a fixed pool, e.g. a simulated world."""

    def __init__(self, claims: Iterable[Claim], source_type: str = "structured"):
        if source_type not in SOURCE_TYPES:
            raise ValueError(f"unknown source type {source_type!r}")
        self.source_type = source_type
        self._index: dict[tuple[str, str], list[Claim]] = defaultdict(list)
        for c in claims:
            self._index[(c.fact.subject, c.fact.property)].append(c)

    def extract(self, entity: str, prop: str) -> list[Claim]:
        return list(self._index.get((entity, prop), ()))


def merge_claims(*claim_lists: Iterable[Claim]) -> list[Claim]:
    """One claim per (fact, source), keeping the highest observation."""
    best: dict[tuple, Claim] = {}
    for claims in claim_lists:
        for c in claims:
            key = (c.fact.key, c.source)
            old = best.get(key)
            if old is None or c.observation > old.observation:
                best[key] = c
    return [best[k] for k in sorted(best)]


# --- world simulation ------------------------------------------------------

@dataclass
class World:
    facts: list[Fact]
    truths: dict[tuple[str, str, str], bool]
    sources: list[Source]
    claims: list[Claim]
    prior_truths: list[Fact] = field(default_factory=list)

    def gold(self, exclude_priors: bool = True) -> set[tuple[str, str, str]]:
        skip = {f.key for f in self.prior_truths} if exclude_priors else set()
        return {k for k, t in self.truths.items() if t and k not in skip}

    def save(self, directory: str | Path) -> None:
        """Write claims, priors, and (separately, hidden from inference) truths and sources."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        _write_jsonl(d / "claims.jsonl", (c.to_dict() for c in self.claims))
        _write_jsonl(d / "priors.jsonl", (_fact_dict(f) for f in sorted(self.prior_truths)))
        _write_jsonl(d / "truths.jsonl",
                     ({**_fact_dict(f), "truth": self.truths[f.key]} for f in self.facts))
        _write_jsonl(d / "sources.jsonl",
                     ({"source": s.id, "variance": s.true_error_variance,
                       "claims": s.claim_count} for s in self.sources))

    @classmethod
    def load(cls, directory: str | Path) -> "World":
        d = Path(directory)
        claims = load_claims(d / "claims.jsonl")
        priors = load_facts_jsonl(d / "priors.jsonl") if (d / "priors.jsonl").exists() else []
        facts, truths = [], {}
        if (d / "truths.jsonl").exists():
            for rec in _read_jsonl(d / "truths.jsonl"):
                f = _fact(rec)
                facts.append(f)
                truths[f.key] = bool(rec["truth"])
        else:
            facts = sorted({c.fact for c in claims})
        sources = []
        if (d / "sources.jsonl").exists():
            sources = [Source(r["source"], r["variance"], r["claims"])
                       for r in _read_jsonl(d / "sources.jsonl")]
        return cls(facts, truths, sources, claims, priors)


def _write_jsonl(path: Path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n")


def _read_jsonl(path: Path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{no}: {exc.msg}") from None
    return out


def load_claims(path: str | Path) -> list[Claim]:
    return [Claim.from_dict(r) for r in _read_jsonl(Path(path))]


def save_claims(claims: Iterable[Claim], path: str | Path) -> None:
    _write_jsonl(Path(path), (c.to_dict() for c in claims))


def load_facts_jsonl(path: str | Path) -> list[Fact]:
    return [_fact(r) for r in _read_jsonl(Path(path))]


def zeta_counts(n: int, exponent: float, cap: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws from a zeta(exponent) law truncated to 1..cap."""
    ks = np.arange(1, cap + 1, dtype=np.float64)
    p = ks ** -exponent
    return rng.choice(np.arange(1, cap + 1), size=n, p=p / p.sum())


def generate_world(n_facts: int = 200, n_sources: int = 50, powerlaw_exponent: float = 2.0,
                   variance_range: tuple[float, float] = (0.01, 0.25), truth_prior: float = 0.5,
                   seed: int = 0, *, facts: list[Fact] | None = None,
                   truths: Mapping[tuple[str, str, str], bool] | None = None,
                   prior_facts: list[Fact] | None = None, prior_fraction: float = 0.1,
                   min_claims_per_fact: int = 2, group_size: int = 4) -> World:
    """Simulate sources with power-law claim counts observing planted truths.

    Each source s draws an error variance uniformly from ``variance_range``
    and a claim count from a truncated zeta law; it claims that many distinct
    facts chosen uniformly. Facts left with fewer than
    ``min_claims_per_fact`` claims are topped up by sources picked in
    proportion to their size. Observations are ``clip(z* + N(0, var), 0, 1)``.

    Without ``facts`` a synthetic fact set is built, ``group_size`` candidate
    values per (entity, property), each true with probability ``truth_prior``,
    and ``prior_fraction`` of the true ones are marked as prior truths. With
    ``facts``, ``truths`` gives their planted labels and ``prior_facts``
    (known-true facts of popular entities) join the world as prior truths.
    """
    if not powerlaw_exponent > 1.0:
        raise ValueError("power-law exponent must be > 1")
    lo, hi = variance_range
    if not (0.0 < lo <= hi <= 1.0):
        raise ValueError(f"variance range must lie in (0, 1], got {variance_range}")
    if n_sources < 1:
        raise ValueError("need at least one source")
    rng = np.random.default_rng(seed)

    if facts is None:
        if n_facts < 1:
            raise ValueError("need at least one fact")
        facts = [Fact(f"w_e{i // group_size // 3:04d}", f"w_p{(i // group_size) % 3}",
                      f"w_v{i:05d}", "literal") for i in range(n_facts)]
        planted = rng.random(n_facts) < truth_prior
        truths = {f.key: bool(t) for f, t in zip(facts, planted)}
        true_facts = [f for f in facts if truths[f.key]]
        n_prior = int(round(prior_fraction * len(true_facts)))
        picks = rng.choice(len(true_facts), size=n_prior, replace=False) if n_prior else []
        priors = sorted(true_facts[i] for i in picks)
    else:
        truths = dict(truths or {f.key: True for f in facts})
        priors = sorted(prior_facts or [])
        for f in priors:
            truths[f.key] = True
        facts = sorted({*facts, *priors})
    facts = sorted(facts)
    n_total = len(facts)

    variances = rng.uniform(lo, hi, size=n_sources)
    counts = zeta_counts(n_sources, powerlaw_exponent, n_total, rng)
    claimed: list[set[int]] = [set(rng.choice(n_total, size=c, replace=False).tolist())
                               for c in counts]

    need = min(min_claims_per_fact, n_sources)
    per_fact = np.zeros(n_total, dtype=np.int64)
    for s in claimed:
        for f in s:
            per_fact[f] += 1
    for f in range(n_total):
        while per_fact[f] < need:
            # +1 keeps empty sources eligible
            w = np.array([0.0 if f in s else len(s) + 1.0 for s in claimed])
            s = int(rng.choice(n_sources, p=w / w.sum()))
            claimed[s].add(f)
            per_fact[f] += 1

    width = len(str(n_sources - 1))
    # claim_count keeps the power-law target; top-up claims come on top of it
    sources = [Source(f"src{s:0{width}d}", float(variances[s]), int(counts[s]))
               for s in range(n_sources)]
    claims = []
    for s, fs in enumerate(claimed):
        sd = float(np.sqrt(variances[s]))
        for fi in sorted(fs):
            f = facts[fi]
            z = 1.0 if truths[f.key] else 0.0
            o = float(np.clip(z + rng.normal(0.0, sd), 0.0, 1.0))
            claims.append(Claim(f, sources[s].id, o))
    claims.sort(key=lambda c: (c.fact.key, c.source))
    return World(facts, {f.key: truths[f.key] for f in facts}, sources, claims, priors)
