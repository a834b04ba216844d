"""In-memory knowledge base, triple file I/O and the leave-n-out sampling protocol."""

from __future__ import annotations

import json
import random
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

KINDS = ("entity", "class", "literal")

#: an entity is long-tail iff it uses at most this many distinct properties
LONG_TAIL_MAX_PROPERTIES = 5

#: property used for type declarations written by the synthetic generator and write-back
TYPE_PROPERTY = "type"


class KBParseError(ValueError):
    """Raised for malformed triple files; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True, order=True)
class Fact:
    subject: str
    property: str
    object: str
    kind: str = "literal"
    label: bool | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown object kind {self.kind!r}")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.subject, self.property, self.object)

    def to_dict(self) -> dict:
        d = {"subject": self.subject, "property": self.property,
             "object": self.object, "kind": self.kind}
        if self.label is not None:
            d["label"] = self.label
        return d


class KnowledgeBase:
    """The (E, P, T, L, F) tuple plus derived type and value indices.

    Treated as immutable once constructed; "mutating" helpers return new
    instances.
    """

    def __init__(self, facts: Iterable[Fact] = ()):
        by_key: dict[tuple[str, str, str], Fact] = {}
        for f in facts:
            old = by_key.get(f.key)
            if old is not None and old.kind != f.kind:
                raise ValueError(f"conflicting kinds for {f.key}: {old.kind} vs {f.kind}")
            by_key.setdefault(f.key, f)
        self.facts: frozenset[Fact] = frozenset(by_key.values())
        self._by_key = by_key
        self.entities: set[str] = set()
        self.properties: set[str] = set()
        self.classes: set[str] = set()
        self.literals: set[str] = set()
        for f in self.facts:
            self.entities.add(f.subject)
            self.properties.add(f.property)
            if f.kind == "entity":
                self.entities.add(f.object)
            elif f.kind == "class":
                self.classes.add(f.object)
            else:
                self.literals.add(f.object)
        self.type_index, self.value_index = build_indices(self.facts)
        self._facts_of: dict[str, list[Fact]] = defaultdict(list)
        for f in sorted(self.facts):
            self._facts_of[f.subject].append(f)

    def __len__(self) -> int:
        return len(self.facts)

    def __contains__(self, fact: Fact) -> bool:
        return fact.key in self._by_key

    def facts_of(self, entity: str) -> list[Fact]:
        """Facts with ``entity`` as subject, in sorted order."""
        return list(self._facts_of.get(entity, ()))

    def properties_of(self, entity: str) -> set[str]:
        return {f.property for f in self._facts_of.get(entity, ())}

    def values_of(self, entity: str, prop: str) -> list[str]:
        return [f.object for f in self._facts_of.get(entity, ()) if f.property == prop]

    def types_of(self, entity: str) -> set[str]:
        return set(self.type_index.get(entity, ()))

    def subjects(self) -> list[str]:
        """Entities that are the subject of at least one fact, sorted."""
        return sorted(self._facts_of)

    def members(self, class_id: str) -> list[str]:
        return sorted(e for e, ts in self.type_index.items() if class_id in ts)

    def is_long_tail(self, entity: str) -> bool:
        return len(self.properties_of(entity)) <= LONG_TAIL_MAX_PROPERTIES

    def subset(self, entities: Iterable[str]) -> "KnowledgeBase":
        keep = set(entities)
        return KnowledgeBase(f for f in self.facts if f.subject in keep)

    def with_facts(self, facts: Iterable[Fact]) -> "KnowledgeBase":
        return KnowledgeBase([*self.facts, *facts])

    def without_facts(self, facts: Iterable[Fact]) -> "KnowledgeBase":
        drop = {f.key for f in facts}
        return KnowledgeBase(f for f in self.facts if f.key not in drop)

    def stats(self) -> dict[str, int]:
        return {
            "entities": len(self.entities),
            "properties": len(self.properties),
            "classes": len(self.classes),
            "literals": len(self.literals),
            "facts": len(self.facts),
        }


def build_indices(facts: Iterable[Fact]) -> tuple[dict[str, frozenset[str]], dict[str, frozenset[str]]]:
    """Derive (type_index, value_index) from facts.

    A fact with a class object declares a type of its subject. Value keys are
    the raw object strings (ids for entities and classes, lexical forms for
    literals).
    """
    types: dict[str, set[str]] = defaultdict(set)
    values: dict[str, set[str]] = defaultdict(set)
    for f in facts:
        values[f.subject].add(f.object)
        if f.kind == "class":
            types[f.subject].add(f.object)
    return ({e: frozenset(v) for e, v in types.items()},
            {e: frozenset(v) for e, v in values.items()})


# --- serialization -------------------------------------------------------

_ESCAPES = {"\\": "\\\\", "\t": "\\t", "\n": "\\n", "\r": "\\r"}
_UNESCAPES = {"\\": "\\", "t": "\t", "n": "\n", "r": "\r"}


def escape_field(s: str) -> str:
    return "".join(_ESCAPES.get(c, c) for c in s)


def unescape_field(s: str, line: int | None = None) -> str:
    out = []
    it = iter(s)
    for c in it:
        if c != "\\":
            out.append(c)
            continue
        nxt = next(it, None)
        if nxt not in _UNESCAPES:
            raise KBParseError(f"bad escape sequence \\{nxt or ''}", line)
        out.append(_UNESCAPES[nxt])
    return "".join(out)


def _parse_tsv(lines: Iterable[str]) -> list[Fact]:
    facts = []
    for no, raw in enumerate(lines, 1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) not in (4, 5):
            raise KBParseError(f"expected 4 or 5 tab-separated columns, got {len(cols)}", no)
        s, p, o, kind = (unescape_field(c, no) for c in cols[:4])
        if kind not in KINDS:
            raise KBParseError(f"unknown object kind {kind!r}", no)
        if not s or not p:
            raise KBParseError("empty subject or property", no)
        label = None
        if len(cols) == 5 and cols[4] != "":
            if cols[4] not in ("true", "false"):
                raise KBParseError(f"bad label {cols[4]!r}", no)
            label = cols[4] == "true"
        facts.append(Fact(s, p, o, kind, label))
    return facts


def _parse_jsonl(lines: Iterable[str]) -> list[Fact]:
    facts = []
    for no, raw in enumerate(lines, 1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise KBParseError(f"invalid JSON: {exc.msg}", no) from None
        if not isinstance(rec, dict):
            raise KBParseError("record is not an object", no)
        try:
            s, p, o = rec["subject"], rec["property"], rec["object"]
        except KeyError as exc:
            raise KBParseError(f"missing field {exc.args[0]!r}", no) from None
        kind = rec.get("kind", rec.get("object_kind"))
        if kind not in KINDS:
            raise KBParseError(f"unknown object kind {kind!r}", no)
        facts.append(Fact(str(s), str(p), str(o), kind, rec.get("label")))
    return facts


def _infer_format(path: Path) -> str:
    return "json-lines" if path.suffix in (".jsonl", ".json", ".ndjson") else "tsv-triples"


def load_kb(path: str | Path, format: str | None = None) -> KnowledgeBase:
    """Read a KB from a TSV-triples or JSON-lines file."""
    path = Path(path)
    fmt = format or _infer_format(path)
    with open(path, encoding="utf-8") as fh:
        if fmt == "tsv-triples":
            facts = _parse_tsv(fh)
        elif fmt == "json-lines":
            facts = _parse_jsonl(fh)
        else:
            raise ValueError(f"unknown KB format {fmt!r}")
    return KnowledgeBase(facts)


def dump_facts(facts: Iterable[Fact], path: str | Path, format: str | None = None) -> None:
    path = Path(path)
    fmt = format or _infer_format(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for f in sorted(facts):
            if fmt == "tsv-triples":
                cols = [escape_field(c) for c in (f.subject, f.property, f.object, f.kind)]
                if f.label is not None:
                    cols.append("true" if f.label else "false")
                fh.write("\t".join(cols) + "\n")
            else:
                fh.write(json.dumps(f.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")


def save_kb(kb: KnowledgeBase, path: str | Path, format: str | None = None) -> None:
    dump_facts(kb.facts, path, format)


# --- sampling protocol ---------------------------------------------------

@dataclass
class DatasetSplit:
    class_id: str
    train: list[str]
    validation: list[str]
    test: list[str]
    # filled by apply_leave_n_out: entity -> (held-out properties, held-out facts)
    removed_ground_truth: dict[str, tuple[set[str], list[Fact]]] = field(default_factory=dict)
    kept: dict[str, list[Fact]] = field(default_factory=dict)


def sample_synthetic_split(kb: KnowledgeBase, class_id: str, n_train: int, n_val: int,
                           n_test: int, seed: int, top_fraction: float = 1.0) -> DatasetSplit:
    """Sample disjoint train/validation/test entity lists from one class.

    ``top_fraction`` < 1 first restricts the pool to the most property-rich
    members (raw distinct-property count, ties by id).
    """
    members = kb.members(class_id)
    if top_fraction < 1.0:
        ranked = sorted(members, key=lambda e: (-len(kb.properties_of(e)), e))
        members = sorted(ranked[:max(1, int(round(top_fraction * len(ranked))))])
    need = n_train + n_val + n_test
    if min(n_train, n_val, n_test) < 0:
        raise ValueError("split sizes must be non-negative")
    if len(members) < need:
        raise ValueError(f"class {class_id!r} has {len(members)} eligible entities, need {need}")
    rng = np.random.default_rng(seed)
    order = [members[i] for i in rng.permutation(len(members))[:need]]
    return DatasetSplit(class_id, order[:n_train], order[n_train:n_train + n_val],
                        order[n_train + n_val:])


def leave_n_out(kb: KnowledgeBase, entity: str, n: int = 5, seed: int = 0
                ) -> tuple[list[Fact], set[str], list[Fact]]:
    """Keep ``n`` random distinct properties of ``entity`` and hold out the rest.

    Type declarations (class-valued facts) are not part of the property pool
    and always stay in the kept set.
    Returns ``(kept_facts, removed_properties, removed_facts)``.
    """
    if entity not in kb.entities:
        raise KeyError(f"unknown entity {entity!r}")
    facts = kb.facts_of(entity)
    pool = sorted({f.property for f in facts if f.kind != "class"})
    if not pool:
        raise ValueError(f"entity {entity!r} uses no properties")
    rng = random.Random(f"{seed}:{entity}")
    kept_props = set(pool) if len(pool) <= n else set(rng.sample(pool, n))
    kept = [f for f in facts if f.kind == "class" or f.property in kept_props]
    removed = [f for f in facts if f.kind != "class" and f.property not in kept_props]
    return kept, set(pool) - kept_props, removed


def apply_leave_n_out(kb: KnowledgeBase, split: DatasetSplit, entities: Iterable[str],
                      n: int = 5, seed: int = 0) -> None:
    for e in entities:
        kept, props, removed = leave_n_out(kb, e, n, seed)
        split.kept[e] = kept
        split.removed_ground_truth[e] = (props, removed)


# --- synthetic KB generator ----------------------------------------------

def synthetic_kb(n_classes: int = 5, entities_per_class: int = 60, properties_per_class: int = 30,
                 n_subtypes: int = 3, shared_properties: int = 6, seed: int = 0,
                 value_pool: int = 8, multi_fraction: float = 0.3) -> KnowledgeBase:
    """Generate a KB whose property usage is correlated with class and subtype.

    Each class has ``properties_per_class`` candidate properties, the first
    ``shared_properties`` of which are shared by every class. Entities get a
    class and a subtype declaration; per-subtype usage probabilities mix a
    class-wide popularity profile with a subtype-specific one, so an
    entity's own neighbourhood is more informative than class popularity.
    """
    rng = np.random.default_rng(seed)
    shared = [f"p_shared_{j:02d}" for j in range(shared_properties)]
    multi = {}
    facts: list[Fact] = []
    for c in range(n_classes):
        cls = f"class_{c}"
        own = [f"p_c{c}_{j:02d}" for j in range(properties_per_class - shared_properties)]
        props = shared + own
        for p in props:
            multi.setdefault(p, bool(rng.random() < multi_fraction))
        base = rng.normal(-0.5, 1.0, size=len(props))
        sub_logits = [base + rng.normal(0.0, 2.0, size=len(props)) for _ in range(n_subtypes)]
        for i in range(entities_per_class):
            e = f"c{c}_e{i:03d}"
            sub = int(rng.integers(n_subtypes))
            facts.append(Fact(e, TYPE_PROPERTY, cls, "class"))
            facts.append(Fact(e, TYPE_PROPERTY, f"{cls}_sub{sub}", "class"))
            probs = 1.0 / (1.0 + np.exp(-sub_logits[sub]))
            used = rng.random(len(props)) < probs
            if used.sum() < 8:
                # popular entities: at least 8 properties
                used[np.argsort(-probs)[:8]] = True
            for j in np.flatnonzero(used):
                p = props[j]
                n_vals = int(rng.integers(2, 4)) if multi[p] else 1
                vals = rng.choice(value_pool, size=n_vals, replace=False)
                for v in sorted(vals):
                    facts.append(Fact(e, p, f"{p}_v{v}", "literal"))
    return KnowledgeBase(facts)
