import pytest

from kbenrich.gnn import GnnConfig, train
from kbenrich.graph import build_graph
from kbenrich.kb import Fact, KnowledgeBase, synthetic_kb
from kbenrich.pipeline import EnrichedFact, EnrichmentResult, enrich, write_back
from kbenrich.sources import ClaimPoolExtractor, generate_world


@pytest.fixture(scope="module")
def trained():
    kb = synthetic_kb(n_classes=1, entities_per_class=20, properties_per_class=14, seed=4)
    graph = build_graph(kb, k=4)
    model = train(graph, GnnConfig(d1=8, d2=8, k=4, epochs=15, init_std=0.1, seed=1))
    return kb, graph, model


def test_no_claims_is_empty_not_error(trained):
    kb, graph, model = trained
    res = enrich("c0_e000", graph, model, [ClaimPoolExtractor([])], m=10, kb=kb)
    # already-known properties are never predicted, so fewer than m may come back
    known = {f.property for f in kb.facts if f.subject == "c0_e000"}
    assert res.facts == [] and 0 < len(res.predicted) <= 10
    assert not known & {p for p, _ in res.predicted}
    assert set(res.diagnostics.values()) == {"no claims"}


def test_containment(trained):
    kb, graph, model = trained
    entity = "c0_e003"
    predicted = [p for p, _ in enrich(entity, graph, model, [ClaimPoolExtractor([])], 10).predicted]
    # planted truths for 5 of the 10 predicted properties, plus noise elsewhere
    facts, truths = [], {}
    for p in predicted[:5]:
        for v in range(3):
            f = Fact(entity, p, f"{p}_new{v}")
            facts.append(f)
            truths[f.key] = v == 0
    other = Fact("c0_e004", predicted[0], "elsewhere")
    facts.append(other)
    truths[other.key] = True
    world = generate_world(n_sources=20, seed=3, facts=facts, truths=truths,
                           variance_range=(0.01, 0.05))
    res = enrich(entity, graph, model, [ClaimPoolExtractor(world.claims)], 10, kb=kb,
                 context_claims=world.claims)
    claimed = {c.fact.key for c in world.claims}
    assert res.facts
    assert all(f.fact.property in predicted and f.fact.subject == entity for f in res.facts)
    assert {f.fact.key for f in res.verified} <= claimed
    assert all(f.sources for f in res.facts)
    assert {f.fact.key for f in res.verified} == {k for k, t in truths.items() if t and k[0] == entity}


def test_deterministic_output(trained):
    kb, graph, model = trained
    world = generate_world(n_sources=10, seed=1,
                           facts=[Fact("c0_e001", p, "v") for p in graph.property_nodes])
    runs = [enrich("c0_e001", graph, model, [ClaimPoolExtractor(world.claims)], 10, kb=kb,
                   context_claims=world.claims).to_json() for _ in range(2)]
    assert runs[0] == runs[1]


def _enrichment(*facts):
    return EnrichmentResult("e", [], [EnrichedFact(f, 0.9, True, ("s1",)) for f in facts])


@pytest.fixture
def base_kb():
    return KnowledgeBase([Fact("e", "type", "Person", "class"), Fact("e", "name", "Eve"),
                          Fact("bob", "name", "Bob Smith"), Fact("bob", "type", "Person", "class")])


class TestWriteBack:
    def test_idempotent(self, base_kb):
        enr = _enrichment(Fact("e", "born", "1970"), Fact("e", "spouse", "Bob Smith", "entity"))
        once, audit1 = write_back(base_kb, enr)
        twice, audit2 = write_back(once, enr)
        assert twice.facts == once.facts
        assert all(a["action"] == "skipped" for a in audit2)
        assert all(a["action"] == "added" for a in audit1)

    def test_existing_fact_skipped(self, base_kb):
        kb, audit = write_back(base_kb, _enrichment(Fact("e", "name", "Eve")))
        assert kb.facts == base_kb.facts and audit[0]["action"] == "skipped"

    def test_exact_id_match(self, base_kb):
        kb, audit = write_back(base_kb, _enrichment(Fact("e", "knows", "bob", "entity")))
        assert Fact("e", "knows", "bob", "entity") in kb
        assert kb.entities == base_kb.entities and "created" not in audit[0]

    def test_name_match(self, base_kb):
        kb, _ = write_back(base_kb, _enrichment(Fact("e", "spouse", "Bob Smith", "entity")))
        assert Fact("e", "spouse", "bob", "entity") in kb

    def test_new_entity_with_range(self, base_kb):
        kb, audit = write_back(base_kb, _enrichment(Fact("e", "employer", "Acme", "entity")),
                               ranges={"employer": "Organization"})
        assert "Organization" in kb.type_index["Acme"]
        assert audit[0]["created"] == {"entity": "Acme", "type": "Organization"}

    def test_new_entity_untyped_flagged(self, base_kb):
        kb, audit = write_back(base_kb, _enrichment(Fact("e", "pet", "Rex", "entity")))
        assert "Rex" in kb.entities and not kb.types_of("Rex")
        assert audit[0]["flag"] == "untyped"

    def test_audit_reachable(self, base_kb):
        enr = _enrichment(Fact("e", "born", "1970"), Fact("e", "pet", "Rex", "entity"),
                          Fact("e", "name", "Eve"))
        kb, audit = write_back(base_kb, enr)
        for a in audit:
            assert Fact(*a["fact"], "entity" if a["kind"] == "entity" else "literal") in kb
            assert a["z"] == 0.9 and a["sources"] == ["s1"]

    def test_unverified_not_written(self, base_kb):
        enr = EnrichmentResult("e", [], [EnrichedFact(Fact("e", "born", "1"), 0.2, False, ())])
        kb, audit = write_back(base_kb, enr)
        assert kb.facts == base_kb.facts and audit == []
