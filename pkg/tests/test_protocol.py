from collections import Counter

import pytest

from kbenrich.gnn import GnnConfig
from kbenrich.kb import Fact, KnowledgeBase, synthetic_kb
from kbenrich.protocol import (
    FACT_METRICS, RANK_METRICS, ProtocolConfig, RankingResult, popularity_baseline,
    ranking_metrics, report_json, run_synthetic_protocol, write_report,
)


def fifteen():
    facts = []
    for i in range(15):
        e = f"e{i:02d}"
        facts.append(Fact(e, "type", "C", "class"))
        facts.append(Fact(e, "all", "x"))
        if i % 2 == 0:
            facts.append(Fact(e, "even", "x"))
        if i % 3 == 0:
            facts.append(Fact(e, "third", "x"))
        if i < 2:
            facts += [Fact(e, "rare", "x"), Fact(e, "also_rare", "y")]
    facts.append(Fact("other", "type", "D", "class"))
    facts.append(Fact("other", "zzz", "x"))
    return KnowledgeBase(facts)


class TestPopularity:
    def test_counting_oracle(self):
        kb = fifteen()
        counts = Counter()
        for e in kb.members("C"):
            counts.update({f.property for f in kb.facts if f.subject == e and f.property != "type"})
        want = sorted(counts, key=lambda p: (-counts[p], p))
        assert popularity_baseline(kb, "C", "e00", m=None) == want
        assert want[0] == "all"
        assert want[-2:] == ["also_rare", "rare"]

    def test_entity_independent(self):
        kb = fifteen()
        assert popularity_baseline(kb, "C", "e00") == popularity_baseline(kb, "C", "e07")

    def test_empty_class(self):
        with pytest.raises(ValueError):
            popularity_baseline(fifteen(), "Nope", "e00")


def test_relevant_restricted_to_universe():
    r = RankingResult("e", ["a", "b"], {"a", "z"})
    assert r.relevant == {"a"}


def test_ranking_metrics_keys_and_range():
    res = [RankingResult("e", list("abcdefghij"), {"a", "j"}), RankingResult("f", list("xyz"), {"z"})]
    m = ranking_metrics(res)
    assert list(m) == list(RANK_METRICS)
    assert all(0 <= v <= 1 for v in m.values())


@pytest.fixture(scope="module")
def small_run():
    kb = synthetic_kb(n_classes=2, entities_per_class=24, properties_per_class=14, seed=2)
    cfg = ProtocolConfig(n_train=14, n_val=3, n_test=5, seed=5,
                         gnn=GnnConfig(d1=8, d2=8, k=5, epochs=10, init_std=0.1), select_every=5)
    return kb, cfg, run_synthetic_protocol(kb, ["class_0", "class_1"], cfg)


class TestProtocol:
    def test_shape(self, small_run):
        _, _, rep = small_run
        assert rep["schema"] == "kbenrich-report" and rep["version"] == 1
        rows = rep["ranking"]["rows"]
        assert {(r["class"], r["method"]) for r in rows} == {
            (c, m) for c in ("class_0", "class_1") for m in ("gnn", "gnn-uniform", "popularity")}
        assert {r["method"] for r in rep["ranking"]["average"]} == {"gnn", "gnn-uniform", "popularity"}
        assert {r["method"] for r in rep["verification"]["average"]} == {
            "extraction", "majority", "verifier"}
        for part, keys in (("ranking", RANK_METRICS), ("verification", FACT_METRICS)):
            for r in rep[part]["rows"] + rep[part]["average"]:
                assert all(0 <= r[k] <= 1 for k in keys)

    def test_average_is_unweighted_mean(self, small_run):
        _, _, rep = small_run
        gnn = [r["map"] for r in rep["ranking"]["rows"] if r["method"] == "gnn"]
        avg = next(r for r in rep["ranking"]["average"] if r["method"] == "gnn")
        assert avg["map"] == pytest.approx(sum(gnn) / 2, abs=1e-6)

    def test_extraction_recall_is_one(self, small_run):
        _, _, rep = small_run
        for r in rep["verification"]["rows"]:
            if r["method"] == "extraction":
                assert r["recall"] == 1.0

    def test_deterministic(self, small_run):
        kb, cfg, rep = small_run
        assert report_json(run_synthetic_protocol(kb, ["class_0", "class_1"], cfg)) == report_json(rep)

    def test_error_names_class(self, small_run):
        kb, cfg, _ = small_run
        with pytest.raises(ValueError, match="class_9"):
            run_synthetic_protocol(kb, ["class_9"], cfg)

    def test_write_report(self, small_run, tmp_path):
        _, _, rep = small_run
        paths = write_report(rep, tmp_path / "report.json")
        names = {p.name for p in paths}
        assert {"report.json", "report_ranking.tsv", "report_verification.tsv"} <= names
        assert any(n.endswith(".png") for n in names)
        tsv = (tmp_path / "report_ranking.tsv").read_text().splitlines()
        assert tsv[0].split("\t") == ["class", "method", *RANK_METRICS]
        assert len(tsv) == 1 + 6 + 3
