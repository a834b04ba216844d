import math

import numpy as np
import pytest
from scipy import stats as sps

from kbenrich.chi2 import chi2_cdf, chi2_critical, chi2_ppf
from kbenrich.kb import Fact, KnowledgeBase
from kbenrich.sources import Claim
from kbenrich.truth import (
    SourceStats, TruthAssignment, TruthConfig, _Problem, conjugacy_check, infer_truths,
    label_facts, majority_init, negative_log_likelihood, nll_gradient, predict_cardinality,
    set_hyperparameters, source_reliability, verify,
)

from conftest import grid_objective

F1, F2, F3 = ("e", "p", "a"), ("e", "p", "b"), ("e", "p", "c")


def claim(f, s, o):
    return Claim(Fact(*f), s, o)


def stats(source, nu, tau2, claims):
    mine = sorted((c for c in claims if c.source == source), key=lambda c: c.fact.key)
    return SourceStats(source, nu, tau2, [c.fact.key for c in mine], [c.observation for c in mine])


def random_instance(rng, n_facts, n_sources, p=0.7):
    facts = [("e", "p", f"v{i}") for i in range(n_facts)]
    claims = [claim(f, f"s{j}", float(rng.uniform()))
              for f in facts for j in range(n_sources) if rng.random() < p]
    srcs = sorted({c.source for c in claims})
    st_ = {s: stats(s, float(rng.integers(1, 5)), float(np.exp(rng.uniform(np.log(0.01), 0))),
                    claims) for s in srcs}
    beta = (float(rng.uniform(1, 6)), float(rng.uniform(1, 6)))
    return facts, claims, st_, beta


class TestChi2:
    def test_table_value(self):
        assert abs(chi2_critical(0.025, 10) - 20.483) <= 0.01

    @pytest.mark.parametrize("df", range(1, 31))
    @pytest.mark.parametrize("alpha", [0.05, 0.10])
    def test_against_reference(self, df, alpha):
        assert abs(chi2_critical(alpha / 2, df) - sps.chi2.isf(alpha / 2, df)) <= 0.01
        assert abs(chi2_ppf(alpha / 2, df) - sps.chi2.ppf(alpha / 2, df)) <= 0.01

    def test_cdf_inverts(self):
        for df in (1, 2, 5, 30):
            for q in (1e-4, 0.025, 0.5, 0.975):
                assert abs(chi2_cdf(chi2_ppf(q, df), df) - q) < 1e-9

    def test_bad_args(self):
        with pytest.raises(ValueError):
            chi2_ppf(1.0, 3)
        with pytest.raises(ValueError):
            chi2_ppf(0.5, 0)


class TestMajority:
    def test_mean(self):
        cs = [claim(F1, "a", 1.0), claim(F1, "b", 1.0), claim(F1, "c", 0.0), claim(F2, "a", 0.8)]
        z = majority_init(cs).z
        assert z[F1] == pytest.approx(2 / 3) and z[F2] == pytest.approx(0.8)

    def test_random_fixture(self):
        rng = np.random.default_rng(0)
        _, cs, _, _ = random_instance(rng, 6, 5)
        z = majority_init(cs).z
        for f in z:
            obs = [c.observation for c in cs if c.fact.key == f]
            assert z[f] == pytest.approx(min(max(sum(obs) / len(obs), 1e-6), 1 - 1e-6), abs=1e-12)

    def test_unclaimed_fact(self):
        with pytest.raises(ValueError):
            majority_init([claim(F1, "a", 1.0)], facts=[F2])


class TestHyperparameters:
    def test_zero_deviation_floor(self):
        cs = [claim(F1, "s", 0.7), claim(F2, "s", 0.2)]
        st_ = set_hyperparameters(cs, {F1: 0.7, F2: 0.2}, config=TruthConfig(use_ci_estimator=False))
        assert st_["s"].tau2 == 1e-6 and st_["s"].nu == 2

    def test_sample_variance(self):
        cs = [claim(F1, "s", 0.6), claim(F2, "s", 0.3)]
        st_ = set_hyperparameters(cs, {F1: 0.5, F2: 0.6}, config=TruthConfig(use_ci_estimator=False))
        assert st_["s"].tau2 == pytest.approx(0.05, abs=1e-12)

    def test_ci_estimator(self):
        cs = [claim(F1, "s", 0.6), claim(F2, "s", 0.3)]
        st_ = set_hyperparameters(cs, {F1: 0.5, F2: 0.6}, config=TruthConfig(alpha=0.05))
        assert st_["s"].tau2 == pytest.approx(0.1 / sps.chi2.ppf(0.025, 2), rel=1e-8)
        # the CI end point inflates the estimate
        assert st_["s"].tau2 > 0.05

    def test_prior_truth_fixed_at_one(self):
        cs = [claim(F1, "s", 0.8)]
        cfg = TruthConfig(use_ci_estimator=False)
        assert set_hyperparameters(cs, {F1: 0.8}, [F1], cfg)["s"].tau2 == pytest.approx(0.04)
        cfg_off = TruthConfig(use_ci_estimator=False, use_prior_truths=False)
        assert set_hyperparameters(cs, {F1: 0.8}, [F1], cfg_off)["s"].tau2 == 1e-6

    def test_source_without_claims_dropped(self, caplog):
        st_ = set_hyperparameters([claim(F1, "s", 1.0)], {F1: 1.0}, sources=["s", "ghost"])
        assert set(st_) == {"s"}
        assert "ghost" in caplog.text


class TestObjective:
    def test_single_claim(self):
        cs = [claim(F1, "s", 1.0)]
        st_ = {"s": stats("s", 1.0, 1.0, cs)}
        v = negative_log_likelihood({F1: 1 - 1e-6}, cs, st_, (1, 1))
        assert v == pytest.approx(math.log(0.5), abs=1e-5)

    def test_prior_only(self):
        assert negative_log_likelihood({F1: 0.5}, [], {}, (5, 5)) == pytest.approx(8 * math.log(2))
        assert 8 * math.log(2) == pytest.approx(5.545, abs=1e-3)

    def test_decreases_toward_consensus(self):
        cs = [claim(F1, s, 0.9) for s in "abc"]
        st_ = {s: stats(s, 1.0, 0.1, cs) for s in "abc"}
        vals = [negative_log_likelihood({F1: z}, cs, st_, (5, 5)) for z in (0.3, 0.5, 0.7)]
        assert vals[0] > vals[1] > vals[2]

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            negative_log_likelihood({F1: 1.0}, [], {}, (5, 5))

    def test_gradient_finite_differences(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            facts, cs, st_, beta = random_instance(rng, 5, 3)
            z = {f: float(rng.uniform(0.05, 0.95)) for f in facts}
            g = nll_gradient(z, cs, st_, beta)
            h = 1e-6
            for f in facts:
                up = negative_log_likelihood({**z, f: z[f] + h}, cs, st_, beta)
                dn = negative_log_likelihood({**z, f: z[f] - h}, cs, st_, beta)
                num = (up - dn) / (2 * h)
                assert abs(num - g[f]) <= 1e-4 * max(1.0, abs(num))


class TestInference:
    def test_single_fact_flat_prior(self):
        cs = [claim(F1, "s", 0.9)]
        st_ = {"s": stats("s", 1.0, 0.01, cs)}
        res = infer_truths(cs, st_, TruthConfig(beta=(1, 1)))
        grid = np.linspace(1e-3, 1 - 1e-3, 999)
        prob = _Problem(cs, st_, (1, 1))
        best = grid[np.argmin([prob.value(np.array([z])) for z in grid])]
        assert abs(res.z[F1] - 0.9) <= 0.01 and abs(res.z[F1] - best) <= 0.01

    def test_unclaimed_prior_mode(self):
        res = infer_truths([], {}, TruthConfig(), facts=[F1])
        assert res.z[F1] == pytest.approx(0.5, abs=1e-9) and res.converged

    def test_two_by_two_grid(self):
        cs = [claim(F1, "a", 0.9), claim(F1, "b", 0.2), claim(F2, "a", 0.1), claim(F2, "b", 0.8)]
        st_ = {"a": stats("a", 2.0, 0.02, cs), "b": stats("b", 2.0, 0.3, cs)}
        res = infer_truths(cs, st_, TruthConfig(beta=(2, 2)))
        grid = np.linspace(1e-3, 1 - 1e-3, 999)
        vals = grid_objective(_Problem(cs, st_, (2, 2)), grid)
        i, j = np.unravel_index(np.argmin(vals), vals.shape)
        assert abs(res.z[F1] - grid[i]) <= 0.01 and abs(res.z[F2] - grid[j]) <= 0.01

    def test_monotone_history(self):
        rng = np.random.default_rng(3)
        facts, cs, st_, beta = random_instance(rng, 8, 4)
        res = infer_truths(cs, st_, TruthConfig(beta=beta))
        assert all(b <= a + 1e-12 for a, b in zip(res.history, res.history[1:]))
        assert all(1e-6 <= z <= 1 - 1e-6 for z in res.z.values())

    def test_non_convergence_flagged(self):
        rng = np.random.default_rng(4)
        facts, cs, st_, beta = random_instance(rng, 8, 4)
        res = infer_truths(cs, st_, TruthConfig(beta=beta, max_iter=1, tol=1e-15))
        assert not res.converged


class TestConjugacy:
    def test_random_tiny(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            facts, cs, st_, beta = random_instance(rng, 4, 3)
            z = {f: float(rng.uniform(0.05, 0.95)) for f in facts}
            assert conjugacy_check(z, cs, st_, beta) < 1e-4

    def test_zero_claims(self):
        assert conjugacy_check({F1: 0.3}, [], {"s": SourceStats("s", 1.0, 0.1, [], [])}) == 0.0

    def test_relabeling_invariant(self):
        rng = np.random.default_rng(12)
        facts, cs, st_, beta = random_instance(rng, 3, 3, p=1.0)
        z = {f: 0.4 for f in facts}
        rename = {"s0": "s2", "s1": "s0", "s2": "s1"}
        cs2 = [Claim(c.fact, rename[c.source], c.observation) for c in cs]
        st2 = {rename[s]: SourceStats(rename[s], v.nu, v.tau2, v.facts, v.observations)
               for s, v in st_.items()}
        assert conjugacy_check(z, cs2, st2, beta) == pytest.approx(conjugacy_check(z, cs, st_, beta),
                                                                   abs=1e-12)


class TestCardinalityAndLabels:
    def kb(self, counts):
        return KnowledgeBase([Fact(f"u{i}", "p", f"x{k}") for i, n in enumerate(counts)
                              for k in range(n)])

    def test_unanimous(self):
        assert predict_cardinality(self.kb([1] * 5), "p", [f"u{i}" for i in range(5)]) == "single"
        assert predict_cardinality(self.kb([3] * 5), "p", [f"u{i}" for i in range(5)]) == "multi"

    def test_threshold(self):
        kb = self.kb([2] + [1] * 19)
        assert predict_cardinality(kb, "p", [f"u{i}" for i in range(20)]) == "single"
        kb = self.kb([2, 2] + [1] * 18)
        assert predict_cardinality(kb, "p", [f"u{i}" for i in range(20)]) == "multi"

    def test_unused_defaults_multi(self):
        assert predict_cardinality(self.kb([1]), "q", ["u0"]) == "multi"

    def test_multi(self):
        a = TruthAssignment({F1: 0.6, F2: 0.4})
        assert label_facts(a, {}, 0.5) == {F1: True, F2: False}

    def test_single_argmax(self):
        a = TruthAssignment({F1: 0.6, F2: 0.7})
        assert label_facts(a, {("e", "p"): "single"}) == {F1: False, F2: True}

    def test_single_gate(self):
        a = TruthAssignment({F1: 0.3, F2: 0.2})
        assert label_facts(a, {("e", "p"): "single"}) == {F1: False, F2: False}

    def test_single_tie(self):
        a = TruthAssignment({F2: 0.8, F1: 0.8, F3: 0.1})
        assert label_facts(a, {("e", "p"): "single"}) == {F1: True, F2: False, F3: False}


class TestReliability:
    def test_substitution(self):
        st_ = {"s": SourceStats("s", 2.0, 0.1, [F1, F2], [0.5, 0.3])}
        r = source_reliability(st_, TruthAssignment({F1: 0.5, F2: 0.3}))
        assert r["s"] == pytest.approx(20.0, abs=1e-12)

    def test_deviation_ordering(self):
        st_ = {"a": SourceStats("a", 2.0, 0.1, [F1, F2], [0.9, 0.1]),
               "b": SourceStats("b", 2.0, 0.1, [F1, F2], [0.6, 0.4])}
        r = source_reliability(st_, TruthAssignment({F1: 1.0, F2: 0.0}))
        assert r["a"] > r["b"]

    def test_homogeneity(self):
        a = SourceStats("a", 2.0, 0.1, [F1], [0.8])
        z = TruthAssignment({F1: 0.8 + 0.1})
        r1 = source_reliability({"a": a}, z)["a"]
        b = SourceStats("a", 2.0, 0.2, [F1], [0.9 - 0.1 * math.sqrt(2)])
        r2 = source_reliability({"a": b}, z)["a"]
        assert r2 == pytest.approx(r1 / 2, rel=1e-12)


def test_verify_end_to_end():
    rng = np.random.default_rng(0)
    truth = {("e", "p", f"v{i:02d}"): bool(i % 3) for i in range(20)}
    cs = []
    for s, sd in (("good1", 0.05), ("good2", 0.05), ("good3", 0.1), ("noisy", 0.5)):
        for f, t in truth.items():
            cs.append(claim(f, s, float(np.clip(t + rng.normal(0, sd), 0, 1))))
    result, st_ = verify(cs)
    assert result.labels == truth
    assert st_["good1"].reliability > st_["noisy"].reliability
