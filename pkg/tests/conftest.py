import numpy as np
import pytest

from kbenrich.kb import Fact, KnowledgeBase


def random_kb(seed, n_entities=20, n_props=8, n_types=4, n_values=6):
    rng = np.random.default_rng(seed)
    facts = []
    for i in range(n_entities):
        e = f"e{i:02d}"
        for t in range(n_types):
            if rng.random() < 0.4:
                facts.append(Fact(e, "type", f"T{t}", "class"))
        for p in range(n_props):
            if rng.random() < 0.4:
                facts.append(Fact(e, f"p{p}", f"v{int(rng.integers(n_values))}", "literal"))
        if not any(f.subject == e for f in facts):
            facts.append(Fact(e, "p0", "v0", "literal"))
    return KnowledgeBase(facts)


@pytest.fixture
def kb20():
    return random_kb(11)


def grid_objective(prob, grid):
    """Objective of a truth problem on the full product grid (one axis per fact)."""
    n = len(prob.facts)
    Z = np.stack(np.meshgrid(*([grid] * n), indexing="ij"), axis=-1).reshape(-1, n)
    val = np.sum((1 - prob.b1) * np.log(Z) + (1 - prob.b0) * np.log1p(-Z), axis=1)
    S = len(prob.sources)
    sq = np.zeros((len(Z), S))
    for f, s, o in zip(prob.fi, prob.si, prob.obs):
        sq[:, s] += (Z[:, f] - o) ** 2
    if S:
        val += np.sum((prob.nu + prob.n_s) / 2 * np.log((prob.nu * prob.tau2 + sq) / 2), axis=1)
    return val.reshape((len(grid),) * n)


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
