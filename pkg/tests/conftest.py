import numpy as np
import pytest

from kgpath.graph import ITEM, USER, KnowledgeGraph
from kgpath.reasoner import Hyperparams, ReasonerModel


def tiny_schema():
    g = KnowledgeGraph()
    g.add_relation("purchase", USER, ITEM)
    g.add_relation("mention", USER, "word")
    g.add_relation("described_as", ITEM, "word")
    g.set_interaction_relation("purchase")
    return g


@pytest.fixture
def chain_graph():
    """u1 -purchase-> i1, plus an idle word entity."""
    g = tiny_schema()
    u1 = g.add_entity("u1", USER)
    i1 = g.add_entity("i1", ITEM)
    g.add_entity("w1", "word")
    g.add_triple(u1, g.relation_id("purchase"), i1)
    return g


def random_model(graph, patterns, dim=4, hidden=8, seed=0, scale=1.0):
    from kgpath.reasoner import init_model
    model = init_model(graph, patterns, Hyperparams(dim=dim, hidden=hidden), seed)
    rng = np.random.default_rng(seed + 100)
    model.entity_embeddings = rng.normal(0, scale, size=model.entity_embeddings.shape)
    return model


def random_tiny_kg(rng, n_users=3, n_items=8, n_words=5, p_purchase=0.35, p_mention=0.35, p_desc=0.3):
    g = tiny_schema()
    users = [g.add_entity(f"u{k}", USER) for k in range(n_users)]
    items = [g.add_entity(f"i{k}", ITEM) for k in range(n_items)]
    words = [g.add_entity(f"w{k}", "word") for k in range(n_words)]
    pur, men, desc = (g.relation_id(n) for n in ("purchase", "mention", "described_as"))
    for u in users:
        for i in items:
            if rng.random() < p_purchase:
                g.add_triple(u, pur, i)
        for w in words:
            if rng.random() < p_mention:
                g.add_triple(u, men, w)
    for i in items:
        for w in words:
            if rng.random() < p_desc:
                g.add_triple(i, desc, w)
    return g


# acceptance criteria outcomes, echoed in the terminal summary
CRITERIA: list = []


def record_criterion(number: int, name: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {name} -- {detail}"
    CRITERIA.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(CRITERIA):
            terminalreporter.write_line(line)
