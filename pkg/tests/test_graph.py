import numpy as np
import pytest

from kgpath.graph import (ITEM, USER, GraphError, LoadError, ReasoningPath, TripleTypeError,
                          amazon_schema, load_dataset, load_graph, save_graph)
from kgpath.synthetic import SyntheticSpec, generate, write_dataset

from conftest import tiny_schema


def test_inverse_edge_symmetry(chain_graph):
    g = chain_graph
    u1, i1 = g.entity_id("u1"), g.entity_id("i1")
    inv = g.inverse(g.relation_id("purchase"))
    assert g.neighbors(i1, inv) == [u1]
    assert g.relations[inv].name == "purchase_inv"
    assert g.relations[inv].head_type == ITEM and g.relations[inv].tail_type == USER


def test_inverse_is_involution():
    g = amazon_schema()
    for r in g.relations:
        assert g.inverse(g.inverse(r.id)) == r.id
        inv = g.relations[r.inverse_of]
        assert (inv.head_type, inv.tail_type) == (r.tail_type, r.head_type)


def test_add_triple_idempotent(chain_graph):
    g = chain_graph
    u1, i1 = g.entity_id("u1"), g.entity_id("i1")
    before = g.n_directed_edges
    assert g.add_triple(u1, g.relation_id("purchase"), i1) is False
    assert g.n_directed_edges == before
    assert g.neighbors(u1, g.relation_id("purchase")) == [i1]


def test_add_triple_type_mismatch(chain_graph):
    g = chain_graph
    with pytest.raises(TripleTypeError) as err:
        g.add_triple(g.entity_id("i1"), g.relation_id("purchase"), g.entity_id("u1"))
    assert err.value.triple == ("i1", "purchase", "u1")


def test_neighbors_examples(chain_graph):
    g = chain_graph
    u1 = g.entity_id("u1")
    assert g.neighbors(u1, g.relation_id("purchase")) == [g.entity_id("i1")]
    assert g.neighbors(u1, g.relation_id("mention")) == []


def test_neighbors_sorted_against_insertion():
    g = tiny_schema()
    u = g.add_entity("u", USER)
    items = [g.add_entity(f"i{k}", ITEM) for k in range(6)]
    inserted = [items[4], items[1], items[5]]
    for i in inserted:
        g.add_triple(u, 0, i)
    assert g.neighbors(u, 0) == sorted(inserted)
    assert g.neighbors(u, 0) == g.neighbors(u, 0)


def test_inverse_symmetry_property():
    data = generate(SyntheticSpec(n_users=60, n_items=80, seed=3))
    g = data.dataset.graph
    triples = list(g.triples(forward_only=False))
    rng = np.random.default_rng(0)
    for k in rng.integers(len(triples), size=10_000):
        h, r, t = triples[k]
        assert g.has_triple(t, g.inverse(r), h)
        assert g.entity_type(h) == g.relations[r].head_type
        assert g.entity_type(t) == g.relations[r].tail_type


def test_path_validator(chain_graph):
    g = chain_graph
    u1, i1 = g.entity_id("u1"), g.entity_id("i1")
    good = ReasoningPath((u1, i1), (g.relation_id("purchase"),))
    assert g.is_valid_path(good)
    bad = ReasoningPath((u1, g.entity_id("w1")), (g.relation_id("mention"),))
    assert not g.is_valid_path(bad, require_item_end=False)
    with pytest.raises(GraphError):
        g.validate_path(ReasoningPath((i1, u1), (g.inverse(0),)), require_item_end=False)


def _write(path, lines):
    path.write_text("".join(line + "\n" for line in lines))


def test_load_small_files(tmp_path):
    _write(tmp_path / "e.tsv", ["u1\tuser", "i1\titem"])
    _write(tmp_path / "r.tsv", ["0\tpurchase\tuser\titem", "1\tviewed\tuser\titem\tviewed_by",
                                "2\trated\tuser\titem"])
    _write(tmp_path / "t.tsv", ["u1\t0\ti1", "u1\t1\ti1", "u1\t2\ti1"])
    g = load_graph(tmp_path / "e.tsv", tmp_path / "r.tsv", tmp_path / "t.tsv",
                   interaction_relation="purchase")
    assert g.n_entities == 2
    assert g.n_directed_edges == 6
    assert g.relation("viewed_by").inverse_of == g.relation_id("viewed")
    assert g.stats()["triples"] == 6


def test_load_dangling_entity(tmp_path):
    _write(tmp_path / "e.tsv", ["u1\tuser", "i1\titem"])
    _write(tmp_path / "r.tsv", ["0\tpurchase\tuser\titem"])
    _write(tmp_path / "t.tsv", ["u1\t0\ti1", "u1\t0\ti9"])
    with pytest.raises(LoadError, match="i9"):
        load_graph(tmp_path / "e.tsv", tmp_path / "r.tsv", tmp_path / "t.tsv")


def test_load_malformed_line_reports_line_number(tmp_path):
    _write(tmp_path / "e.tsv", ["u1\tuser", "i1 item"])
    _write(tmp_path / "r.tsv", ["0\tpurchase\tuser\titem"])
    _write(tmp_path / "t.tsv", [])
    with pytest.raises(LoadError, match=r"e.tsv:2"):
        load_graph(tmp_path / "e.tsv", tmp_path / "r.tsv", tmp_path / "t.tsv")


def test_generator_roundtrip(tmp_path):
    data = generate(SyntheticSpec(n_users=30, n_items=40, seed=5))
    write_dataset(data, tmp_path)
    loaded = load_dataset(tmp_path)
    g0, g1 = data.dataset.graph, loaded.graph
    assert g1.adjacency_snapshot() == g0.adjacency_snapshot()
    assert g1.fingerprint() == g0.fingerprint()
    assert loaded.train == data.dataset.train
    assert loaded.test == data.dataset.test


def test_save_load_graph_roundtrip(tmp_path):
    g = amazon_schema()
    u = g.add_entity("u", USER)
    i = g.add_entity("i", ITEM)
    g.add_triple(u, g.relation_id("purchase"), i)
    save_graph(g, tmp_path)
    g2 = load_graph(tmp_path / "entities.tsv", tmp_path / "relations.tsv", tmp_path / "triples.tsv")
    assert g2.adjacency_snapshot() == g.adjacency_snapshot()
    assert g2.interaction_relation == g.relation_id("purchase")
