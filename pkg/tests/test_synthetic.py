import pytest

from kgpath.patterns import enumerate_paths
from kgpath.synthetic import PLANTED, SyntheticSpec, generate, write_dataset


def test_single_pattern_every_test_pair_reachable():
    data = generate(SyntheticSpec(n_users=10, n_items=20, n_related=40, planted=["brand"],
                                  noise_rate=0.0, seed=1))
    g = data.dataset.graph
    rels = tuple(g.relation_id(n) for n in PLANTED["brand"][0])
    assert data.dataset.test
    for u, i in data.dataset.test:
        assert enumerate_paths(g, u, rels, {i})
        assert i not in g.interacted_items(u)
    assert {kind for _, kind, *_ in data.usage} == {"brand"}


def test_fixed_seed_gives_identical_files(tmp_path):
    spec = SyntheticSpec(n_users=20, n_items=30, n_related=50, seed=7)
    write_dataset(generate(spec), tmp_path / "a")
    write_dataset(generate(spec), tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["entities.tsv", "relations.tsv", "test.tsv", "train.tsv", "triples.tsv", "usage.tsv"]
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_noise_rate_scales_triple_count():
    clean = generate(SyntheticSpec(noise_rate=0.0, seed=3)).dataset.graph.n_triples
    noisy = generate(SyntheticSpec(noise_rate=0.3, seed=3)).dataset.graph.n_triples
    assert noisy / clean == pytest.approx(1.3, rel=0.05)


def test_default_benchmark_shape():
    data = generate(SyntheticSpec(seed=0))
    g = data.dataset.graph
    assert len(g.users) == 200 and len(g.items) == 300
    assert len(data.spec.planted) == 3
    added = g.n_triples - data.base_triples
    assert added == round(0.1 * data.base_triples)
    train_users = {u for u, _ in data.dataset.train}
    assert all(u in train_users for u, _ in data.dataset.test)


def test_rejects_unknown_planted_pattern():
    with pytest.raises(ValueError):
        SyntheticSpec(planted=["nope"])
