import numpy as np
import pytest

from kgpath.metrics import macro_average, metrics_at_k

from oracles import metrics_oracle


def test_single_hit_at_rank_three():
    assert metrics_at_k([7, 8, 1, 9], {1}, k=10) == (50.0, 100.0, 100.0, 10.0)


def test_perfect_list():
    relevant = set(range(20))
    assert metrics_at_k(list(range(10)), relevant, k=10) == (100.0, 50.0, 100.0, 100.0)


def test_zero_hits_and_empty_relevant():
    assert metrics_at_k([1, 2, 3], {9}, k=10) == (0.0, 0.0, 0.0, 0.0)
    assert metrics_at_k([1, 2, 3], set(), k=10) is None


def test_only_top_k_counts():
    assert metrics_at_k([5, 6, 1], {1}, k=2) == (0.0, 0.0, 0.0, 0.0)


def test_matches_oracle_on_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n_items = int(rng.integers(5, 40))
        recs = rng.permutation(n_items)[:int(rng.integers(0, 15))].tolist()
        relevant = set(rng.choice(n_items, size=int(rng.integers(1, 6)), replace=False).tolist())
        k = int(rng.integers(1, 12))
        got = metrics_at_k(recs, relevant, k)
        assert got == metrics_oracle(recs, relevant, k)
        assert all(0.0 <= v <= 100.0 for v in got)
        assert (got[2] == 100.0) == (got[3] > 0)


def test_macro_average_skips_empty_users():
    rows = [(100.0, 50.0, 100.0, 10.0), None, (0.0, 0.0, 0.0, 0.0)]
    assert macro_average(rows) == (50.0, 25.0, 50.0, 5.0)
    assert macro_average([None]) == (0.0, 0.0, 0.0, 0.0)
