"""Top-k ranking metrics with binary relevance, reported as percentages."""
from __future__ import annotations

import math
from typing import Collection, Sequence


def metrics_at_k(recommended: Sequence[int], relevant: Collection[int], k: int = 10):
    """Return ``(ndcg, recall, hit_rate, precision)`` in percent.

    Returns None when ``relevant`` is empty; such users are left out of
    macro averages.
    """
    if not relevant:
        return None
    relevant = set(relevant)
    top = list(recommended)[:k]
    dcg = 0.0
    hits = 0
    for rank, item in enumerate(top, 1):
        if item in relevant:
            hits += 1
            dcg += 1.0 / math.log2(rank + 1)
    idcg = sum(1.0 / math.log2(rank + 1) for rank in range(1, min(k, len(relevant)) + 1))
    return (100.0 * dcg / idcg,
            100.0 * hits / len(relevant),
            100.0 if hits else 0.0,
            100.0 * hits / k)


def macro_average(per_user):
    rows = [m for m in per_user if m is not None]
    if not rows:
        return (0.0, 0.0, 0.0, 0.0)
    return tuple(sum(col) / len(rows) for col in zip(*rows))
