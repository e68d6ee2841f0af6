"""Straight-line reference implementations used as test oracles."""
import math

import numpy as np


def conforming_extensions(graph, ents, r, exclude=None):
    """Every entity reachable from ents[-1] by r, off the path and not excluded."""
    out = []
    for e in range(graph.n_entities):
        if e in ents or (exclude is not None and e in exclude):
            continue
        if graph.has_triple(ents[-1], r, e):
            out.append(e)
    return out


def ppr_oracle(graph, model, u, profile, counts, exclude=None):
    """Enumerate pattern-conforming paths prefix by prefix, keeping the
    ``counts[prefix]`` best extensions of each surviving partial path.

    Scores use a plain dot product; ties go to the lower entity id.
    """
    from kgpath.reasoner import module_forward
    emb = model.entity_embeddings
    exclude = set(exclude or ())
    prefixes = {p.relations[:k] for p, _ in profile.entries for k in range(1, len(p.relations) + 1)}
    terminals = {p.relations for p, w in profile.entries if w > 0}
    vec = {(): emb[u]}
    alive = {(): [(u,)]}
    result = set()
    for prefix in sorted(prefixes, key=lambda s: (len(s), s)):
        parent = prefix[:-1]
        if parent not in alive:
            continue
        r = prefix[-1]
        x = module_forward(model, r, emb[u], vec[parent])
        vec[prefix] = x
        is_leaf = not any(len(q) > len(prefix) and q[:len(prefix)] == prefix for q in prefixes)
        kept = []
        for ents in alive[parent]:
            cands = conforming_extensions(graph, ents, r, exclude if is_leaf else None)
            ranked = sorted(cands, key=lambda e: (-float(np.dot(emb[e], x)), e))
            kept.extend(ents + (e,) for e in ranked[:counts[prefix]])
        if kept:
            alive[prefix] = kept
        if prefix in terminals:
            result.update((ents, prefix) for ents in kept if ents[-1] not in exclude)
    return result


def metrics_oracle(recommended, relevant, k):
    """NDCG / recall / hit rate / precision at k, in percent."""
    if not relevant:
        return None
    top = list(recommended)[:k]
    gains = [1.0 if item in relevant else 0.0 for item in top]
    dcg = sum(g / math.log2(rank + 2) for rank, g in enumerate(gains))
    ideal = sum(1.0 / math.log2(rank + 2) for rank in range(min(len(relevant), k)))
    hits = sum(gains)
    return (100.0 * dcg / ideal, 100.0 * hits / len(relevant),
            100.0 if hits > 0 else 0.0, 100.0 * hits / k)


def best_knapsack_objective(values, budget, bounds, unusable=-math.inf):
    """Exhaustive search over every integer assignment that fills the feasible budget.

    Returns ``(filled, best objective)``; assignments are enumerated
    pattern by pattern, skipping only partial ones that can no longer sum
    to the target.
    """
    usable = [j for j in range(len(values)) if values[j] != unusable]
    target = min(budget, sum(bounds[j] for j in usable))
    best = -math.inf

    def rec(k, left, acc):
        nonlocal best
        if k == len(usable):
            if left == 0:
                best = max(best, acc)
            return
        j = usable[k]
        rest = sum(bounds[i] for i in usable[k + 1:])
        for w in range(max(0, left - rest), min(bounds[j], left) + 1):
            rec(k + 1, left - w, acc + w * values[j])

    rec(0, target, 0.0)
    return target, best
