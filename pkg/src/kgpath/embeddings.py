"""Translational (TransE-style) pretraining of entity embeddings."""
from __future__ import annotations

import logging
import math

import numpy as np
import torch

from .graph import KnowledgeGraph

logger = logging.getLogger(__name__)


def transe_distance(ent, rel, triples) -> np.ndarray:
    h, r, t = np.asarray(triples).T
    return np.linalg.norm(ent[h] + rel[r] - ent[t], axis=1)


def pretrain_embeddings(graph: KnowledgeGraph, dim: int = 100, epochs: int = 50, seed: int = 0,
                        margin: float = 1.0, lr: float = 0.01, batch_size: int = 512,
                        unit_clamp: bool = True, return_relations: bool = False):
    """Margin-ranking translational embedding over all forward triples.

    Each triple is contrasted with one corruption whose head or tail is
    replaced by a random entity of the same type. Entity rows are clamped
    to the unit ball after every step when ``unit_clamp`` is set.
    """
    rng = np.random.default_rng([seed, 7])
    bound = 6.0 / math.sqrt(dim)
    ent = rng.uniform(-bound, bound, size=(graph.n_entities, dim))
    rel = rng.uniform(-bound, bound, size=(graph.n_relations, dim))
    rel /= np.maximum(np.linalg.norm(rel, axis=1, keepdims=True), 1e-12)
    triples = np.array(list(graph.triples()), dtype=np.int64).reshape(-1, 3)
    if epochs <= 0 or len(triples) == 0:
        return (ent, rel) if return_relations else ent

    ent_t = torch.nn.Parameter(torch.from_numpy(ent))
    rel_t = torch.nn.Parameter(torch.from_numpy(rel))
    opt = torch.optim.Adam([ent_t, rel_t], lr=lr)
    members = {tn: graph.entities_of_type(tn) for tn in graph.type_names}
    head_type = [graph.relations[r].head_type for r in range(graph.n_relations)]
    tail_type = [graph.relations[r].tail_type for r in range(graph.n_relations)]

    for epoch in range(epochs):
        order = rng.permutation(len(triples))
        total = 0.0
        for start in range(0, len(order), batch_size):
            batch = triples[order[start:start + batch_size]]
            corrupt = batch.copy()
            flip_tail = rng.random(len(batch)) < 0.5
            for k, (h, r, t) in enumerate(batch):
                pool = members[tail_type[r] if flip_tail[k] else head_type[r]]
                corrupt[k, 2 if flip_tail[k] else 0] = pool[rng.integers(len(pool))]
            b = torch.from_numpy(batch)
            c = torch.from_numpy(corrupt)
            pos = torch.norm(ent_t[b[:, 0]] + rel_t[b[:, 1]] - ent_t[b[:, 2]], dim=1)
            neg = torch.norm(ent_t[c[:, 0]] + rel_t[c[:, 1]] - ent_t[c[:, 2]], dim=1)
            loss = torch.relu(margin + pos - neg).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            if unit_clamp:
                with torch.no_grad():
                    norms = ent_t.norm(dim=1, keepdim=True).clamp(min=1.0)
                    ent_t.div_(norms)
            total += float(loss.detach()) * len(batch)
        logger.debug("pretrain epoch %d loss %.4f", epoch, total / len(triples))

    ent = ent_t.detach().numpy().copy()
    rel = rel_t.detach().numpy().copy()
    return (ent, rel) if return_relations else ent
