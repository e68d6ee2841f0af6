"""Synthetic e-commerce KGs with planted user behavior patterns."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .graph import ITEM, USER, Dataset, KnowledgeGraph, amazon_schema, save_graph, save_pairs
from .patterns import enumerate_paths

logger = logging.getLogger(__name__)

# planted behavior -> (relation sequence, grouping of items it exploits)
PLANTED = {
    "brand": (("purchase", "produced_by", "produced_by_inv"), "brand"),
    "topic": (("mention", "described_as_inv"), "word"),
    "category": (("purchase", "belongs_to", "belongs_to_inv"), "category"),
}


@dataclass
class SyntheticSpec:
    n_users: int = 200
    n_items: int = 300
    group_size: int = 4
    n_related: int = 600
    planted: list = field(default_factory=lambda: ["brand", "topic", "category"])
    groups_per_user: int = 2
    mixture_alpha: float = 0.1
    test_fraction: float = 0.3
    noise_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        unknown = set(self.planted) - set(PLANTED)
        if unknown:
            raise ValueError(f"unknown planted patterns {sorted(unknown)}")
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2 so each group has a train and a test item")


@dataclass
class SyntheticData:
    dataset: Dataset
    usage: list  # (user, planted name, group entity, train items, test items)
    spec: SyntheticSpec
    base_triples: int = 0


def _partition(rng, items, size):
    perm = rng.permutation(items)
    return [perm[k:k + size].tolist() for k in range(0, len(perm), size) if len(perm[k:k + size]) >= 2]


def generate(spec: SyntheticSpec) -> SyntheticData:
    rng = np.random.default_rng(spec.seed)
    g = amazon_schema()
    users = [g.add_entity(f"user_{k}", USER) for k in range(spec.n_users)]
    items = [g.add_entity(f"item_{k}", ITEM) for k in range(spec.n_items)]

    groups = {}
    for kind, etype in (("brand", "brand"), ("category", "category"), ("topic", "word")):
        parts = _partition(rng, items, spec.group_size)
        groups[kind] = [(g.add_entity(f"{etype}_{k}", etype), members) for k, members in enumerate(parts)]
    related = [g.add_entity(f"related_{k}", "related_item") for k in range(spec.n_related)]

    rel = g.relation_id
    for b, members in groups["brand"]:
        for i in members:
            g.add_triple(i, rel("produced_by"), b)
    for c, members in groups["category"]:
        for i in members:
            g.add_triple(i, rel("belongs_to"), c)
    for w, members in groups["topic"]:
        for i in members:
            g.add_triple(i, rel("described_as"), w)
    for i in items:
        for name in ("also_bought", "also_viewed", "bought_together"):
            g.add_triple(i, rel(name), related[rng.integers(len(related))])

    train: dict[int, set] = {u: set() for u in users}
    test: dict[int, set] = {u: set() for u in users}
    usage = []
    planted = list(spec.planted)
    for u in users:
        mix = rng.dirichlet(np.full(len(planted), spec.mixture_alpha))
        for _ in range(spec.groups_per_user):
            kind = planted[rng.choice(len(planted), p=mix)]
            anchor, members = groups[kind][rng.integers(len(groups[kind]))]
            members = rng.permutation(members).tolist()
            n_test = min(len(members) - 1, max(1, int(round(spec.test_fraction * len(members)))))
            te, tr = members[:n_test], members[n_test:]
            if kind == "topic":
                g.add_triple(u, rel("mention"), anchor)
            train[u].update(tr)
            test[u].update(te)
            usage.append((u, kind, anchor, tuple(tr), tuple(te)))
    for u in users:
        test[u] -= train[u]
        for i in sorted(train[u]):
            g.add_triple(u, rel("purchase"), i)

    base = g.n_triples
    n_noise = int(round(spec.noise_rate * base))
    forward = [r for r in g.relations if r.forward]
    noisy_train = []
    added = 0
    while added < n_noise:
        r = forward[rng.integers(len(forward))]
        heads = g.entities_of_type(r.head_type)
        tails = g.entities_of_type(r.tail_type)
        h = int(heads[rng.integers(len(heads))])
        t = int(tails[rng.integers(len(tails))])
        if r.id == g.interaction_relation and t in test[h]:
            continue
        if g.add_triple(h, r.id, t):
            added += 1
            if r.id == g.interaction_relation:
                train[h].add(t)
                noisy_train.append((h, t))

    planted_rels = [tuple(g.relation_id(n) for n in PLANTED[k][0]) for k in planted]
    test_pairs = []
    for u in users:
        targets = test[u]
        reachable = set()
        for rels in planted_rels:
            reachable.update(p.end for p in enumerate_paths(g, u, rels, targets))
        dropped = targets - reachable
        if dropped:
            logger.debug("user %d: %d test items unreachable, dropped", u, len(dropped))
        test_pairs.extend((u, i) for i in sorted(targets & reachable))
    train_pairs = [(u, i) for u in users for i in sorted(train[u])]
    return SyntheticData(Dataset(g, train_pairs, test_pairs), usage, spec, base)


def write_dataset(data: SyntheticData, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    g = data.dataset.graph
    save_graph(g, d)
    save_pairs(data.dataset.train, g, d / "train.tsv")
    save_pairs(data.dataset.test, g, d / "test.tsv")
    with open(d / "usage.tsv", "w", encoding="utf-8") as fh:
        for u, kind, anchor, tr, te in data.usage:
            fh.write(f"{g.entity_names[u]}\t{kind}\t{g.entity_names[anchor]}\t"
                     f"{','.join(g.entity_names[i] for i in tr)}\t"
                     f"{','.join(g.entity_names[i] for i in te)}\n")


def spec_to_dict(spec: SyntheticSpec) -> dict:
    return asdict(spec)
