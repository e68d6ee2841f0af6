"""User-centric pattern mining by random walks, and training-path collection."""
from __future__ import annotations

import hashlib
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .graph import ITEM, USER, GraphError, KnowledgeGraph, ReasoningPath

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Pattern:
    relations: tuple
    frequency: int = field(default=0, compare=False)

    def __len__(self):
        return len(self.relations)

    def names(self, graph: KnowledgeGraph) -> str:
        return ",".join(graph.relations[r].name for r in self.relations)


@dataclass(frozen=True)
class PathSample:
    pattern: Pattern
    path: ReasoningPath

    @property
    def user(self) -> int:
        return self.path.entities[0]

    @property
    def item(self) -> int:
        return self.path.entities[-1]


def is_user_centric(graph: KnowledgeGraph, relations: Sequence[int]) -> bool:
    if not relations:
        return False
    rels = [graph.relations[r] for r in relations]
    if rels[0].head_type != USER or rels[-1].tail_type != ITEM:
        return False
    return all(a.tail_type == b.head_type for a, b in zip(rels, rels[1:]))


def _is_direct_interaction(graph, relations) -> bool:
    return len(relations) == 1 and relations[0] == graph.interaction_relation


def schema_patterns(graph: KnowledgeGraph, max_len: int) -> list[tuple]:
    """All type-valid user-to-item relation sequences up to ``max_len`` hops.

    The bare interaction relation is left out: it only ever reaches items
    the user already interacted with.
    """
    by_head: dict[str, list[int]] = {}
    for r in graph.relations:
        by_head.setdefault(r.head_type, []).append(r.id)
    out = []
    stack = [((), USER)]
    while stack:
        seq, etype = stack.pop()
        if seq and etype == ITEM and not _is_direct_interaction(graph, seq):
            out.append(seq)
        if len(seq) < max_len:
            for r in by_head.get(etype, ()):
                stack.append((seq + (r,), graph.relations[r].tail_type))
    return sorted(out, key=lambda s: (len(s), s))


def _walk(graph: KnowledgeGraph, u: int, targets: set, max_len: int, rng) -> tuple | None:
    path = [u]
    rels: list[int] = []
    for _ in range(max_len):
        cur = path[-1]
        options = []
        for r in graph.out_relations(cur):
            for e in graph.neighbor_array(cur, r):
                if e not in path:
                    options.append((r, int(e)))
        if not options:
            return None
        r, e = options[rng.integers(len(options))]
        rels.append(r)
        path.append(e)
        if e in targets and not _is_direct_interaction(graph, rels):
            return tuple(rels)
    return None


def mine_patterns(graph: KnowledgeGraph, max_len: int = 3, max_patterns: int = 15,
                  walks_per_pair: int = 10, seed: int = 0,
                  users: Iterable[int] | None = None) -> list[Pattern]:
    """Mine the candidate pattern set by random walks from users.

    ``walks_per_pair`` walks are launched per training interaction of each
    user. A walk succeeds when it lands on one of the user's interacted
    items (other than through the direct interaction edge itself).
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if graph.interaction_relation is None:
        raise GraphError("graph has no interaction relation")
    counts: Counter = Counter()
    for u in (graph.users if users is None else users):
        u = int(u)
        targets = set(graph.interacted_items(u))
        if not targets:
            continue
        rng = np.random.default_rng([seed, u])
        for _ in range(walks_per_pair * len(targets)):
            seq = _walk(graph, u, targets, max_len, rng)
            if seq is not None:
                counts[seq] += 1
    if not counts:
        logger.warning("no user-centric walk succeeded; empty pattern set")
        return []
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:max_patterns]
    return [Pattern(seq, freq) for seq, freq in ranked]


def enumerate_paths(graph: KnowledgeGraph, u: int, relations: Sequence[int],
                    endpoints: set | None = None) -> list[ReasoningPath]:
    """All simple paths from ``u`` following ``relations``.

    If ``endpoints`` is given, only paths ending in that set are returned.
    """
    out = []

    def dfs(ents, depth):
        nbrs = graph.neighbor_array(ents[-1], relations[depth])
        last = depth == len(relations) - 1
        for e in nbrs:
            e = int(e)
            if e in ents:
                continue
            if last:
                if endpoints is None or e in endpoints:
                    out.append(ReasoningPath(tuple(ents) + (e,), tuple(relations)))
            else:
                ents.append(e)
                dfs(ents, depth + 1)
                ents.pop()

    dfs([u], 0)
    return out


def collect_training_paths(graph: KnowledgeGraph, patterns: Sequence[Pattern],
                           per_user_cap: int = 50, seed: int = 0,
                           users: Iterable[int] | None = None) -> dict[int, list[PathSample]]:
    """Sample up to ``per_user_cap`` training paths per (user, pattern).

    Each path ends at an item the user interacted with in the training
    graph. Sampling is without replacement from the full enumeration.
    """
    if not patterns:
        raise ValueError("pattern set is empty")
    out: dict[int, list[PathSample]] = {}
    for u in (graph.users if users is None else users):
        u = int(u)
        targets = set(graph.interacted_items(u))
        samples: list[PathSample] = []
        if per_user_cap > 0 and targets:
            for j, pat in enumerate(patterns):
                paths = enumerate_paths(graph, u, pat.relations, targets)
                if _is_direct_interaction(graph, pat.relations):
                    paths = []
                if len(paths) > per_user_cap:
                    rng = np.random.default_rng([seed, u, j])
                    keep = np.sort(rng.choice(len(paths), per_user_cap, replace=False))
                    paths = [paths[k] for k in keep]
                samples.extend(PathSample(pat, p) for p in paths)
        out[u] = samples
    return out


def samples_by_pattern(samples: Sequence[PathSample]) -> dict[tuple, list[PathSample]]:
    out: dict[tuple, list[PathSample]] = {}
    for s in samples:
        out.setdefault(s.pattern.relations, []).append(s)
    return out


def pattern_set_fingerprint(patterns: Sequence[Pattern]) -> str:
    text = ";".join(",".join(map(str, p.relations)) for p in patterns)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def save_patterns(patterns: Sequence[Pattern], graph: KnowledgeGraph, path,
                  header: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}={v}\n")
        for rank, p in enumerate(patterns):
            fh.write(f"{rank}\t{p.names(graph)}\t{p.frequency}\n")


def load_patterns(path, graph: KnowledgeGraph) -> tuple[list[Pattern], dict]:
    header: dict = {}
    patterns = []
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                header[k] = v
                continue
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: malformed pattern line")
            rels = tuple(graph.relation_id(n) for n in parts[1].split(","))
            if not is_user_centric(graph, rels):
                raise ValueError(f"{path}:{lineno}: pattern {parts[1]} is not user-centric")
            patterns.append(Pattern(rels, int(parts[2])))
    return patterns, header
