"""Typed heterogeneous knowledge graph with per-(entity, relation) adjacency."""
from __future__ import annotations

import bisect
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

USER = "user"
ITEM = "item"


class GraphError(ValueError):
    pass


class TripleTypeError(GraphError):
    def __init__(self, triple, message):
        super().__init__(f"{message}: {triple}")
        self.triple = triple


class LoadError(GraphError):
    pass


@dataclass(frozen=True)
class Relation:
    id: int
    name: str
    head_type: str
    tail_type: str
    inverse_of: int
    forward: bool = True


@dataclass(frozen=True)
class ReasoningPath:
    """Alternating entity/relation walk ``entities[0] -r1-> entities[1] ...``."""

    entities: tuple
    relations: tuple
    score: float | None = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.entities) != len(self.relations) + 1:
            raise ValueError("a path needs exactly one more entity than relations")

    def __len__(self):
        return len(self.relations)

    @property
    def user(self) -> int:
        return self.entities[0]

    @property
    def end(self) -> int:
        return self.entities[-1]


class KnowledgeGraph:
    """User-centric KG.

    Entities and relations carry dense integer ids. Every forward relation
    has an inverse relation, and adding ``(h, r, t)`` always stores
    ``(t, r_inv, h)`` as well.
    """

    def __init__(self):
        self.entity_names: list[str] = []
        self._entity_type: list[int] = []
        self.type_names: list[str] = []
        self._type_index: dict[str, int] = {}
        self._entity_index: dict[str, int] = {}
        self.relations: list[Relation] = []
        self._relation_index: dict[str, int] = {}
        self._adj: dict[tuple[int, int], list[int]] = {}
        self._adj_cache: dict[tuple[int, int], np.ndarray] = {}
        self._type_members: dict[str, np.ndarray] = {}
        self._n_edges = 0
        self.interaction_relation: int | None = None

    # construction ----------------------------------------------------------

    def _type_id(self, type_name: str) -> int:
        if type_name not in self._type_index:
            self._type_index[type_name] = len(self.type_names)
            self.type_names.append(type_name)
        return self._type_index[type_name]

    def add_entity(self, name: str, type_name: str) -> int:
        name = str(name)
        if name in self._entity_index:
            eid = self._entity_index[name]
            if self.entity_type(eid) != type_name:
                raise GraphError(f"entity {name!r} already registered as {self.entity_type(eid)}")
            return eid
        eid = len(self.entity_names)
        self.entity_names.append(name)
        self._entity_type.append(self._type_id(type_name))
        self._entity_index[name] = eid
        self._type_members.pop(type_name, None)
        return eid

    def add_relation(self, name: str, head_type: str, tail_type: str,
                     inverse_name: str | None = None) -> int:
        """Register a forward relation and its inverse; returns the forward id."""
        if name in self._relation_index:
            raise GraphError(f"relation {name!r} declared twice")
        inverse_name = inverse_name or f"{name}_inv"
        if inverse_name in self._relation_index:
            raise GraphError(f"relation {inverse_name!r} declared twice")
        self._type_id(head_type)
        self._type_id(tail_type)
        rid = len(self.relations)
        self.relations.append(Relation(rid, name, head_type, tail_type, rid + 1, True))
        self.relations.append(Relation(rid + 1, inverse_name, tail_type, head_type, rid, False))
        self._relation_index[name] = rid
        self._relation_index[inverse_name] = rid + 1
        return rid

    def set_interaction_relation(self, relation: int | str | None = None) -> int:
        """Designate the user-item interaction relation.

        With no argument, the unique forward relation from ``user`` to
        ``item`` is chosen.
        """
        if relation is None:
            found = [r.id for r in self.relations
                     if r.forward and r.head_type == USER and r.tail_type == ITEM]
            if len(found) != 1:
                raise GraphError(f"expected exactly one user->item relation, found {len(found)}")
            rid = found[0]
        else:
            rid = self.relation_id(relation) if isinstance(relation, str) else int(relation)
        rel = self.relations[rid]
        if rel.head_type != USER or rel.tail_type != ITEM:
            raise GraphError(f"interaction relation {rel.name!r} must map user -> item")
        self.interaction_relation = rid
        return rid

    def add_triple(self, h: int, r: int, t: int) -> bool:
        """Store ``(h, r, t)`` and its inverse. Returns False for a duplicate."""
        rel = self.relations[r]
        if h >= len(self._entity_type) or t >= len(self._entity_type) or h < 0 or t < 0:
            raise GraphError(f"unregistered entity in triple {(h, r, t)}")
        if self.entity_type(h) != rel.head_type or self.entity_type(t) != rel.tail_type:
            raise TripleTypeError(
                (self.entity_names[h], rel.name, self.entity_names[t]),
                f"relation {rel.name} expects {rel.head_type} -> {rel.tail_type}, got "
                f"{self.entity_type(h)} -> {self.entity_type(t)}")
        added = self._insert(h, r, t)
        if added:
            self._insert(t, rel.inverse_of, h)
            self._n_edges += 1
        return added

    def _insert(self, h, r, t) -> bool:
        lst = self._adj.setdefault((h, r), [])
        pos = bisect.bisect_left(lst, t)
        if pos < len(lst) and lst[pos] == t:
            return False
        lst.insert(pos, t)
        self._adj_cache.pop((h, r), None)
        return True

    # queries ---------------------------------------------------------------

    @property
    def n_entities(self) -> int:
        return len(self.entity_names)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def n_triples(self) -> int:
        """Number of forward triples (inverses not counted)."""
        return self._n_edges

    @property
    def n_directed_edges(self) -> int:
        return 2 * self._n_edges

    def entity_type(self, e: int) -> str:
        return self.type_names[self._entity_type[e]]

    def entity_id(self, name: str) -> int:
        try:
            return self._entity_index[str(name)]
        except KeyError:
            raise GraphError(f"unknown entity {name!r}") from None

    def relation_id(self, name: str) -> int:
        try:
            return self._relation_index[name]
        except KeyError:
            raise GraphError(f"unknown relation {name!r}") from None

    def relation(self, r: int | str) -> Relation:
        return self.relations[self.relation_id(r) if isinstance(r, str) else r]

    def inverse(self, r: int) -> int:
        return self.relations[r].inverse_of

    def neighbors(self, e: int, r: int) -> list[int]:
        if not 0 <= e < self.n_entities:
            raise GraphError(f"unknown entity id {e}")
        return list(self._adj.get((e, r), ()))

    def neighbor_array(self, e: int, r: int) -> np.ndarray:
        """Sorted neighbor ids as an int64 array (cached, read-only)."""
        key = (e, r)
        arr = self._adj_cache.get(key)
        if arr is None:
            arr = np.asarray(self._adj.get(key, ()), dtype=np.int64)
            arr.setflags(write=False)
            self._adj_cache[key] = arr
        return arr

    def has_triple(self, h: int, r: int, t: int) -> bool:
        lst = self._adj.get((h, r))
        if not lst:
            return False
        pos = bisect.bisect_left(lst, t)
        return pos < len(lst) and lst[pos] == t

    def entities_of_type(self, type_name: str) -> np.ndarray:
        arr = self._type_members.get(type_name)
        if arr is None:
            tid = self._type_index.get(type_name)
            arr = np.asarray([i for i, t in enumerate(self._entity_type) if t == tid], dtype=np.int64)
            arr.setflags(write=False)
            self._type_members[type_name] = arr
        return arr

    @property
    def users(self) -> np.ndarray:
        return self.entities_of_type(USER)

    @property
    def items(self) -> np.ndarray:
        return self.entities_of_type(ITEM)

    def out_relations(self, e: int) -> list[int]:
        etype = self.entity_type(e)
        return [r.id for r in self.relations
                if r.head_type == etype and self._adj.get((e, r.id))]

    def triples(self, forward_only: bool = True) -> Iterable[tuple[int, int, int]]:
        for (h, r), tails in sorted(self._adj.items()):
            if forward_only and not self.relations[r].forward:
                continue
            for t in tails:
                yield h, r, t

    def interacted_items(self, u: int) -> list[int]:
        if self.interaction_relation is None:
            raise GraphError("no interaction relation designated")
        return self.neighbors(u, self.interaction_relation)

    def validate_path(self, path: ReasoningPath, require_item_end: bool = True) -> None:
        """Raise :class:`GraphError` unless every hop of ``path`` is a stored triple."""
        if len(path.relations) == 0:
            raise GraphError("empty path")
        if self.entity_type(path.entities[0]) != USER:
            raise GraphError(f"path must start at a user, got {self.entity_names[path.entities[0]]}")
        for h, r, t in zip(path.entities[:-1], path.relations, path.entities[1:]):
            if not self.has_triple(h, r, t):
                raise GraphError(
                    f"hop ({self.entity_names[h]}, {self.relations[r].name}, "
                    f"{self.entity_names[t]}) not in graph")
        if require_item_end and self.entity_type(path.entities[-1]) != ITEM:
            raise GraphError("path does not end at an item")

    def is_valid_path(self, path: ReasoningPath, require_item_end: bool = True) -> bool:
        try:
            self.validate_path(path, require_item_end)
        except GraphError:
            return False
        return True

    def format_path(self, path: ReasoningPath) -> str:
        out = [self.entity_names[path.entities[0]]]
        for r, e in zip(path.relations, path.entities[1:]):
            out.append(f"-[{self.relations[r].name}]->{self.entity_names[e]}")
        return "".join(out)

    def stats(self) -> dict:
        return {
            "users": int(len(self.users)),
            "items": int(len(self.items)),
            "interactions": sum(len(v) for (h, r), v in self._adj.items()
                                if r == self.interaction_relation),
            "entities": self.n_entities,
            "relations": self.n_relations,
            "triples": self.n_directed_edges,
        }

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name, t in zip(self.entity_names, self._entity_type):
            h.update(f"E{name}\t{self.type_names[t]}\n".encode())
        for r in self.relations:
            h.update(f"R{r.name}\t{r.head_type}\t{r.tail_type}\t{r.inverse_of}\n".encode())
        for tr in self.triples():
            h.update(("T%d\t%d\t%d\n" % tr).encode())
        return h.hexdigest()[:16]

    def adjacency_snapshot(self) -> dict:
        return {k: tuple(v) for k, v in self._adj.items() if v}


# -- file formats ------------------------------------------------------------

def _split(line: str, path: Path, lineno: int, n_min: int, n_max: int) -> list[str]:
    parts = line.rstrip("\n").split("\t")
    if not n_min <= len(parts) <= n_max or any(p == "" for p in parts):
        raise LoadError(f"{path}:{lineno}: expected {n_min}-{n_max} tab-separated fields, got {line!r}")
    return parts


def _lines(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            yield lineno, line


def load_graph(entities_file, relations_file, triples_file,
               interaction_relation: str | None = None) -> KnowledgeGraph:
    g = KnowledgeGraph()
    entities_file, relations_file, triples_file = map(Path, (entities_file, relations_file, triples_file))
    for lineno, line in _lines(entities_file):
        name, type_name = _split(line, entities_file, lineno, 2, 2)
        g.add_entity(name, type_name)
    rel_by_file_id: dict[str, int] = {}
    for lineno, line in _lines(relations_file):
        parts = _split(line, relations_file, lineno, 4, 5)
        rel_by_file_id[parts[0]] = g.add_relation(parts[1], parts[2], parts[3],
                                                  parts[4] if len(parts) == 5 else None)
    for lineno, line in _lines(triples_file):
        h, r, t = _split(line, triples_file, lineno, 3, 3)
        for name in (h, t):
            if name not in g._entity_index:
                raise LoadError(f"{triples_file}:{lineno}: unregistered entity {name!r}")
        if r not in rel_by_file_id:
            raise LoadError(f"{triples_file}:{lineno}: unknown relation id {r!r}")
        try:
            g.add_triple(g.entity_id(h), rel_by_file_id[r], g.entity_id(t))
        except TripleTypeError as exc:
            raise LoadError(f"{triples_file}:{lineno}: {exc}") from exc
    if any(r.head_type == USER and r.tail_type == ITEM and r.forward for r in g.relations):
        g.set_interaction_relation(interaction_relation)
    logger.info("loaded graph: %s", g.stats())
    return g


def load_pairs(path, graph: KnowledgeGraph) -> list[tuple[int, int]]:
    path = Path(path)
    pairs = []
    for lineno, line in _lines(path):
        u, i = _split(line, path, lineno, 2, 2)
        for name in (u, i):
            if name not in graph._entity_index:
                raise LoadError(f"{path}:{lineno}: unregistered entity {name!r}")
        pairs.append((graph.entity_id(u), graph.entity_id(i)))
    return pairs


def save_graph(graph: KnowledgeGraph, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "entities.tsv", "w", encoding="utf-8") as fh:
        for e, name in enumerate(graph.entity_names):
            fh.write(f"{name}\t{graph.entity_type(e)}\n")
    with open(d / "relations.tsv", "w", encoding="utf-8") as fh:
        for r in graph.relations:
            if r.forward:
                inv = graph.relations[r.inverse_of].name
                fh.write(f"{r.id}\t{r.name}\t{r.head_type}\t{r.tail_type}\t{inv}\n")
    with open(d / "triples.tsv", "w", encoding="utf-8") as fh:
        for h, r, t in graph.triples():
            fh.write(f"{graph.entity_names[h]}\t{r}\t{graph.entity_names[t]}\n")


def save_pairs(pairs: Sequence[tuple[int, int]], graph: KnowledgeGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, i in pairs:
            fh.write(f"{graph.entity_names[u]}\t{graph.entity_names[i]}\n")


@dataclass
class Dataset:
    graph: KnowledgeGraph
    train: list[tuple[int, int]]
    test: list[tuple[int, int]]

    def test_items_by_user(self) -> dict[int, set[int]]:
        out: dict[int, set[int]] = {}
        for u, i in self.test:
            out.setdefault(u, set()).add(i)
        return out


def load_dataset(directory, interaction_relation: str | None = None) -> Dataset:
    d = Path(directory)
    g = load_graph(d / "entities.tsv", d / "relations.tsv", d / "triples.tsv", interaction_relation)
    train = load_pairs(d / "train.tsv", g) if (d / "train.tsv").exists() else []
    test = load_pairs(d / "test.tsv", g) if (d / "test.tsv").exists() else []
    for u, i in train:
        g.add_triple(u, g.interaction_relation, i)
    return Dataset(g, train, test)


def amazon_schema() -> KnowledgeGraph:
    """Empty graph with the e-commerce schema (8 forward relations, 16 with inverses)."""
    g = KnowledgeGraph()
    g.add_relation("purchase", USER, ITEM)
    g.add_relation("mention", USER, "word")
    g.add_relation("described_as", ITEM, "word")
    g.add_relation("produced_by", ITEM, "brand")
    g.add_relation("belongs_to", ITEM, "category")
    g.add_relation("also_bought", ITEM, "related_item")
    g.add_relation("also_viewed", ITEM, "related_item")
    g.add_relation("bought_together", ITEM, "related_item")
    g.set_interaction_relation("purchase")
    return g
