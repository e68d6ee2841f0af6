"""Fine stage: layout trees and profile-guided batch path reasoning."""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .graph import ITEM, KnowledgeGraph, ReasoningPath
from .profiles import UserProfile
from .reasoner import ReasonerModel, module_forward, path_log_prob

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class TreeNode:
    relation: int | None
    parent: "TreeNode | None" = None
    children: list = field(default_factory=list)
    count: int = 1
    weight: int = 0  # profile weight of the pattern ending here, 0 if none

    @property
    def terminal(self) -> bool:
        return self.weight > 0

    def child(self, relation: int) -> "TreeNode | None":
        for c in self.children:
            if c.relation == relation:
                return c
        return None

    def pattern(self) -> tuple:
        rels = []
        node = self
        while node.parent is not None:
            rels.append(node.relation)
            node = node.parent
        return tuple(reversed(rels))


@dataclass
class LayoutTree:
    root: TreeNode

    def nodes(self) -> list[TreeNode]:
        """Non-root nodes in level order."""
        out = []
        queue = deque(self.root.children)
        while queue:
            x = queue.popleft()
            out.append(x)
            queue.extend(x.children)
        return out

    def terminals(self) -> list[TreeNode]:
        return [x for x in self.nodes() if x.terminal]

    def __len__(self):
        return len(self.nodes())

    def counts(self) -> dict:
        """Map each node's relation prefix to its expansion count."""
        return {x.pattern(): x.count for x in self.nodes()}


def build_layout_tree(profile: UserProfile) -> LayoutTree:
    """Prefix-merge the profile's patterns and assign expansion counts.

    Leaves start at their pattern weight; an internal node takes the
    minimum over its children, after which each child is divided by it
    (floor, but never below 1). The root always has count 1.
    """
    if not profile.entries:
        raise ValueError("cannot build a layout tree from an empty profile")
    root = TreeNode(None)
    for pattern, w in profile.entries:
        if w <= 0:
            continue
        node = root
        for r in pattern.relations:
            nxt = node.child(r)
            if nxt is None:
                nxt = TreeNode(r, node)
                node.children.append(nxt)
            node = nxt
        node.weight += w

    def settle(x: TreeNode):
        for c in x.children:
            settle(c)
        if x is root:
            return
        if not x.children:
            x.count = x.weight
            return
        candidates = [c.count for c in x.children]
        if x.terminal:
            candidates.append(x.weight)
        x.count = min(candidates)
        for c in x.children:
            c.count = max(1, c.count // x.count)

    settle(root)
    root.count = 1
    return LayoutTree(root)


@dataclass
class Counters:
    forward: int = 0
    scored: int = 0


def scores(rows: np.ndarray, x: np.ndarray) -> np.ndarray:
    # row-wise reduction so a row's score does not depend on its batch
    return (rows * x).sum(axis=1)


def top_n(cands: np.ndarray, s: np.ndarray, n: int) -> np.ndarray:
    """Indices of the ``n`` best candidates; ties go to the lower entity id."""
    order = np.lexsort((cands, -s))
    return order[:n]


def _admissible(graph, last, r, on_path, exclude):
    cands = graph.neighbor_array(last, r)
    if not len(cands):
        return cands
    keep = [e not in on_path and (exclude is None or e not in exclude) for e in cands.tolist()]
    return cands[np.asarray(keep, dtype=bool)]


def ppr(graph: KnowledgeGraph, model: ReasonerModel, u: int, tree: LayoutTree,
        exclude: Iterable[int] | None = None, counters: Counters | None = None) -> list[ReasoningPath]:
    """Level-order batch path reasoning over a layout tree.

    Each node runs its module once on the parent's output embedding and
    extends every parent path with its ``count`` best-scoring neighbors.
    ``exclude`` bars entities from being the final hop of a pattern.
    Returned paths carry the final-hop dot product as ``score``.
    """
    emb = model.entity_embeddings
    exclude = set(exclude) if exclude is not None else None
    u_vec = emb[u]
    outputs: list[ReasoningPath] = []
    state = {id(tree.root): (u_vec, [((u,), (), None)])}
    queue = deque(tree.root.children)
    while queue:
        x = queue.popleft()
        parent_vec, parent_paths = state[id(x.parent)]
        x_vec = module_forward(model, x.relation, u_vec, parent_vec)
        if counters is not None:
            counters.forward += 1
        leaf_excl = exclude if not x.children else None
        per_path = []
        for ents, _, _ in parent_paths:
            per_path.append(_admissible(graph, ents[-1], x.relation, ents, leaf_excl))
        paths_x = []
        if per_path and sum(len(c) for c in per_path):
            uniq, inverse = np.unique(np.concatenate(per_path), return_inverse=True)
            s_all = scores(emb[uniq], x_vec)
            if counters is not None:
                counters.scored += len(uniq)
            offset = 0
            for (ents, rels, _), cands in zip(parent_paths, per_path):
                s = s_all[inverse[offset:offset + len(cands)]]
                offset += len(cands)
                for k in top_n(cands, s, x.count):
                    paths_x.append((ents + (int(cands[k]),), rels + (x.relation,), float(s[k])))
        if x.terminal:
            for ents, rels, sc in paths_x:
                if exclude is not None and x.children and ents[-1] in exclude:
                    continue
                outputs.append(ReasoningPath(ents, rels, sc))
        if x.children and paths_x:
            state[id(x)] = (x_vec, paths_x)
            queue.extend(x.children)
    if not outputs:
        logger.debug("user %d: layout tree fully pruned, no paths", u)
    return outputs


def individual_reason(graph: KnowledgeGraph, model: ReasonerModel, u: int, tree: LayoutTree,
                      exclude: Iterable[int] | None = None,
                      counters: Counters | None = None) -> list[ReasoningPath]:
    """Path-by-path reasoning with the same selection rule as :func:`ppr`.

    Every pattern is handled on its own and every partial path recomputes
    its module outputs, so nothing is shared between paths.
    """
    emb = model.entity_embeddings
    exclude = set(exclude) if exclude is not None else None
    u_vec = emb[u]
    outputs: list[ReasoningPath] = []

    for terminal in tree.terminals():
        chain = []
        node = terminal
        while node.parent is not None:
            chain.append(node)
            node = node.parent
        chain.reverse()

        def extend(depth, ents, rels, prev_vec):
            x = chain[depth]
            x_vec = module_forward(model, x.relation, u_vec, prev_vec)
            if counters is not None:
                counters.forward += 1
            last = depth == len(chain) - 1
            excl = exclude if not x.children else None
            cands = _admissible(graph, ents[-1], x.relation, ents, excl)
            if not len(cands):
                return
            s = scores(emb[cands], x_vec)
            if counters is not None:
                counters.scored += len(cands)
            for k in top_n(cands, s, x.count):
                e = int(cands[k])
                if last:
                    if exclude is not None and x.children and e in exclude:
                        continue
                    outputs.append(ReasoningPath(ents + (e,), rels + (x.relation,), float(s[k])))
                else:
                    extend(depth + 1, ents + (e,), rels + (x.relation,), x_vec)

        extend(0, (u,), (), u_vec)
    return outputs


@dataclass(frozen=True)
class Recommendation:
    item: int
    path: ReasoningPath
    score: float


def recommend(graph: KnowledgeGraph, model: ReasonerModel, u: int, paths: Sequence[ReasoningPath],
              n: int = 10, exclude_train: bool = True) -> list[Recommendation]:
    """Rank reasoning paths and keep the best path per reached item.

    Paths are ordered by final-hop score, then by full path log-likelihood.
    """
    emb = model.entity_embeddings
    seen = set(graph.interacted_items(u)) if exclude_train else set()
    scored = []
    for p in paths:
        if graph.entity_type(p.end) != ITEM or p.end in seen:
            continue
        sc = p.score
        if sc is None:
            x = emb[p.entities[0]]
            for r in p.relations:
                x = module_forward(model, r, emb[p.entities[0]], x)
            sc = float(scores(emb[[p.end]], x)[0])
        scored.append((sc, p))
    if not scored:
        logger.debug("user %d: no item endpoints to recommend", u)
        return []
    score_counts: dict[float, int] = {}
    for sc, _ in scored:
        score_counts[sc] = score_counts.get(sc, 0) + 1
    lp_cache: dict = {}

    def tiebreak(sc, p):
        if score_counts[sc] == 1:
            return 0.0
        if p not in lp_cache:
            lp_cache[p] = path_log_prob(model, graph, p, validate=False)
        return lp_cache[p]

    ranked = sorted(scored, key=lambda sp: (-sp[0], -tiebreak(*sp), sp[1].entities))
    best: dict[int, Recommendation] = {}
    for sc, p in ranked:
        if p.end not in best:
            best[p.end] = Recommendation(p.end, ReasoningPath(p.entities, p.relations, sc), sc)
            if len(best) == n:
                break
    return list(best.values())


def format_recommendations(graph: KnowledgeGraph, u: int, recs: Sequence[Recommendation]) -> list[str]:
    return [f"{graph.entity_names[u]}\t{rank}\t{graph.entity_names[r.item]}\t{r.score!r}\t"
            f"{graph.format_path(r.path)}" for rank, r in enumerate(recs, start=1)]
