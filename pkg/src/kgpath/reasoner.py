"""Per-relation neural reasoning modules, path likelihoods and training.

Inference helpers work on numpy arrays; training mirrors the same
computation in torch to get gradients.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .graph import GraphError, KnowledgeGraph, ReasoningPath
from .patterns import Pattern, PathSample, pattern_set_fingerprint

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class UnknownRelationError(KeyError):
    pass


class EmptyCandidatesError(ValueError):
    pass


class TrainingError(RuntimeError):
    def __init__(self, epoch, batch, value):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class Hyperparams:
    dim: int = 100
    hidden: int = 256
    rank_weight: float = 10.0
    lr: float = 1e-4
    batch_size: int = 128
    epochs: int = 20
    negatives: int = 5
    rank_loss: str = "sigmoid"

    def __post_init__(self):
        if self.rank_loss not in ("sigmoid", "logsigmoid"):
            raise ValueError(f"unknown rank loss variant {self.rank_loss!r}")


@dataclass
class ReasonerModel:
    entity_embeddings: np.ndarray
    modules: dict  # relation id -> (W1, W2, W3)
    hparams: Hyperparams
    patterns: list = field(default_factory=list)
    relation_names: dict = field(default_factory=dict)
    graph_fingerprint: str = ""
    history: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.entity_embeddings.shape[1]

    def module(self, r: int):
        try:
            return self.modules[r]
        except KeyError:
            raise UnknownRelationError(f"no reasoning module for relation {r}") from None

    def copy(self) -> "ReasonerModel":
        return ReasonerModel(
            self.entity_embeddings.copy(),
            {r: tuple(w.copy() for w in ws) for r, ws in self.modules.items()},
            Hyperparams(**asdict(self.hparams)),
            list(self.patterns), dict(self.relation_names), self.graph_fingerprint,
            list(self.history), dict(self.extra))

    def fingerprint(self) -> str:
        return pattern_set_fingerprint(self.patterns)


def xavier(rng, fan_in, fan_out):
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def init_model(graph: KnowledgeGraph, patterns: Sequence[Pattern], hparams: Hyperparams,
               seed: int = 0, entity_embeddings: np.ndarray | None = None) -> ReasonerModel:
    rng = np.random.default_rng(seed)
    d, hdim = hparams.dim, hparams.hidden
    if entity_embeddings is None:
        emb = rng.normal(0.0, 1.0 / math.sqrt(d), size=(graph.n_entities, d))
    else:
        emb = np.array(entity_embeddings, dtype=np.float64)
        if emb.shape != (graph.n_entities, d):
            raise ValueError(f"embedding shape {emb.shape} != {(graph.n_entities, d)}")
    relations = sorted({r for p in patterns for r in p.relations})
    modules = {r: (xavier(rng, 2 * d, hdim), xavier(rng, hdim, hdim), xavier(rng, hdim, d))
               for r in relations}
    return ReasonerModel(emb, modules, hparams, list(patterns),
                         {r: graph.relations[r].name for r in relations}, graph.fingerprint())


# -- numpy forward -----------------------------------------------------------

def module_forward(model: ReasonerModel, r: int, u_vec, h_vec) -> np.ndarray:
    """``relu(relu([u; h] W1) W2) W3``; accepts single vectors or row batches."""
    w1, w2, w3 = model.module(r)
    x = np.concatenate([np.asarray(u_vec), np.asarray(h_vec)], axis=-1)
    x = np.maximum(x @ w1, 0.0)
    x = np.maximum(x @ w2, 0.0)
    return x @ w3


def _log_softmax(logits):
    m = np.max(logits)
    return logits - (m + np.log(np.sum(np.exp(logits - m))))


def normalization_set(graph: KnowledgeGraph, r: int) -> np.ndarray:
    return graph.entities_of_type(graph.relations[r].tail_type)


def next_hop_log_probs(model: ReasonerModel, graph: KnowledgeGraph, u: int, h: int, r: int,
                       candidates=None) -> np.ndarray:
    """Log-probabilities of each candidate next hop after relation ``r``.

    ``candidates`` is the normalization set; by default every entity with
    the tail type of ``r``.
    """
    model.module(r)
    if candidates is None:
        candidates = normalization_set(graph, r)
    candidates = np.asarray(candidates, dtype=np.int64)
    if candidates.size == 0:
        raise EmptyCandidatesError(f"empty candidate set for relation {r}")
    emb = model.entity_embeddings
    x = module_forward(model, r, emb[u], emb[h])
    return _log_softmax(emb[candidates] @ x)


def hop_log_probs(model: ReasonerModel, graph: KnowledgeGraph, path: ReasoningPath) -> list[float]:
    u = path.entities[0]
    out = []
    for t, r in enumerate(path.relations):
        cands = normalization_set(graph, r)
        lp = next_hop_log_probs(model, graph, u, path.entities[t], r, cands)
        pos = int(np.searchsorted(cands, path.entities[t + 1]))
        out.append(float(lp[pos]))
    return out


def path_log_prob(model: ReasonerModel, graph: KnowledgeGraph, path: ReasoningPath,
                  validate: bool = True) -> float:
    if validate:
        graph.validate_path(path, require_item_end=False)
    return float(sum(hop_log_probs(model, graph, path)))


# -- batches and losses ------------------------------------------------------

@dataclass(frozen=True)
class TrainingExample:
    sample: PathSample
    negatives: tuple

    @property
    def user(self):
        return self.sample.user


def negative_pool(graph: KnowledgeGraph, u: int) -> np.ndarray:
    return np.setdiff1d(graph.items, graph.interacted_items(u), assume_unique=True)


def sample_negatives(graph: KnowledgeGraph, u: int, n: int, rng) -> tuple:
    pool = negative_pool(graph, u)
    if pool.size == 0 or n <= 0:
        return ()
    return tuple(int(x) for x in pool[rng.integers(pool.size, size=n)])


def path_loss(model: ReasonerModel, graph: KnowledgeGraph, batch: Sequence[TrainingExample]) -> float:
    return float(np.mean([-path_log_prob(model, graph, ex.sample.path, validate=False)
                          for ex in batch]))


def _final_prediction(model, path):
    emb = model.entity_embeddings
    return module_forward(model, path.relations[-1], emb[path.entities[0]], emb[path.entities[-2]])


def _rank_term(diff, variant):
    if variant == "logsigmoid":
        return -np.logaddexp(0.0, -diff)
    return 1.0 / (1.0 + np.exp(-diff))


def rank_loss(model: ReasonerModel, graph: KnowledgeGraph, batch: Sequence[TrainingExample]) -> float:
    terms = []
    emb = model.entity_embeddings
    for ex in batch:
        if not ex.negatives:
            continue
        path = ex.sample.path
        pred = _final_prediction(model, path)
        diff = emb[path.entities[-1]] @ pred - emb[list(ex.negatives)] @ pred
        terms.append(-np.mean(_rank_term(diff, model.hparams.rank_loss)))
    if not terms:
        warnings.warn("no negative items in batch; ranking term skipped")
        return 0.0
    return float(np.mean(terms))


def total_loss(model: ReasonerModel, graph: KnowledgeGraph, batch: Sequence[TrainingExample]) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rl = rank_loss(model, graph, batch)
    return path_loss(model, graph, batch) + model.hparams.rank_weight * rl


# -- torch training ----------------------------------------------------------

class _TorchState:
    """Torch mirror of a model's parameters plus per-type lookup tables."""

    def __init__(self, model: ReasonerModel, graph: KnowledgeGraph):
        self.emb = torch.nn.Parameter(torch.from_numpy(model.entity_embeddings.copy()))
        self.weights = {r: [torch.nn.Parameter(torch.from_numpy(w.copy())) for w in ws]
                        for r, ws in model.modules.items()}
        self.variant = model.hparams.rank_loss
        self.type_members = {}
        self.position = np.zeros(graph.n_entities, dtype=np.int64)
        for tname in graph.type_names:
            members = graph.entities_of_type(tname)
            self.type_members[tname] = torch.from_numpy(np.array(members))
            self.position[members] = np.arange(len(members))
        self.tail_type = {r.id: r.tail_type for r in graph.relations}

    def parameters(self):
        yield self.emb
        for r in sorted(self.weights):
            yield from self.weights[r]

    def forward(self, r, u, h):
        w1, w2, w3 = self.weights[r]
        x = torch.cat([u, h], dim=-1)
        return torch.relu(torch.relu(x @ w1) @ w2) @ w3

    def losses(self, batch: Sequence[TrainingExample]):
        # hops of every path are regrouped by relation: one module call per relation
        n = len(batch)
        hop_ex, hop_u, hop_h, hop_next, hop_rel, is_last = [], [], [], [], [], []
        for k, ex in enumerate(batch):
            ents, rels = ex.sample.path.entities, ex.sample.path.relations
            for t, r in enumerate(rels):
                hop_ex.append(k)
                hop_u.append(ents[0])
                hop_h.append(ents[t])
                hop_next.append(ents[t + 1])
                hop_rel.append(r)
                is_last.append(t == len(rels) - 1)
        hop_ex = np.asarray(hop_ex)
        hop_rel = np.asarray(hop_rel)
        hop_u = torch.from_numpy(np.asarray(hop_u))
        hop_h = torch.from_numpy(np.asarray(hop_h))
        hop_next = np.asarray(hop_next)
        is_last = np.asarray(is_last)
        logp = torch.zeros(n, dtype=torch.float64)
        type_emb = {}
        final_pred = [None] * n
        for r in sorted(set(hop_rel.tolist())):
            sel = np.flatnonzero(hop_rel == r)
            idx = torch.from_numpy(sel)
            pred = self.forward(r, self.emb[hop_u[idx]], self.emb[hop_h[idx]])
            tname = self.tail_type[r]
            if tname not in type_emb:
                type_emb[tname] = self.emb[self.type_members[tname]]
            logits = pred @ type_emb[tname].T
            target = torch.from_numpy(self.position[hop_next[sel]])
            lp = torch.log_softmax(logits, dim=-1).gather(1, target[:, None])[:, 0]
            logp = logp.index_add(0, torch.from_numpy(hop_ex[sel]), lp)
            for row, j in enumerate(sel):
                if is_last[j]:
                    final_pred[hop_ex[j]] = pred[row]
        path = -logp.mean()

        with_neg = [k for k, ex in enumerate(batch) if ex.negatives]
        if not with_neg:
            return path, torch.zeros((), dtype=torch.float64)
        n_max = max(len(batch[k].negatives) for k in with_neg)
        neg = torch.zeros((len(with_neg), n_max), dtype=torch.long)
        mask = torch.zeros((len(with_neg), n_max), dtype=torch.float64)
        pos = torch.tensor([batch[k].sample.path.entities[-1] for k in with_neg])
        for row, k in enumerate(with_neg):
            negs = batch[k].negatives
            neg[row, :len(negs)] = torch.tensor(negs)
            mask[row, :len(negs)] = 1.0
        p = torch.stack([final_pred[k] for k in with_neg])
        pos_score = (self.emb[pos] * p).sum(-1, keepdim=True)
        neg_score = torch.einsum("bnd,bd->bn", self.emb[neg], p)
        diff = pos_score - neg_score
        if self.variant == "logsigmoid":
            term = torch.nn.functional.logsigmoid(diff)
        else:
            term = torch.sigmoid(diff)
        rank = (-(term * mask).sum(-1) / mask.sum(-1)).mean()
        return path, rank

    def write_back(self, model: ReasonerModel):
        model.entity_embeddings = self.emb.detach().numpy().copy()
        model.modules = {r: tuple(w.detach().numpy().copy() for w in ws)
                         for r, ws in self.weights.items()}


def loss_and_gradients(model: ReasonerModel, graph: KnowledgeGraph,
                       batch: Sequence[TrainingExample]) -> tuple[float, dict]:
    """Total loss and its gradient for every parameter tensor.

    Keys are ``"entity_embeddings"`` and ``(relation, k)`` for module weight k.
    """
    state = _TorchState(model, graph)
    path, rank = state.losses(batch)
    loss = path + model.hparams.rank_weight * rank
    loss.backward()
    grads = {"entity_embeddings": state.emb.grad.numpy().copy()}
    for r, ws in state.weights.items():
        for k, w in enumerate(ws):
            grads[(r, k)] = (w.grad.numpy().copy() if w.grad is not None
                             else np.zeros(w.shape))
    return float(loss.detach()), grads


def build_examples(graph: KnowledgeGraph, samples: dict[int, list[PathSample]],
                   n_negatives: int, rng) -> list[TrainingExample]:
    out = []
    for u in sorted(samples):
        for s in samples[u]:
            out.append(TrainingExample(s, sample_negatives(graph, u, n_negatives, rng)))
    return out


def train(graph: KnowledgeGraph, patterns: Sequence[Pattern], samples: dict[int, list[PathSample]],
          hparams: Hyperparams | None = None, seed: int = 0,
          entity_embeddings: np.ndarray | None = None, threads: int = 1,
          model: ReasonerModel | None = None) -> ReasonerModel:
    """Behavior cloning with the pairwise ranking regularizer.

    Negatives are redrawn every epoch. Per-epoch mean losses are kept in
    ``model.history``.
    """
    hparams = hparams or Hyperparams()
    if not any(samples.values()):
        raise ValueError("no training samples")
    torch.set_num_threads(max(1, threads))
    if model is None:
        model = init_model(graph, patterns, hparams, seed, entity_embeddings)
    else:
        model = model.copy()
        model.hparams = hparams
    if hparams.epochs <= 0:
        return model
    missing = {r for ss in samples.values() for s in ss for r in s.path.relations} - set(model.modules)
    if missing:
        raise UnknownRelationError(f"samples use relations without modules: {sorted(missing)}")
    state = _TorchState(model, graph)
    opt = torch.optim.Adam(list(state.parameters()), lr=hparams.lr, foreach=True)
    rng = np.random.default_rng([seed, 1])
    for epoch in range(hparams.epochs):
        examples = build_examples(graph, samples, hparams.negatives, rng)
        order = rng.permutation(len(examples))
        totals = []
        for b, start in enumerate(range(0, len(order), hparams.batch_size)):
            batch = [examples[k] for k in order[start:start + hparams.batch_size]]
            opt.zero_grad()
            path, rank = state.losses(batch)
            loss = path + hparams.rank_weight * rank
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingError(epoch, b, value)
            loss.backward()
            opt.step()
            totals.append((value, float(path.detach()), float(rank.detach()), len(batch)))
        n = sum(t[3] for t in totals)
        rec = {"epoch": epoch,
               "total": sum(t[0] * t[3] for t in totals) / n,
               "path": sum(t[1] * t[3] for t in totals) / n,
               "rank": sum(t[2] * t[3] for t in totals) / n}
        model.history.append(rec)
        logger.info("epoch %d total=%.4f path=%.4f rank=%.4f", epoch, rec["total"], rec["path"], rec["rank"])
    state.write_back(model)
    return model


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(model: ReasonerModel, path, extra: dict | None = None) -> None:
    arrays = {"entity_embeddings": model.entity_embeddings}
    for r, ws in model.modules.items():
        for k, w in enumerate(ws):
            arrays[f"module_{r}_{k}"] = w
    meta = {
        "version": CHECKPOINT_VERSION,
        "dim": model.dim,
        "hparams": asdict(model.hparams),
        "relations": {str(r): n for r, n in model.relation_names.items()},
        "patterns": [[list(p.relations), p.frequency] for p in model.patterns],
        "pattern_fingerprint": model.fingerprint(),
        "graph_fingerprint": model.graph_fingerprint,
        "history": model.history,
        "extra": extra or {},
    }
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> ReasonerModel:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        emb = data["entity_embeddings"].copy()
        modules = {int(r): tuple(data[f"module_{r}_{k}"].copy() for k in range(3))
                   for r in meta["relations"]}
    model = ReasonerModel(emb, modules, Hyperparams(**meta["hparams"]),
                          [Pattern(tuple(p), f) for p, f in meta["patterns"]],
                          {int(r): n for r, n in meta["relations"].items()},
                          meta["graph_fingerprint"], meta["history"], meta["extra"])
    return model


def check_compatible(model: ReasonerModel, graph: KnowledgeGraph, relations=()) -> None:
    """Refuse models built for a different graph or lacking needed modules."""
    if model.graph_fingerprint and model.graph_fingerprint != graph.fingerprint():
        raise GraphError(f"graph fingerprint mismatch: model {model.graph_fingerprint} "
                         f"vs graph {graph.fingerprint()}")
    missing = sorted(set(relations) - set(model.modules))
    if missing:
        raise UnknownRelationError(f"checkpoint lacks modules for relations {missing}")
