"""In-memory end-to-end pipeline: mine, pretrain, train."""
from __future__ import annotations

import logging
from dataclasses import dataclass

from .embeddings import pretrain_embeddings
from .graph import Dataset
from .patterns import Pattern, collect_training_paths, mine_patterns
from .reasoner import Hyperparams, ReasonerModel, train

logger = logging.getLogger(__name__)


@dataclass
class TrainedSystem:
    dataset: Dataset
    patterns: list
    samples: dict
    model: ReasonerModel


def fit(dataset: Dataset, hparams: Hyperparams | None = None, *, max_len: int = 3,
        max_patterns: int = 15, walks_per_pair: int = 10, per_user_cap: int = 50,
        pretrain_epochs: int = 50, seed: int = 0, threads: int = 1,
        patterns: list[Pattern] | None = None) -> TrainedSystem:
    hparams = hparams or Hyperparams()
    g = dataset.graph
    if patterns is None:
        patterns = mine_patterns(g, max_len, max_patterns, walks_per_pair, seed)
    logger.info("mined %d patterns", len(patterns))
    samples = collect_training_paths(g, patterns, per_user_cap, seed)
    emb = pretrain_embeddings(g, hparams.dim, pretrain_epochs, seed)
    model = train(g, patterns, samples, hparams, seed, entity_embeddings=emb, threads=threads)
    return TrainedSystem(dataset, patterns, samples, model)


def sweep(dataset: Dataset, param: str, values, hparams: Hyperparams | None = None,
          settings=None, variant: str = "cafe", system: TrainedSystem | None = None,
          **fit_kwargs) -> list[dict]:
    """Metric series over ``lambda`` (retrains per value) or ``K`` (re-infers).

    The data seed is shared across settings so only the swept value varies.
    """
    from dataclasses import replace

    from .evaluation import EvalSettings, evaluate

    hparams = hparams or Hyperparams()
    settings = settings or EvalSettings()
    if param not in ("lambda", "K"):
        raise ValueError(f"can only sweep 'lambda' or 'K', not {param!r}")
    rows = []
    if param == "K" and system is None:
        system = fit(dataset, hparams, **fit_kwargs)
    for v in values:
        if param == "lambda":
            trained = fit(dataset, replace(hparams, rank_weight=float(v)), **fit_kwargs)
            run_settings = settings
        else:
            trained = system
            run_settings = replace(settings, budget=int(v))
        report = evaluate(trained.model, dataset.graph, dataset.test, trained.samples, variant, run_settings)
        rows.append({"param": param, "value": v, "variant": variant, **report.to_dict()})
        logger.info("sweep %s=%s ndcg=%.3f", param, v, report.ndcg)
    return rows
