"""Experiment drivers: profile-variant evaluation, unseen patterns, timing, sweeps."""
from __future__ import annotations

import csv
import logging
import math
import platform
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .graph import KnowledgeGraph
from .metrics import macro_average, metrics_at_k
from .patterns import Pattern, PathSample
from .ppr import Counters, build_layout_tree, individual_reason, ppr, recommend
from .profiles import UserProfile, compose_cafe, compose_prior, compose_rand
from .reasoner import ReasonerModel

logger = logging.getLogger(__name__)

VARIANTS = ("cafe", "rand", "prior")
METRIC_NAMES = ("ndcg", "recall", "hr", "precision")


@dataclass
class EvalSettings:
    budget: int = 15
    top_n: int = 10
    prominence_cap: int = 20
    bound_cap: int = 10
    seed: int = 0
    threads: int = 1


@dataclass
class MetricsReport:
    ndcg: float
    recall: float
    hr: float
    precision: float
    n_users: int
    config: dict = field(default_factory=dict)
    per_user: dict = field(default_factory=dict)

    def as_tuple(self):
        return (self.ndcg, self.recall, self.hr, self.precision)

    def to_dict(self, per_user: bool = False) -> dict:
        out = {k: getattr(self, k) for k in METRIC_NAMES}
        out["n_users"] = self.n_users
        if per_user:
            out["per_user"] = {str(u): list(m) for u, m in self.per_user.items()}
        return out


def make_profile(variant: str, model: ReasonerModel, graph: KnowledgeGraph, u: int,
                 patterns: Sequence[Pattern], samples: Sequence[PathSample],
                 settings: EvalSettings) -> UserProfile:
    if variant == "cafe":
        return compose_cafe(model, graph, u, patterns, samples, settings.budget,
                            settings.prominence_cap, settings.bound_cap)
    if variant == "rand":
        return compose_rand(u, patterns, settings.budget, settings.seed)
    if variant == "prior":
        return compose_prior(patterns, settings.budget).with_user(u)
    raise ValueError(f"unknown profile variant {variant!r}")


def recommend_for_user(model, graph, u, profile, settings, method=ppr, counters=None):
    if not profile.entries:
        return []
    tree = build_layout_tree(profile)
    train_items = graph.interacted_items(u)
    paths = method(graph, model, u, tree, exclude=train_items, counters=counters)
    return recommend(graph, model, u, paths, settings.top_n, exclude_train=True)


def _map_users(fn, users, threads):
    if threads <= 1:
        return [fn(u) for u in users]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, users))


def evaluate(model: ReasonerModel, graph: KnowledgeGraph, test_pairs, samples: dict,
             variant: str = "cafe", settings: EvalSettings | None = None,
             patterns: Sequence[Pattern] | None = None,
             pattern_filter: Callable[[int, Sequence[Pattern]], Sequence[Pattern]] | None = None,
             keep_recommendations: bool = False) -> MetricsReport:
    """Compose profiles, reason, recommend and score every test user."""
    settings = settings or EvalSettings()
    if variant not in VARIANTS:
        raise ValueError(f"unknown profile variant {variant!r}")
    patterns = list(model.patterns if patterns is None else patterns)
    relevant: dict[int, set] = {}
    for u, i in test_pairs:
        relevant.setdefault(int(u), set()).add(int(i))
    users = sorted(relevant)

    def run(u):
        pats = pattern_filter(u, patterns) if pattern_filter else patterns
        profile = make_profile(variant, model, graph, u, pats, samples.get(u, []), settings)
        recs = recommend_for_user(model, graph, u, profile, settings)
        return recs, metrics_at_k([r.item for r in recs], relevant[u], settings.top_n)

    results = _map_users(run, users, settings.threads)
    per_user = {u: m for u, (_, m) in zip(users, results)}
    avg = macro_average(per_user.values())
    report = MetricsReport(*avg, n_users=len(users),
                           config={"variant": variant, **asdict(settings)}, per_user=per_user)
    if keep_recommendations:
        report.recommendations = {u: recs for u, (recs, _) in zip(users, results)}
    return report


def keep_fraction_filter(keep_fraction: float, seed: int):
    """Per-user random subset of ``round(keep_fraction * M)`` candidate patterns."""
    def pick(u, patterns):
        m = len(patterns)
        n = min(m, max(0, math.floor(keep_fraction * m + 0.5)))
        if n == m:
            return list(patterns)
        rng = np.random.default_rng([seed, u, 11])
        keep = np.sort(rng.choice(m, size=n, replace=False))
        return [patterns[k] for k in keep]
    return pick


def relative_decrease(full: MetricsReport, reduced: MetricsReport) -> dict:
    out = {}
    for name in METRIC_NAMES:
        a, b = getattr(full, name), getattr(reduced, name)
        out[name] = (a - b) / a if a > 0 else 0.0
    return out


def unseen_pattern_eval(model, graph, test_pairs, samples, keep_fraction: float = 0.7,
                        seed: int = 0, settings: EvalSettings | None = None):
    settings = settings or EvalSettings(seed=seed)
    full = evaluate(model, graph, test_pairs, samples, "cafe", settings)
    reduced = evaluate(model, graph, test_pairs, samples, "cafe", settings,
                       pattern_filter=keep_fraction_filter(keep_fraction, seed))
    return full, reduced, relative_decrease(full, reduced)


# -- timing ------------------------------------------------------------------

def machine_fingerprint(threads: int = 1) -> dict:
    return {"platform": platform.platform(), "processor": platform.processor() or platform.machine(),
            "python": platform.python_version(), "threads": threads}


def _timed(fn, reps):
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return times


def bench(graph: KnowledgeGraph, model: ReasonerModel, profiles: dict, n_users: int = 1000,
          n_paths: int = 10000, reps: int = 5, settings: EvalSettings | None = None,
          composer: Callable[[int], UserProfile] | None = None) -> list[dict]:
    """Wall-clock of batch (ppr) vs path-by-path reasoning.

    ``profiles`` maps user -> precomputed profile; users are cycled until
    ``n_users`` recommendations (task ``rec``) or ``n_paths`` paths (task
    ``find``) are produced. With ``composer``, the ``rec`` task recomposes
    each profile inside the timed region.
    """
    settings = settings or EvalSettings()
    users = [u for u in sorted(profiles) if profiles[u].entries]
    if n_users <= 0 or not users:
        return []
    trees = {u: build_layout_tree(profiles[u]) for u in users}
    excl = {u: graph.interacted_items(u) for u in users}
    rows = []
    methods = {"ppr": ppr, "individual": individual_reason}
    for name, method in methods.items():
        counters = Counters()

        def rec_task():
            for k in range(n_users):
                u = users[k % len(users)]
                tree = build_layout_tree(composer(u)) if composer else trees[u]
                paths = method(graph, model, u, tree, exclude=excl[u], counters=counters)
                recommend(graph, model, u, paths, settings.top_n)

        def find_task():
            total, k = 0, 0
            while total < n_paths:
                u = users[k % len(users)]
                got = len(method(graph, model, u, trees[u], exclude=excl[u]))
                if got == 0 and k >= len(users) and total == 0:
                    break
                total += got
                k += 1

        for task, fn in (("rec", rec_task), ("find", find_task)):
            times = _timed(fn, reps)
            rows.append({"task": task, "method": name, "mean": statistics.fmean(times),
                         "std": statistics.stdev(times) if len(times) > 1 else 0.0,
                         "reps": reps, "with_composition": bool(composer and task == "rec"),
                         "forward_calls": counters.forward // reps if task == "rec" else None,
                         **machine_fingerprint(settings.threads)})
            counters.forward = 0
    return rows


def count_forward_calls(graph, model, profiles: dict) -> dict:
    out = {}
    for name, method in (("ppr", ppr), ("individual", individual_reason)):
        c = Counters()
        for u in sorted(profiles):
            if profiles[u].entries:
                method(graph, model, u, build_layout_tree(profiles[u]),
                       exclude=graph.interacted_items(u), counters=c)
        out[name] = c.forward
    return out


# -- sweeps ------------------------------------------------------------------

def write_csv(rows: Sequence[dict], path) -> None:
    if not rows:
        open(path, "w").close()
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
