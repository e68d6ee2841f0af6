"""Coarse stage: pattern prominence and user profile composition."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graph import KnowledgeGraph
from .patterns import Pattern, PathSample
from .reasoner import ReasonerModel, path_log_prob

UNUSABLE = -math.inf


@dataclass
class UserProfile:
    user: int
    entries: list  # [(Pattern, weight)]
    budget: int = 0
    under_budget: bool = False

    @property
    def total(self) -> int:
        return sum(w for _, w in self.entries)

    def weights(self) -> dict:
        return {p.relations: w for p, w in self.entries}

    def with_user(self, user: int) -> "UserProfile":
        return UserProfile(user, list(self.entries), self.budget, self.under_budget)


def prominence(model: ReasonerModel, graph: KnowledgeGraph, u: int, pattern: Pattern,
               samples: Sequence[PathSample], cap: int = 20) -> float:
    """Mean path log-likelihood of the user's known paths with ``pattern``."""
    for s in samples:
        if s.pattern.relations != pattern.relations:
            raise ValueError(f"sample pattern {s.pattern.relations} != {pattern.relations}")
        if s.user != u:
            raise ValueError(f"sample belongs to user {s.user}, not {u}")
    used = list(samples)[:cap]
    if not used:
        return UNUSABLE
    return float(np.mean([path_log_prob(model, graph, s.path, validate=False) for s in used]))


def pattern_bounds(patterns: Sequence[Pattern], samples: Sequence[PathSample], cap: int = 10) -> list[int]:
    """Per-pattern upper bound: distinct known paths for the user, capped."""
    counts: dict[tuple, set] = {}
    for s in samples:
        counts.setdefault(s.pattern.relations, set()).add(s.path)
    return [min(cap, len(counts.get(p.relations, ()))) for p in patterns]


def compose_profile(u: int, patterns: Sequence[Pattern], values: Sequence[float], budget: int,
                    bounds: Sequence[int]) -> UserProfile:
    """Bounded knapsack with unit item weights, solved greedily.

    Units go to patterns in order of decreasing value (ties: higher global
    frequency, then lower rank) until the budget or all bounds are used up.
    """
    if budget < 0 or any(b < 0 for b in bounds):
        raise ValueError("budget and bounds must be non-negative")
    if not len(patterns) == len(values) == len(bounds):
        raise ValueError("patterns, values and bounds must align")
    order = sorted((j for j in range(len(patterns)) if values[j] != UNUSABLE and bounds[j] > 0),
                   key=lambda j: (-values[j], -patterns[j].frequency, j))
    remaining = budget
    weights = [0] * len(patterns)
    for j in order:
        if remaining == 0:
            break
        take = min(bounds[j], remaining)
        weights[j] = take
        remaining -= take
    entries = [(patterns[j], weights[j]) for j in range(len(patterns)) if weights[j] > 0]
    return UserProfile(u, entries, budget, under_budget=remaining > 0)


def compose_rand(u: int, patterns: Sequence[Pattern], budget: int, seed: int = 0) -> UserProfile:
    """Random subset of patterns with random positive weights summing to the budget."""
    if budget <= 0 or not patterns:
        return UserProfile(u, [], budget, under_budget=budget > 0)
    rng = np.random.default_rng([seed, u])
    m = len(patterns)
    size = int(rng.integers(1, min(m, budget) + 1))
    chosen = np.sort(rng.choice(m, size=size, replace=False))
    weights = np.ones(size, dtype=np.int64)
    weights += rng.multinomial(budget - size, np.full(size, 1.0 / size))
    return UserProfile(u, [(patterns[j], int(w)) for j, w in zip(chosen, weights)], budget)


def compose_prior(patterns: Sequence[Pattern], budget: int) -> UserProfile:
    """Shared profile with weights proportional to global pattern frequency.

    Largest-remainder rounding; patterns rounded to zero are dropped. The
    returned profile has ``user=-1``; use :meth:`UserProfile.with_user`.
    """
    freqs = np.array([max(p.frequency, 0) for p in patterns], dtype=float)
    if budget <= 0 or freqs.sum() == 0:
        return UserProfile(-1, [], budget, under_budget=budget > 0)
    quotas = freqs / freqs.sum() * budget
    weights = np.floor(quotas).astype(int)
    remainder = budget - int(weights.sum())
    frac = quotas - weights
    # ties go to the more frequent, then earlier-ranked pattern
    order = sorted(range(len(patterns)), key=lambda j: (-frac[j], -freqs[j], j))
    for j in order[:remainder]:
        weights[j] += 1
    return UserProfile(-1, [(p, int(w)) for p, w in zip(patterns, weights) if w > 0], budget)


@dataclass
class ProfileInputs:
    """Everything the cafe composer needs for one user."""
    values: list
    bounds: list
    samples: list = field(default_factory=list)


def user_profile_inputs(model: ReasonerModel, graph: KnowledgeGraph, u: int,
                        patterns: Sequence[Pattern], samples: Sequence[PathSample],
                        prominence_cap: int = 20, bound_cap: int = 10) -> ProfileInputs:
    grouped: dict[tuple, list[PathSample]] = {}
    for s in samples:
        grouped.setdefault(s.pattern.relations, []).append(s)
    values = [prominence(model, graph, u, p, grouped.get(p.relations, []), prominence_cap)
              for p in patterns]
    return ProfileInputs(values, pattern_bounds(patterns, samples, bound_cap), list(samples))


def compose_cafe(model: ReasonerModel, graph: KnowledgeGraph, u: int, patterns: Sequence[Pattern],
                 samples: Sequence[PathSample], budget: int = 15, prominence_cap: int = 20,
                 bound_cap: int = 10) -> UserProfile:
    inputs = user_profile_inputs(model, graph, u, patterns, samples, prominence_cap, bound_cap)
    return compose_profile(u, patterns, inputs.values, budget, inputs.bounds)


def format_profile(profile: UserProfile, patterns: Sequence[Pattern], graph: KnowledgeGraph) -> str:
    rank = {p.relations: k for k, p in enumerate(patterns)}
    body = ",".join(f"{rank[p.relations]}:{w}" for p, w in profile.entries)
    return f"{graph.entity_names[profile.user]}\t{body}"


def parse_profile(line: str, patterns: Sequence[Pattern], graph: KnowledgeGraph) -> UserProfile:
    user, _, body = line.rstrip("\n").partition("\t")
    entries = []
    for part in filter(None, body.split(",")):
        rank, _, w = part.partition(":")
        entries.append((patterns[int(rank)], int(w)))
    return UserProfile(graph.entity_id(user), entries, sum(w for _, w in entries))
