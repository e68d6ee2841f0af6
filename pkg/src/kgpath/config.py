"""Run configuration with flag > environment > file > default precedence."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Mapping

from .evaluation import VARIANTS, EvalSettings
from .reasoner import Hyperparams

ENV_PREFIX = "KGPATH_"


@dataclass
class RunConfig:
    dim: int = 100
    hidden: int = 256
    max_len: int = 3
    max_patterns: int = 15
    budget: int = 15
    rank_weight: float = 10.0
    lr: float = 1e-4
    batch_size: int = 128
    epochs: int = 20
    negatives: int = 5
    rank_loss: str = "sigmoid"
    walks_per_pair: int = 10
    per_user_cap: int = 50
    prominence_cap: int = 20
    bound_cap: int = 10
    pretrain_epochs: int = 50
    top_n: int = 10
    seed: int = 0
    threads: int = 1
    variant: str = "cafe"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.max_len < 1 or self.budget < 0 or self.threads < 1:
            raise ValueError("max_len >= 1, budget >= 0 and threads >= 1 are required")

    def hparams(self) -> Hyperparams:
        return Hyperparams(dim=self.dim, hidden=self.hidden, rank_weight=self.rank_weight, lr=self.lr,
                           batch_size=self.batch_size, epochs=self.epochs, negatives=self.negatives,
                           rank_loss=self.rank_loss)

    def eval_settings(self) -> EvalSettings:
        return EvalSettings(budget=self.budget, top_n=self.top_n, prominence_cap=self.prominence_cap,
                            bound_cap=self.bound_cap, seed=self.seed, threads=self.threads)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, value):
    kind = FIELD_TYPES[name]
    if kind == "int":
        return int(value)
    if kind == "float":
        return float(value)
    return str(value)


def load_config(path=None, env: Mapping[str, str] | None = None, overrides: Mapping | None = None) -> RunConfig:
    """Merge defaults, a JSON file, ``KGPATH_*`` variables and explicit overrides.

    Later sources win. ``None`` values in ``overrides`` are ignored so an
    argparse namespace with unset flags can be passed straight through.
    """
    values: dict = {}
    if path is not None:
        data = json.loads(Path(path).read_text())
        unknown = set(data) - set(FIELD_TYPES)
        if unknown:
            raise ValueError(f"unknown config keys in {path}: {sorted(unknown)}")
        values.update({k: _coerce(k, v) for k, v in data.items()})
    env = os.environ if env is None else env
    for name in FIELD_TYPES:
        key = ENV_PREFIX + name.upper()
        if key in env:
            values[name] = _coerce(name, env[key])
    for name, v in (overrides or {}).items():
        if name in FIELD_TYPES and v is not None:
            values[name] = _coerce(name, v)
    return RunConfig(**values)
