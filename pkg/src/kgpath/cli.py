"""Stage-wise command line: generate, mine, pretrain, train, compose, recommend, eval, bench, sweep."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import synthetic
from .config import RunConfig, load_config
from .embeddings import pretrain_embeddings
from .evaluation import VARIANTS, bench, evaluate, make_profile, recommend_for_user, write_csv
from .graph import GraphError, load_dataset
from .patterns import (collect_training_paths, load_patterns, mine_patterns, pattern_set_fingerprint,
                       save_patterns)
from .pipeline import sweep
from .ppr import format_recommendations
from .profiles import format_profile, parse_profile
from .reasoner import (UnknownRelationError, check_compatible, load_checkpoint, save_checkpoint, train)

logger = logging.getLogger("kgpath")


class ArtifactMismatch(RuntimeError):
    """Two artifacts were produced from incompatible inputs."""


def mismatch(what: str, expected: str, found: str):
    return ArtifactMismatch(f"{what} fingerprint mismatch: expected {expected}, found {found}")


# -- artifact helpers --------------------------------------------------------

def read_header(path) -> dict:
    header = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            k, _, v = line[1:].strip().partition("=")
            header[k] = v
    return header


def provenance(cfg: RunConfig, graph, **extra) -> dict:
    return {"config": cfg.config_hash(), "graph": graph.fingerprint(), **extra}


def require_graph(found: str, graph, what: str):
    if found and found != graph.fingerprint():
        raise mismatch(f"graph ({what})", graph.fingerprint(), found)


def load_run_patterns(run: Path, graph):
    path = run / "patterns.tsv"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run 'mine' first")
    patterns, header = load_patterns(path, graph)
    require_graph(header.get("graph", ""), graph, "patterns.tsv")
    return patterns


def load_run_model(run: Path, graph):
    path = run / "model.npz"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run 'train' first")
    model = load_checkpoint(path)
    try:
        check_compatible(model, graph)
    except GraphError:
        raise mismatch("graph (model.npz)", graph.fingerprint(), model.graph_fingerprint) from None
    return model


def training_samples(cfg: RunConfig, graph, patterns):
    return collect_training_paths(graph, patterns, cfg.per_user_cap, cfg.seed)


def target_users(dataset, all_users: bool):
    if all_users:
        return [int(u) for u in dataset.graph.users]
    return sorted({u for u, _ in dataset.test})


# -- commands ----------------------------------------------------------------

def cmd_generate(args, cfg):
    spec = synthetic.SyntheticSpec(n_users=args.n_users, n_items=args.n_items, group_size=args.group_size,
                                   n_related=args.n_related, planted=args.planted.split(","),
                                   groups_per_user=args.groups_per_user, mixture_alpha=args.mixture_alpha,
                                   test_fraction=args.test_fraction, noise_rate=args.noise_rate,
                                   seed=cfg.seed)
    data = synthetic.generate(spec)
    out = Path(args.out)
    synthetic.write_dataset(data, out)
    (out / "spec.json").write_text(json.dumps(synthetic.spec_to_dict(spec), indent=2, sort_keys=True) + "\n")
    stats = data.dataset.graph.stats()
    print(f"wrote {out}: {stats['entities']} entities, {stats['triples']} triples, "
          f"{len(data.dataset.train)} train / {len(data.dataset.test)} test pairs")


def cmd_mine(args, cfg):
    ds = load_dataset(args.data)
    g = ds.graph
    patterns = mine_patterns(g, cfg.max_len, cfg.max_patterns, cfg.walks_per_pair, cfg.seed)
    run = Path(args.run)
    run.mkdir(parents=True, exist_ok=True)
    save_patterns(patterns, g, run / "patterns.tsv",
                  header=provenance(cfg, g, patterns=pattern_set_fingerprint(patterns)))
    for k, p in enumerate(patterns):
        print(f"{k}\t{p.names(g)}\t{p.frequency}")


def cmd_pretrain(args, cfg):
    ds = load_dataset(args.data)
    emb = pretrain_embeddings(ds.graph, cfg.dim, cfg.pretrain_epochs, cfg.seed)
    run = Path(args.run)
    run.mkdir(parents=True, exist_ok=True)
    meta = json.dumps(provenance(cfg, ds.graph, dim=cfg.dim))
    with open(run / "embeddings.npz", "wb") as fh:
        np.savez(fh, embeddings=emb, meta=np.array(meta))
    print(f"wrote {run / 'embeddings.npz'} ({emb.shape[0]} x {emb.shape[1]})")


def load_pretrained(run: Path, graph, dim: int):
    path = run / "embeddings.npz"
    if not path.exists():
        return None
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        emb = data["embeddings"].copy()
    require_graph(meta.get("graph", ""), graph, "embeddings.npz")
    if emb.shape[1] != dim:
        raise ArtifactMismatch(f"embedding dimension {emb.shape[1]} != configured dim {dim}")
    return emb


def cmd_train(args, cfg):
    ds = load_dataset(args.data)
    g = ds.graph
    run = Path(args.run)
    patterns = load_run_patterns(run, g)
    samples = training_samples(cfg, g, patterns)
    emb = None if args.random_init else load_pretrained(run, g, cfg.dim)
    if emb is None and not args.random_init:
        logger.warning("no pretrained embeddings in %s; using random initialization", run)
    t0 = time.perf_counter()
    model = train(g, patterns, samples, cfg.hparams(), cfg.seed, entity_embeddings=emb, threads=cfg.threads)
    save_checkpoint(model, run / "model.npz",
                    extra={"config": cfg.to_dict(), "config_hash": cfg.config_hash(),
                           "train_seconds": time.perf_counter() - t0})
    last = model.history[-1] if model.history else {}
    print(f"wrote {run / 'model.npz'}; final epoch loss {last.get('total', float('nan')):.4f}")


def profiles_path(run: Path, variant: str) -> Path:
    return run / f"profiles-{variant}.tsv"


def cmd_compose(args, cfg):
    ds = load_dataset(args.data)
    g = ds.graph
    run = Path(args.run)
    model = load_run_model(run, g)
    samples = training_samples(cfg, g, model.patterns)
    settings = cfg.eval_settings()
    path = profiles_path(run, cfg.variant)
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in provenance(cfg, g, patterns=model.fingerprint(), variant=cfg.variant).items():
            fh.write(f"# {k}={v}\n")
        for u in target_users(ds, args.all_users):
            prof = make_profile(cfg.variant, model, g, u, model.patterns, samples.get(u, []), settings)
            fh.write(format_profile(prof, model.patterns, g) + "\n")
    print(f"wrote {path}")


def cmd_recommend(args, cfg):
    ds = load_dataset(args.data)
    g = ds.graph
    run = Path(args.run)
    model = load_run_model(run, g)
    path = profiles_path(run, cfg.variant)
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run 'compose' first")
    header = read_header(path)
    require_graph(header.get("graph", ""), g, path.name)
    if header.get("patterns", model.fingerprint()) != model.fingerprint():
        raise mismatch(f"pattern set ({path.name} vs model.npz)", model.fingerprint(), header["patterns"])
    settings = cfg.eval_settings()
    lines = []
    with open(path, encoding="utf-8") as fh:
        profiles = [parse_profile(line, model.patterns, g) for line in fh
                    if line.strip() and not line.startswith("#")]
    needed = {r for prof in profiles for p, _ in prof.entries for r in p.relations}
    try:
        check_compatible(model, g, needed)
    except UnknownRelationError as err:
        raise mismatch(f"pattern set (model lacks modules: {err.args[0]})",
                       header.get("patterns", "?"), model.fingerprint()) from None
    for prof in profiles:
        if not prof.entries:
            continue
        recs = recommend_for_user(model, g, prof.user, prof, settings)
        lines.extend(format_recommendations(g, prof.user, recs))
    out = run / f"recommendations-{cfg.variant}.tsv"
    out.write_text("".join(line + "\n" for line in lines))
    print(f"wrote {out} ({len(lines)} rows)")


def _update_report(run: Path, cfg, g, model, section: str, payload) -> Path:
    path = run / "report.json"
    report = json.loads(path.read_text()) if path.exists() else {}
    if report.get("config_hash") not in (None, cfg.config_hash()):
        logger.warning("report.json came from config %s; overwriting with %s",
                       report.get("config_hash"), cfg.config_hash())
        report = {}
    report.update({"config": cfg.to_dict(), "config_hash": cfg.config_hash(),
                   "graph_fingerprint": g.fingerprint(), "pattern_fingerprint": model.fingerprint()})
    report.setdefault(section, {}).update(payload)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return path


def cmd_eval(args, cfg):
    ds = load_dataset(args.data)
    g = ds.graph
    run = Path(args.run)
    model = load_run_model(run, g)
    samples = training_samples(cfg, g, model.patterns)
    variants = args.variants.split(",") if args.variants else [cfg.variant]
    metrics, timings, per_user = {}, {}, {}
    for v in variants:
        t0 = time.perf_counter()
        rep = evaluate(model, g, ds.test, samples, v, cfg.eval_settings())
        timings[f"eval_{v}_seconds"] = time.perf_counter() - t0
        metrics[v] = rep.to_dict()
        if args.per_user:
            per_user[v] = rep.to_dict(per_user=True)["per_user"]
        print(f"{v}\tndcg={rep.ndcg:.3f}\trecall={rep.recall:.3f}\thr={rep.hr:.3f}\t"
              f"precision={rep.precision:.3f}\tusers={rep.n_users}")
    _update_report(run, cfg, g, model, "metrics", metrics)
    _update_report(run, cfg, g, model, "timings", timings)
    if per_user:
        _update_report(run, cfg, g, model, "per_user", per_user)


def cmd_bench(args, cfg):
    ds = load_dataset(args.data)
    g = ds.graph
    run = Path(args.run)
    model = load_run_model(run, g)
    samples = training_samples(cfg, g, model.patterns)
    settings = cfg.eval_settings()

    def composer(u):
        return make_profile(cfg.variant, model, g, u, model.patterns, samples.get(u, []), settings)

    users = target_users(ds, args.all_users)
    profiles = {u: composer(u) for u in users}
    rows = bench(g, model, profiles, args.n_users, args.n_paths, args.reps, settings,
                 composer=None if args.exclude_composition else composer)
    write_csv(rows, run / "bench.csv")
    _update_report(run, cfg, g, model, "timings", {"bench": rows})
    for row in rows:
        print(f"{row['task']}\t{row['method']}\t{row['mean']:.4f}s +- {row['std']:.4f}")


def cmd_sweep(args, cfg):
    ds = load_dataset(args.data)
    run = Path(args.run)
    run.mkdir(parents=True, exist_ok=True)
    caster = float if args.param == "lambda" else int
    values = [caster(v) for v in args.values.split(",")]
    patterns = load_run_patterns(run, ds.graph) if (run / "patterns.tsv").exists() else None
    rows = sweep(ds, args.param, values, cfg.hparams(), cfg.eval_settings(), cfg.variant,
                 max_len=cfg.max_len, max_patterns=cfg.max_patterns, walks_per_pair=cfg.walks_per_pair,
                 per_user_cap=cfg.per_user_cap, pretrain_epochs=cfg.pretrain_epochs, seed=cfg.seed,
                 threads=cfg.threads, patterns=patterns)
    for row in rows:
        row["config_hash"] = cfg.config_hash()
    out = run / f"sweep-{args.param}.csv"
    write_csv(rows, out)
    for row in rows:
        print(f"{row['param']}={row['value']}\tndcg={row['ndcg']:.3f}\trecall={row['recall']:.3f}")
    print(f"wrote {out}")


# -- parser ------------------------------------------------------------------

def _config_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    group = parent.add_argument_group("run configuration (flag > KGPATH_* env > --config file > default)")
    group.add_argument("--config", help="JSON file with configuration values")
    group.add_argument("-v", "--verbose", action="store_true")
    defaults = RunConfig()
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        kind = {"int": int, "float": float}.get(f.type, str)
        kw = {"choices": VARIANTS} if f.name == "variant" else {}
        group.add_argument(flag, dest=f.name, type=kind, default=None,
                           help=f"default {getattr(defaults, f.name)}", **kw)
    return parent


def build_parser() -> argparse.ArgumentParser:
    parent = _config_parent()
    parser = argparse.ArgumentParser(prog="kgpath", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, data=True, run=True):
        p = sub.add_parser(name, parents=[parent], help=help_)
        if data:
            p.add_argument("--data", required=True, help="dataset directory")
        if run:
            p.add_argument("--run", required=True, help="artifact directory for this run")
        p.set_defaults(func=fn)
        return p

    p = add("generate", cmd_generate, "write a synthetic planted-pattern dataset", data=False, run=False)
    p.add_argument("--out", required=True)
    spec = synthetic.SyntheticSpec()
    p.add_argument("--n-users", type=int, default=spec.n_users)
    p.add_argument("--n-items", type=int, default=spec.n_items)
    p.add_argument("--group-size", type=int, default=spec.group_size)
    p.add_argument("--n-related", type=int, default=spec.n_related)
    p.add_argument("--planted", default=",".join(spec.planted))
    p.add_argument("--groups-per-user", type=int, default=spec.groups_per_user)
    p.add_argument("--mixture-alpha", type=float, default=spec.mixture_alpha)
    p.add_argument("--test-fraction", type=float, default=spec.test_fraction)
    p.add_argument("--noise-rate", type=float, default=spec.noise_rate)

    add("mine", cmd_mine, "mine candidate user-centric patterns")
    add("pretrain", cmd_pretrain, "pretrain translational entity embeddings")
    p = add("train", cmd_train, "train the per-relation reasoning modules")
    p.add_argument("--random-init", action="store_true", help="ignore pretrained embeddings")
    p = add("compose", cmd_compose, "compose user profiles")
    p.add_argument("--all-users", action="store_true", help="all users instead of test users")
    add("recommend", cmd_recommend, "reason over profiles and write recommendations")
    p = add("eval", cmd_eval, "evaluate one or more profile variants into report.json")
    p.add_argument("--variants", help="comma-separated subset of " + ",".join(VARIANTS))
    p.add_argument("--per-user", action="store_true", help="store per-user metrics in report.json")
    p = add("bench", cmd_bench, "time batch vs individual path reasoning")
    p.add_argument("--n-users", type=int, default=1000)
    p.add_argument("--n-paths", type=int, default=10000)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--all-users", action="store_true")
    p.add_argument("--exclude-composition", action="store_true",
                   help="time reasoning only, with profiles composed beforehand")
    p = add("sweep", cmd_sweep, "sweep lambda (retrain) or K (re-infer)")
    p.add_argument("--param", choices=("lambda", "K"), required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, overrides=vars(args))
        args.func(args, cfg)
    except (ArtifactMismatch, GraphError, FileNotFoundError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
