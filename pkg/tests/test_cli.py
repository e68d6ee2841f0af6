import csv
import json
import shutil

import pytest

from kgpath.cli import main, read_header
from kgpath.config import RunConfig, load_config
from kgpath.reasoner import load_checkpoint, save_checkpoint

SMALL = ["--dim", "8", "--hidden", "16", "--epochs", "2", "--pretrain-epochs", "2", "--budget", "6"]
GEN = ["--n-users", "20", "--n-items", "30", "--n-related", "50"]


def run_cli(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, run = root / "data", root / "run"
    assert run_cli("generate", "--out", data, "--seed", 0, *GEN) == 0
    for stage in ("mine", "pretrain", "train"):
        assert run_cli(stage, "--data", data, "--run", run, *SMALL) == 0
    for variant in ("cafe", "prior", "rand"):
        assert run_cli("compose", "--data", data, "--run", run, "--variant", variant, *SMALL) == 0
    assert run_cli("recommend", "--data", data, "--run", run, *SMALL) == 0
    assert run_cli("eval", "--data", data, "--run", run, "--variants", "cafe,prior,rand", "--per-user",
                   *SMALL) == 0
    return root, data, run


def test_generate_writes_dataset_and_spec(workspace):
    _, data, _ = workspace
    names = {p.name for p in data.iterdir()}
    assert {"entities.tsv", "relations.tsv", "triples.tsv", "train.tsv", "test.tsv", "spec.json"} <= names
    assert json.loads((data / "spec.json").read_text())["n_users"] == 20


def test_stage_artifacts_carry_provenance(workspace):
    _, _, run = workspace
    for name in ("patterns.tsv", "profiles-cafe.tsv", "profiles-rand.tsv"):
        header = read_header(run / name)
        assert {"config", "graph", "patterns"} <= set(header)
    assert read_header(run / "patterns.tsv")["patterns"] == read_header(run / "profiles-cafe.tsv")["patterns"]
    extra = load_checkpoint(run / "model.npz").extra
    assert extra["config"]["dim"] == 8 and extra["config_hash"] == read_header(run / "patterns.tsv")["config"]


def test_recommendations_file_format(workspace):
    _, _, run = workspace
    rows = (run / "recommendations-cafe.tsv").read_text().splitlines()
    assert rows
    for line in rows:
        user, rank, item, score, path = line.split("\t")
        assert 1 <= int(rank) <= 10
        float(score)
        assert path.startswith(user) and path.endswith(item) and "-[" in path


def test_report_has_three_variants_on_the_same_users(workspace):
    _, _, run = workspace
    report = json.loads((run / "report.json").read_text())
    assert set(report["metrics"]) == {"cafe", "prior", "rand"}
    assert len({report["metrics"][v]["n_users"] for v in report["metrics"]}) == 1
    assert len({frozenset(report["per_user"][v]) for v in report["per_user"]}) == 1
    assert report["config_hash"] == RunConfig(dim=8, hidden=16, epochs=2, pretrain_epochs=2,
                                              budget=6).config_hash()
    for key in ("graph_fingerprint", "pattern_fingerprint", "timings", "config"):
        assert key in report
    for m in report["metrics"].values():
        assert 0.0 <= m["ndcg"] <= 100.0 and 0.0 <= m["recall"] <= 100.0


def test_bench_and_sweep_write_csv(workspace):
    _, data, run = workspace
    assert run_cli("bench", "--data", data, "--run", run, "--n-users", 5, "--n-paths", 20, "--reps", 1,
                   *SMALL) == 0
    with open(run / "bench.csv") as fh:
        rows = list(csv.DictReader(fh))
    pairs = {(r["task"], r["method"]) for r in rows}
    assert pairs == {(t, m) for t in ("rec", "find") for m in ("ppr", "individual")}
    assert run_cli("sweep", "--data", data, "--run", run, "--param", "K", "--values", "3,6", *SMALL) == 0
    with open(run / "sweep-K.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["value"] for r in rows] == ["3", "6"]


def test_refuses_model_from_another_graph(workspace, tmp_path, capsys):
    _, _, run = workspace
    other = tmp_path / "other"
    assert run_cli("generate", "--out", other, "--seed", 5, *GEN) == 0
    capsys.readouterr()
    assert run_cli("recommend", "--data", other, "--run", run, *SMALL) == 2
    err = capsys.readouterr().err
    model_fp = load_checkpoint(run / "model.npz").graph_fingerprint
    assert "mismatch" in err and model_fp in err
    from kgpath.graph import load_dataset
    assert load_dataset(other).graph.fingerprint() in err


def test_refuses_checkpoint_missing_a_module(workspace, tmp_path, capsys):
    _, data, run = workspace
    broken = tmp_path / "broken"
    broken.mkdir()
    shutil.copy(run / "profiles-cafe.tsv", broken)
    model = load_checkpoint(run / "model.npz")
    used = model.patterns[0].relations[0]
    del model.modules[used]
    del model.relation_names[used]
    save_checkpoint(model, broken / "model.npz")
    assert run_cli("recommend", "--data", data, "--run", broken, *SMALL) == 2
    assert "lacks modules" in capsys.readouterr().err


def test_missing_artifact_is_reported(tmp_path, workspace, capsys):
    _, data, _ = workspace
    assert run_cli("train", "--data", data, "--run", tmp_path / "empty") == 2
    assert "run 'mine' first" in capsys.readouterr().err


def test_config_precedence(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"epochs": 3, "dim": 16, "lr": 0.01}))
    env = {"KGPATH_EPOCHS": "4", "KGPATH_BUDGET": "9"}
    cfg = load_config(path, env=env, overrides={"epochs": 5, "dim": None})
    assert (cfg.epochs, cfg.dim, cfg.lr, cfg.budget, cfg.hidden) == (5, 16, 0.01, 9, 256)
    assert load_config(path, env=env).epochs == 4
    assert load_config(path, env={}).epochs == 3
    assert load_config(env={}) == RunConfig()
    assert load_config(env={}).config_hash() == RunConfig().config_hash()
    assert cfg.config_hash() != RunConfig().config_hash()


def test_config_rejects_bad_values(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"epoch": 3}))
    with pytest.raises(ValueError):
        load_config(path, env={})
    with pytest.raises(ValueError):
        load_config(env={"KGPATH_VARIANT": "best"})


def test_default_config_values():
    cfg = RunConfig()
    hp, es = cfg.hparams(), cfg.eval_settings()
    assert (hp.dim, hp.rank_weight, hp.lr, hp.batch_size, hp.epochs, hp.negatives) == (100, 10.0, 1e-4, 128,
                                                                                          20, 5)
    assert (cfg.max_len, cfg.max_patterns, es.budget, es.top_n) == (3, 15, 15, 10)
