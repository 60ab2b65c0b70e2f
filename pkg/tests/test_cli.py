import json

import pytest

from streamrec.cli import (
    ConfigError,
    RunSpec,
    build_spec,
    improvement,
    load_config,
    main,
    parse_config_text,
    report,
    run_experiment,
    serialize,
)
from streamrec.core import ExperimentConfig

SMALL = "synthetic:num_users=30,num_items=180,n=900,seed=4"
FAST = {"model": "GMF", "d": "8", "lr": "0.01", "o": "2", "n_r": "150", "train_fraction": "0.7"}


def spec_of(tmp_path, **extra):
    return build_spec({**FAST, "dataset": SMALL, "out": str(tmp_path / "runs"), **extra})


def write_cfg(tmp_path, text, name="exp.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


# -- configuration -----------------------------------------------------------

def test_empty_config_gives_defaults(tmp_path):
    spec = load_config(write_cfg(tmp_path, ""))
    assert spec == RunSpec()
    c = spec.config
    assert (c.alpha, c.lambda_new, c.lambda_res) == (0.5, 1.02, 1.005)
    assert (c.batch_size, c.n_p, c.num_models, c.memory_top_e, c.embedding_dim) == (256, 256, 8, 10, 16)
    assert (c.learning_rate, c.l2_weight, c.negative_ratio) == (0.001, 1e-6, 4)
    assert (c.reservoir_capacity, c.eval_negatives, c.top_k, c.train_fraction) == (10000, 99, 10, 0.9)


def test_invalid_alpha_names_field_and_bound(tmp_path):
    with pytest.raises(ConfigError, match=r"alpha ∈ \[0,1\]"):
        load_config(write_cfg(tmp_path, "[sampling]\nalpha = 1.5\n"))


def test_lr_key(tmp_path):
    spec = load_config(write_cfg(tmp_path, "[model]\nlr = 0.001\n"))
    assert spec.config.learning_rate == 0.001


def test_sections_and_aliases(tmp_path):
    text = "bs = 64\n[model]\nmodel = MLP\nmlp_layer_widths = 32,16,8,4\n[ensemble]\nfuser = AdaW\ne = 5\n"
    spec = load_config(write_cfg(tmp_path, text))
    assert spec.config.batch_size == 64
    assert spec.config.model_kind == "MLP"
    assert spec.config.mlp_layer_widths == (32, 16, 8, 4)
    assert (spec.config.fuser_kind, spec.config.memory_top_e) == ("AdaW", 5)


def test_unknown_key_named(tmp_path):
    path = write_cfg(tmp_path, "[model]\nlearning_rat = 0.1\n")
    with pytest.raises(ConfigError, match="learning_rat") as info:
        load_config(path)
    assert "exp.ini" in str(info.value)


def test_bad_value_named(tmp_path):
    with pytest.raises(ConfigError, match="batch_size"):
        load_config(write_cfg(tmp_path, "bs = lots\n"))


def test_missing_config_file_named(tmp_path):
    with pytest.raises(ConfigError, match="nope.ini"):
        load_config(tmp_path / "nope.ini")


def test_duplicate_key_named(tmp_path):
    with pytest.raises(ConfigError, match="alpha"):
        load_config(write_cfg(tmp_path, "[sampling]\nalpha = 0.1\n[stream]\nalpha = 0.2\n"))


def test_repeats_must_be_positive():
    with pytest.raises(ConfigError, match="repeats"):
        build_spec({"repeats": "0"})


@pytest.mark.parametrize("values", [
    {},
    {"alpha": "0.25", "o": "3", "fuser": "AVG", "sampler": "SW", "window": "40"},
    {"mlp_layer_widths": "32,16,8", "lr": "0.0003", "dataset": "x.dat", "label": "abc", "repeats": "3"},
])
def test_config_round_trip(tmp_path, values):
    spec = build_spec(values)
    again = load_config(write_cfg(tmp_path, serialize(spec)))
    assert again == spec
    assert serialize(again) == serialize(spec)


def test_parse_config_text_flattens_sections():
    assert parse_config_text("a = 1\n[x]\nb = 2\n") == {"a": "1", "b": "2"}


# -- running -----------------------------------------------------------------

def test_run_writes_artifacts(tmp_path):
    spec = spec_of(tmp_path, label="base")
    assert run_experiment(spec) == 0
    run_dir = tmp_path / "runs" / "base"
    manifest = (run_dir / "MANIFEST").read_text()
    assert "status: ok" in manifest
    rows = (run_dir / "iterations.csv").read_text().splitlines()
    assert rows[0] == ("iteration,n_seen,hr10_fused,ndcg10_fused,hr10_model_0,hr10_model_1,"
                       "wall_ms_test,wall_ms_train")
    summary = json.loads((run_dir / "summary.json").read_text())
    assert summary["dataset"]["test"] == int(rows[-1].split(",")[1])
    assert 0.0 <= summary["ndcg@10"] <= summary["hr@10"] <= 1.0
    assert load_config(run_dir / "config.ini") == spec


def test_identical_specs_give_byte_identical_csvs(tmp_path):
    for label in ("a", "b"):
        spec = spec_of(tmp_path, label=label)
        spec = type(spec)(**{**spec.__dict__, "record_timing": False})
        assert run_experiment(spec) == 0
    a = (tmp_path / "runs" / "a" / "iterations.csv").read_bytes()
    b = (tmp_path / "runs" / "b" / "iterations.csv").read_bytes()
    assert a == b


def test_repeats_write_per_seed_runs_and_median(tmp_path):
    spec = spec_of(tmp_path, label="rep", repeats="3", seed="5")
    assert run_experiment(spec) == 0
    root = tmp_path / "runs" / "rep"
    hrs = [json.loads((root / f"seed_{s}" / "summary.json").read_text())["hr@10"] for s in (5, 6, 7)]
    med = json.loads((root / "summary.json").read_text())
    assert med["seeds"] == [5, 6, 7]
    assert med["hr@10"] == sorted(hrs)[1]


def test_failure_leaves_manifest(tmp_path):
    data = tmp_path / "tiny.dat"
    # only 30 items: too few for 99 evaluation negatives
    data.write_text("".join(f"{u}\t{i}\t1\t{u * 100 + i}\n" for u in range(3) for i in range(30)))
    spec = build_spec({**FAST, "dataset": str(data), "out": str(tmp_path / "runs"), "label": "bad"})
    assert run_experiment(spec) == 1
    manifest = (tmp_path / "runs" / "bad" / "MANIFEST").read_text()
    assert "status: failed" in manifest
    assert "stage: prequential" in manifest
    assert "unseen items" in manifest
    assert (tmp_path / "runs" / "bad" / "config.ini").exists()


def test_missing_dataset_fails(tmp_path):
    spec = build_spec({"dataset": str(tmp_path / "absent.dat"), "out": str(tmp_path / "runs")})
    assert run_experiment(spec) == 1
    assert "stage: ingest" in (tmp_path / "runs" / "run" / "MANIFEST").read_text()


def test_no_dataset_is_an_error(tmp_path):
    assert run_experiment(build_spec({"out": str(tmp_path)})) == 2


# -- reporting ---------------------------------------------------------------

def _fake_run(tmp_path, label, hr, ndcg):
    d = tmp_path / label
    d.mkdir()
    (d / "summary.json").write_text(json.dumps({"label": label, "hr@10": hr, "ndcg@10": ndcg}))
    return d


def test_improvement_examples():
    assert improvement(0.60, 0.50) == "+20.0%"
    assert improvement(0.45, 0.50) == "-10.0%"
    assert improvement(0.3, 0.0) == "n/a"


def test_report_two_runs(tmp_path):
    dirs = [_fake_run(tmp_path, "ours", 0.60, 0.33), _fake_run(tmp_path, "base", 0.50, 0.30)]
    text, table = report(dirs)
    assert "+20.0%" in text
    assert table.splitlines()[0] == "run,HR@10,NDCG@10,HR impr,NDCG impr"
    assert table.splitlines()[2] == "base,0.5000,0.3000,+20.0%,+10.0%"


def test_report_single_run_has_no_improvement(tmp_path):
    text, table = report([_fake_run(tmp_path, "only", 0.4, 0.2)])
    assert "impr" not in text
    assert table.splitlines() == ["run,HR@10,NDCG@10", "only,0.4000,0.2000"]


def test_report_missing_summary_names_directory(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(FileNotFoundError, match="empty"):
        report([tmp_path / "empty"])


# -- entry point -------------------------------------------------------------

def test_main_run_and_report(tmp_path, capsys):
    out = str(tmp_path / "runs")
    args = ["--dataset", SMALL, "--out", out, "--no-timing", *(f"{k}={v}" for k, v in FAST.items())]
    assert main(["run", "--label", "ael", *args]) == 0
    assert main(["run", "--label", "avg", *args, "fuser=AVG"]) == 0
    assert main(["report", f"{out}/ael", f"{out}/avg", "--csv", str(tmp_path / "t.csv")]) == 0
    assert "ael" in capsys.readouterr().out
    assert (tmp_path / "t.csv").read_text().startswith("run,HR@10")


def test_main_sweep(tmp_path):
    out = tmp_path / "runs"
    args = ["--dataset", SMALL, "--out", str(out), "--label", "sw", *(f"{k}={v}" for k, v in FAST.items())]
    assert main(["sweep", "--grid", "n_r=100,200", "--grid", "fuser=AVG,AEL", *args]) == 0
    done = sorted(p.parent.name for p in out.glob("sw/*/summary.json"))
    assert done == ["n_r=100,fuser=AEL", "n_r=100,fuser=AVG", "n_r=200,fuser=AEL", "n_r=200,fuser=AVG"]


def test_main_ingest_and_defaults(tmp_path, capsys):
    cache = tmp_path / "s.cache"
    assert main(["ingest", "--dataset", SMALL, "--out", str(cache)]) == 0
    assert cache.exists()
    assert main(["defaults"]) == 0
    printed = capsys.readouterr().out
    assert "learning_rate = 0.001" in printed
    assert load_config(write_cfg(tmp_path, printed.split("\n", 1)[1])) == RunSpec()


@pytest.mark.parametrize("argv, needle", [
    (["run", "--dataset", "x", "bogus=1"], "bogus"),
    (["run", "--dataset", "x", "alpha=2"], "alpha"),
    (["run", "--config", "missing.ini"], "missing.ini"),
    (["sweep", "--dataset", "x", "--grid", "nokey=1,2"], "nokey"),
    (["report", "no_such_run"], "no_such_run"),
])
def test_main_errors_name_the_culprit(argv, needle, capsys):
    assert main(argv) == 2
    assert needle in capsys.readouterr().err


def test_default_config_matches_dataclass():
    assert RunSpec().config == ExperimentConfig()
