import csv
import json

import pytest

from graphcc.cli import main
from graphcc.dataset import load_dataset
from graphcc.experiments import CSV_COLUMNS

FAST = ["--set", "aug.window_len=8", "--set", "model.d=8", "--set", "train.batch_size=8",
        "--set", "train.epochs_pretrain=1", "--set", "train.epochs_probe=2"]


@pytest.fixture()
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


@pytest.fixture()
def small_data(workdir):
    assert main(["generate", "--n", "30", "--sensors", "3", "--length", "32", "--seed", "2", "--out", "d"]) == 0
    return workdir / "d"


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def records(path="runs.jsonl"):
    with open(path) as fh:
        return [json.loads(line) for line in fh]


def test_generate_default_split_sizes(workdir):
    assert main(["generate", "--n", "512", "--sensors", "6", "--length", "128", "--classes", "2",
                 "--seed", "1", "--out", "data"]) == 0
    assert len(load_dataset(workdir / "data/train.gccd")) == 410
    assert len(load_dataset(workdir / "data/test.gccd")) == 102


def test_generate_is_byte_identical(workdir):
    for out in ("a", "b"):
        assert main(["generate", "--n", "20", "--sensors", "3", "--length", "16", "--seed", "5", "--out", out]) == 0
    for name in ("train.gccd", "test.gccd"):
        assert (workdir / "a" / name).read_bytes() == (workdir / "b" / name).read_bytes()


def test_generate_without_out_is_usage_error(workdir, capsys):
    with pytest.raises(SystemExit) as err:
        main(["generate", "--n", "10"])
    assert err.value.code == 2
    assert "--out" in capsys.readouterr().err


def test_generate_invalid_spec_names_field(workdir, capsys):
    assert main(["generate", "--classes", "1", "--out", "x"]) == 3
    assert "num_classes" in capsys.readouterr().err


def test_pretrain_eval_round_trip(small_data, workdir):
    assert main(["pretrain", "--data", "d", "--out", "m.gcck", "--csv", "runs.csv", *FAST]) == 0
    assert main(["eval", "--data", "d", "--checkpoint", "m.gcck", "--csv", "runs.csv", "--report", "r.json"]) == 0
    table = rows("runs.csv")
    assert tuple(table[0].keys()) == CSV_COLUMNS
    assert [r["command"] for r in table] == ["pretrain", "eval"]
    assert float(table[1]["accuracy"]) >= 0 and table[1]["macro_f1"] != ""
    assert table[0]["config_hash"] == table[1]["config_hash"]
    report = json.loads((workdir / "r.json").read_text())
    assert "accuracy" in report and report["config.model.d"] == 8
    log = records()
    assert [r["command"] for r in log] == ["generate", "pretrain", "eval"]
    assert log[2]["metrics"]["accuracy"] == float(table[1]["accuracy"])


def test_eval_is_repeatable(small_data, workdir):
    main(["pretrain", "--data", "d", "--out", "m.gcck", "--seed", "1", *FAST])
    for _ in range(2):
        main(["eval", "--data", "d", "--checkpoint", "m.gcck", "--seed", "1", "--csv", "e.csv"])
    a, b = rows("e.csv")
    assert (a["accuracy"], a["macro_f1"]) == (b["accuracy"], b["macro_f1"])


def test_eval_shape_mismatch_names_both(small_data, workdir, capsys):
    main(["pretrain", "--data", "d", "--out", "m.gcck", *FAST])
    main(["generate", "--n", "30", "--sensors", "4", "--length", "32", "--out", "d4"])
    assert main(["eval", "--data", "d4", "--checkpoint", "m.gcck"]) == 3
    err = capsys.readouterr().err
    assert "N=4" in err and "N=3" in err


def test_bad_config_key_is_validation_error(small_data, capsys):
    assert main(["pretrain", "--data", "d", "--out", "m.gcck", "--set", "model.width=3"]) == 3
    assert "model.width" in capsys.readouterr().err


def test_config_file_and_override(small_data, workdir):
    (workdir / "c.yaml").write_text("model:\n  d: 8\naug.window_len: 8\ntrain:\n  batch_size: 8\n"
                                    "  epochs_pretrain: 1\n")
    assert main(["pretrain", "--data", "d", "--out", "m.gcck", "--config", "c.yaml",
                 "--set", "loss.tau=0.5"]) == 0
    cfg = records()[-1]["config"]
    assert cfg["model.d"] == 8 and cfg["loss.tau"] == 0.5


def test_ablate_rows(small_data):
    assert main(["ablate", "--data", "d", "--csv", "ab.csv", "--repetitions", "1", *FAST]) == 0
    table = rows("ab.csv")
    assert [r["variant_or_param"] for r in table] == [
        "complete", "no-node-aug", "no-edge-aug", "no-gc", "no-nc", "no-mwtc"]
    assert len({r["config_hash"] for r in table}) == 6


def test_ablate_unknown_variant(small_data, capsys):
    assert main(["ablate", "--data", "d", "--csv", "ab.csv", "--variants", "no-gnn"]) == 2
    err = capsys.readouterr().err
    for name in ("no-node-aug", "no-edge-aug", "no-gc", "no-nc", "no-mwtc"):
        assert name in err


def test_sweep_rows_and_plot(small_data, workdir):
    assert main(["sweep", "--data", "d", "--csv", "sw.csv", "--param", "lambda_gc", "--grid", "0,0.5",
                 "--repetitions", "2", "--plot", "sw.svg", *FAST]) == 0
    table = rows("sw.csv")
    assert [(r["value"], r["seed"]) for r in table] == [("0.0", "0"), ("0.0", "1"), ("0.5", "0"), ("0.5", "1")]
    assert (workdir / "sw.svg").read_text().lstrip().startswith("<?xml")


def test_sweep_s_above_n_is_validation_error(small_data, capsys):
    assert main(["sweep", "--data", "d", "--csv", "sw.csv", "--param", "s_weak", "--grid", "4", *FAST]) == 3
    assert "graph.s_weak" in capsys.readouterr().err


def test_gradcheck_command(workdir, capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    for group in ("cnn", "W_g", "summarizer", "heads"):
        assert group in out
    assert "PASS" in out
