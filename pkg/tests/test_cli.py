import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from sensorfill.cli import (
    EXIT_CONFIG, EXIT_DATA, EXIT_IO, EXIT_OK, EXIT_USAGE, ConfigError, run, validate_config,
)
from sensorfill.field_data import load_csv, write_csv

SMALL = ["--fixed", "s01,s02,s03,s06", "--layers", "4:3:2"]


@pytest.fixture(scope="module")
def small_csv(small_dataset, tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "small.csv"
    write_csv(small_dataset, path)
    return path


@pytest.fixture(scope="module")
def reference_csv(reference_dataset, tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "ref.csv"
    write_csv(reference_dataset.take(np.arange(60)), path)
    return path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# -- validate_config ----------------------------------------------------------------

def test_flag_overrides_file(tmp_path):
    cfg_file = tmp_path / "c.toml"
    cfg_file.write_text('dataset = "x.csv"\niterations = 1000\n')
    cfg = validate_config(cfg_file, {"iterations": 50}, "train")
    assert cfg.iterations == 50
    assert validate_config(cfg_file, {"iterations": None}, "train").iterations == 1000


def test_switch_fraction_range_error_names_key():
    with pytest.raises(ConfigError, match="switch_fraction"):
        validate_config(None, {"dataset": "x.csv", "switch_fraction": 1.5}, "train")


def test_default_k_is_five(tmp_path):
    cfg_file = tmp_path / "c.toml"
    cfg_file.write_text('dataset = "x.csv"\n')
    assert validate_config(cfg_file, {}, "evaluate").k == 5


def test_missing_required_key():
    with pytest.raises(ConfigError, match="'dataset'"):
        validate_config(None, {}, "train")
    with pytest.raises(ConfigError, match="'model'"):
        validate_config(None, {"inputs": "a.csv"}, "predict")


@pytest.mark.parametrize("key,value", [("iterations", "many"), ("k", 1), ("seed", -1),
                                       ("method", "sgd"), ("valid_range", [5, 1]),
                                       ("iterations", 2.5), ("bogus", 1)])
def test_bad_values_name_key(tmp_path, key, value):
    with pytest.raises(ConfigError, match=repr(key)):
        validate_config(None, {"dataset": "x.csv", key: value}, "train")


def test_config_lists_from_toml(tmp_path):
    cfg_file = tmp_path / "c.toml"
    cfg_file.write_text('dataset = "d.csv"\nmethods = ["bfgs"]\npresets = "4:3:2, 4:2:2"\n'
                        "seeds = [1, 2]\nvalid_range = [-10, 40]\n")
    cfg = validate_config(cfg_file, {}, "compare")
    assert cfg.methods == ("bfgs",) and cfg.presets == ("4:3:2", "4:2:2")
    assert cfg.seeds == (1, 2) and cfg.valid_range == (-10.0, 40.0)


def test_missing_config_file():
    with pytest.raises(FileNotFoundError):
        validate_config("/nonexistent/c.toml", {}, "synth")


# -- run: errors -----------------------------------------------------------------------

def test_no_arguments_prints_usage(capsys):
    assert run([]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "usage:" in err and "exit status" in err


def test_module_entry_point_without_arguments():
    proc = subprocess.run([sys.executable, "-m", "sensorfill"], capture_output=True, text=True)
    assert proc.returncode == EXIT_USAGE
    assert "usage:" in proc.stderr


@pytest.mark.parametrize("argv", [["frobnicate"], ["train", "--bogus"], ["train", "--k", "x"]])
def test_usage_errors(argv, capsys):
    assert run(argv) == EXIT_USAGE
    assert capsys.readouterr().err.strip()


def test_help_documents_exit_codes(capsys):
    assert run(["--help"]) == EXIT_OK
    out = capsys.readouterr().out
    for code in range(1, 7):
        assert f"  {code}  " in out


def test_missing_dataset_is_io_error(tmp_path, capsys):
    status = run(["train", "--dataset", str(tmp_path / "none.csv"), "--out-dir", str(tmp_path)])
    assert status == EXIT_IO
    err = capsys.readouterr().err
    assert err.startswith("sensorfill: error:") and err.count("\n") == 1


def test_out_of_range_reading_is_data_error(small_csv, tmp_path, capsys):
    lines = small_csv.read_text().splitlines()
    cells = lines[3].split(",")
    cells[2] = "75.0"
    lines[3] = ",".join(cells)
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(lines) + "\n")
    assert run(["train", "--dataset", str(bad), "--out-dir", str(tmp_path)] + SMALL) == EXIT_DATA
    err = capsys.readouterr().err
    assert "line 4" in err and "s02" in err


def test_config_error_status(small_csv, tmp_path, capsys):
    status = run(["train", "--dataset", str(small_csv), "--switch-fraction", "1.5",
                  "--out-dir", str(tmp_path)])
    assert status == EXIT_CONFIG
    assert "switch_fraction" in capsys.readouterr().err


def test_architecture_mismatch_is_data_error(small_csv, tmp_path):
    assert run(["train", "--dataset", str(small_csv), "--fixed", "s01,s02",
                "--layers", "4:3:2", "--out-dir", str(tmp_path)]) == EXIT_DATA


# -- run: commands ----------------------------------------------------------------------

def test_train_hybrid_trace_labels(small_csv, tmp_path):
    out = tmp_path / "t"
    status = run(["train", "--dataset", str(small_csv), "--method", "hybrid", "--iterations", "1000",
                  "--switch-fraction", "0.1", "--out-dir", str(out)] + SMALL)
    assert status == EXIT_OK
    rows = _rows(out / "trace.csv")
    assert rows[0] == ["iteration", "method", "sse", "elapsed_s"]
    body = rows[1:]
    assert [int(r[0]) for r in body[:3]] == [0, 1, 2]
    assert all(r[1] == "rprop" for r in body[1:101])
    labels = [r[1] for r in body[101:]]
    assert labels and set(labels) == {"bfgs"}
    for name in ("model.json", "predictions.csv", "config.echo"):
        assert (out / name).is_file()


def test_predict_reproduces_train_predictions(small_csv, tmp_path):
    out = tmp_path / "t"
    assert run(["train", "--dataset", str(small_csv), "--iterations", "40", "--out-dir", str(out)]
               + SMALL) == EXIT_OK
    pred = tmp_path / "p"
    assert run(["predict", "--model", str(out / "model.json"), "--inputs", str(small_csv),
                "--out-dir", str(pred)]) == EXIT_OK
    assert (pred / "predictions.csv").read_bytes() == (out / "predictions.csv").read_bytes()


def test_config_echo_reruns_identically(small_csv, tmp_path):
    first = tmp_path / "a"
    assert run(["evaluate", "--dataset", str(small_csv), "--iterations", "20", "--k", "3",
                "--no-timing", "--out-dir", str(first)] + SMALL) == EXIT_OK
    second = tmp_path / "b"
    assert run(["evaluate", "--config", str(first / "config.echo"),
                "--out-dir", str(second)]) == EXIT_OK
    assert (first / "report.json").read_bytes() == (second / "report.json").read_bytes()
    assert (first / "report.csv").read_bytes() == (second / "report.csv").read_bytes()


def test_report_format_flag(small_csv, tmp_path):
    assert run(["evaluate", "--dataset", str(small_csv), "--iterations", "5", "--k", "2",
                "--format", "json", "--out-dir", str(tmp_path)] + SMALL) == EXIT_OK
    assert (tmp_path / "report.json").is_file() and not (tmp_path / "report.csv").exists()
    report = json.loads((tmp_path / "report.json").read_text())
    assert len(report["folds"]) == 2


def test_compare_writes_nine_rows(reference_csv, tmp_path):
    status = run(["compare", "--dataset", str(reference_csv), "--presets",
                  "14:11:9,14:13:12:9,14:13:12:11:9", "--methods", "rprop,bfgs,hybrid",
                  "--iterations", "4", "--k", "2", "--out-dir", str(tmp_path)])
    assert status == EXIT_OK
    rows = _rows(tmp_path / "report.csv")
    assert len(rows) == 10
    cells = {(r[0], r[1]) for r in rows[1:]}
    assert len(cells) == 9
    assert len(json.loads((tmp_path / "report.json").read_text())["rows"]) == 9


def test_synth_writes_loadable_dataset(tmp_path):
    field = tmp_path / "field.toml"
    field.write_text("sensors = 4\nsamples = 30\nnoise_sd = 0.0\nseed = 1\n"
                     "positions = [[0, 0], [1, 0], [0, 1], [1, 1]]\n"
                     "[[basis]]\ncenter = [0.5, 0.5]\nweight = 3.0\nlength_scale = 0.3\n"
                     "period = 7200.0\nphase = 0.0\n")
    assert run(["synth", "--field", str(field), "--out-dir", str(tmp_path)]) == EXIT_OK
    d = load_csv(tmp_path / "dataset.csv")
    assert (d.n_samples, d.n_sensors) == (30, 4)
    echo = (tmp_path / "config.echo").read_text()
    assert 'command = "synth"' in echo
