import json

import numpy as np
import pytest

from pinode import diffcore as dc
from pinode.cli import main
from pinode.config import DEFAULTS, RunConfig, derive_seed, parse_override
from pinode.datagen import read_csv, write_csv
from pinode.dynamics import PhysicalParams
from pinode.exceptions import InvalidArgument
from tests.oracles import exact_pure_dataset


def test_defaults_follow_identified_values():
    cfg = RunConfig()
    assert cfg.physical == PhysicalParams()
    assert cfg.rig.sample_rate == 50.0
    tc = cfg.train_config
    assert (tc.learning_rate, tc.batch_size) == (1e-3, 128)
    assert cfg.network["layer_sizes"] == [5, 50, 50, 50, 1]
    assert (cfg.evaluation["window"], cfg.evaluation["count"]) == (30, 1000)


def test_precedence_flags_over_file_over_defaults(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("seed = 4\n[training]\nepochs = 7\nbatch_size = 64\n")
    cfg = RunConfig.from_sources(path, ["training.epochs=9"], seed=None)
    assert cfg.data["training"]["epochs"] == 9
    assert cfg.data["training"]["batch_size"] == 64
    assert cfg.seed == 4
    assert RunConfig.from_sources(path, [], seed=11).seed == 11
    assert cfg.data["training"]["learning_rate"] == DEFAULTS["training"]["learning_rate"]


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(InvalidArgument):
        RunConfig({"training": {"epoch": 3}})
    with pytest.raises(InvalidArgument):
        RunConfig.from_sources(None, ["nosuch.key=1"])
    bad = tmp_path / "bad.toml"
    bad.write_text("[training\n")
    with pytest.raises(InvalidArgument):
        RunConfig.from_sources(bad)


def test_override_parsing():
    assert parse_override("network.angle_input=embedded") == {"network": {"angle_input": "embedded"}}
    assert parse_override("network.layer_sizes=[5, 50, 50, 1]") == {"network": {"layer_sizes": [5, 50, 50, 1]}}
    with pytest.raises(InvalidArgument):
        parse_override("epochs")


def test_two_hidden_layer_variant_is_configurable():
    cfg = RunConfig.from_sources(None, ["network.layer_sizes=[5, 50, 50, 1]"])
    assert dc.mlp_param_count(cfg.network["layer_sizes"]) == 2901
    with pytest.raises(InvalidArgument):
        RunConfig.from_sources(None, ["network.angle_input=embedded"])  # width must become 6


def test_stream_seeds_are_distinct_and_stable():
    seeds = [derive_seed(0, s) for s in ("datagen", "init", "train", "evaluation")]
    assert len(set(seeds)) == 4
    assert derive_seed(0, "train") == derive_seed(0, "train") != derive_seed(1, "train")
    assert RunConfig.from_sources(None, ["evaluation.seed=5"]).stream_seed("evaluation") == 5


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_generate_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    code, out, _ = run(capsys, "generate", "--duration", 10, "--out", a)
    assert code == 0 and "Samples      500" in out
    run(capsys, "generate", "--duration", 10, "--out", b)
    assert a.read_bytes() == b.read_bytes()
    assert "config {" in a.read_text()
    run(capsys, "--seed", 3, "generate", "--duration", 10, "--out", b)
    assert a.read_bytes() != b.read_bytes()


def test_generate_rejects_zero_duration(tmp_path, capsys):
    code, _, err = run(capsys, "generate", "--duration", 0, "--out", tmp_path / "d.csv")
    assert code == 2 and "duration" in err


def test_stats_command(tmp_path, capsys):
    path = tmp_path / "d.csv"
    run(capsys, "generate", "--duration", 4, "--out", path)
    code, out, _ = run(capsys, "stats", path, "--out", tmp_path / "s.json")
    assert code == 0 and "Sample rate  50 Hz" in out
    assert json.loads((tmp_path / "s.json").read_text())["samples"] == 200


@pytest.fixture()
def small_dataset(tmp_path, capsys):
    path = tmp_path / "d.csv"
    run(capsys, "generate", "--duration", 20, "--out", path)
    return path


def test_train_zero_epochs_persists_initial_model(tmp_path, capsys, small_dataset):
    model = tmp_path / "m.json"
    code, out, _ = run(capsys, "train", "--data", small_dataset, "--epochs", 0, "--out", model)
    assert code == 0
    expected = dc.mlp_init([5, 50, 50, 50, 1], 10.0, seed=RunConfig().stream_seed("init"))
    assert dc.MLPParams.load(model) == expected
    report = json.loads((tmp_path / "m.train.json").read_text())
    assert report["history"] == [] and report["config"]["seed"] == 0


def test_train_missing_dataset(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--data", tmp_path / "nope.csv", "--out", tmp_path / "m.json")
    assert code == 2 and "not found" in err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exit_code(tmp_path, capsys, small_dataset):
    d = read_csv(small_dataset)
    d.x_dot[5] = 1e308
    bad = tmp_path / "bad.csv"
    write_csv(d, bad)
    code, _, err = run(capsys, "train", "--data", bad, "--epochs", 1, "--out", tmp_path / "m.json")
    assert code == 3 and "numeric failure" in err


def test_fit_baseline_command(tmp_path, capsys):
    p = PhysicalParams()
    path = tmp_path / "pure.csv"
    write_csv(exact_pure_dataset(p, 30.0), path)
    out_json = tmp_path / "b.json"
    code, out, _ = run(capsys, "fit-baseline", "--data", path, "--out", out_json)
    assert code == 0 and "mu_c" in out
    res = json.loads(out_json.read_text())
    assert res["mu_c"] == pytest.approx(0.0408, rel=0.01)
    assert res["mu_p"] == pytest.approx(0.0020, rel=0.01)


def test_fit_baseline_empty_file(tmp_path, capsys):
    empty = tmp_path / "e.csv"
    empty.write_text("")
    code, _, err = run(capsys, "fit-baseline", "--data", empty)
    assert code == 2 and "header" in err


def test_evaluate_is_deterministic(tmp_path, capsys, small_dataset):
    model = tmp_path / "m.json"
    run(capsys, "train", "--data", small_dataset, "--epochs", 1, "--out", model)
    reports = []
    for name in ("r1", "r2"):
        code, out, _ = run(
            capsys, "evaluate", "--data", small_dataset, "--model", model,
            "--set", "evaluation.count=50", "--out", tmp_path / name,
        )
        assert code == 0 and "pinode mu" in out and "pure_ode mu" in out
        reports.append((tmp_path / name / "evaluation.json").read_text())
        assert (tmp_path / name / "errors.csv").exists() and (tmp_path / name / "rollout.csv").exists()
    assert reports[0] == reports[1]
    assert json.loads(reports[0])["models"]["pinode"]["count"] == 50


def test_simulate_command(tmp_path, capsys):
    out = tmp_path / "sim.csv"
    code, _, _ = run(capsys, "simulate", "--steps", 50, "--z0", "0,3.0,0,0", "--out", out)
    assert code == 0
    d = read_csv(out)
    assert len(d) == 51 and d.phi[0] == 3.0
    code, _, _ = run(capsys, "simulate", "--steps", 5, "--z0", "1,2", "--out", out)
    assert code == 2


def test_gradcheck_passes_and_reports_worst_index(tmp_path, capsys):
    report = tmp_path / "g.json"
    code, out, _ = run(capsys, "gradcheck", "--out", report)
    assert code == 0 and "PASS" in out and "at parameter" in out
    doc = json.loads(report.read_text())
    assert doc["max_relative_error"] < 1e-5 and 0 <= doc["worst_index"] < 5451


def test_gradcheck_catches_corrupted_derivative(capsys):
    code, out, _ = run(capsys, "gradcheck", "--corrupt", "relu", "--set", "network.layer_sizes=[5, 8, 8, 1]")
    assert code == 3 and "FAIL" in out


def test_bad_config_file_exit_code(tmp_path, capsys):
    code, _, _ = run(capsys, "--config", tmp_path / "missing.toml", "stats")
    assert code == 2


def test_argparse_errors_exit_two(capsys):
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 2


def test_global_flags_after_command(tmp_path, capsys):
    path = tmp_path / "d.csv"
    code, _, _ = run(capsys, "generate", "--duration", 2, "--seed", 3, "--out", path)
    assert code == 0 and path.exists()
    assert np.isfinite(read_csv(path).x).all()
