import json

import pytest

from gptorque import NumericalError, cli

QUICK_CONFIG = {
    "disturbance": {"kind": "sine_abs"},
    "training": {"m": 60},
    "gp": {"restarts": 2, "max_iter": 25},
    "trajectory": {"duration": 2.0},
    "analysis": {"n_domain_samples": 200, "rkhs_norms": [8.0, 4.0]},
    "seed": 3,
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Config file plus a trained model, shared by the command tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(dict(QUICK_CONFIG, output_dir=str(root / "train"))))
    rc = cli.main(["train", "--config", str(cfg_path)])
    assert rc == 0
    return {
        "root": root,
        "config": cfg_path,
        "model": root / "train" / "model.json",
    }


def test_train_outputs(workspace):
    assert workspace["model"].is_file()
    report = json.loads((workspace["root"] / "train" / "train_report.json").read_text())
    assert report["sample_count"] == 60
    assert len(report["outputs"]) == 2
    for entry in report["outputs"]:
        assert entry["final_log_likelihood"] >= entry["initial_log_likelihood"]
    assert len(report["info_gains"]) == 2
    assert report["beta"] is not None and all(b > 0 for b in report["beta"])


def test_simulate_compare(workspace, tmp_path):
    rc = cli.main([
        "simulate", "--config", str(workspace["config"]),
        "--model", str(workspace["model"]), "--out", str(tmp_path),
    ])
    assert rc == 0
    for name in (
        "trace_static.csv", "trace_adaptive.csv",
        "phase_static.csv", "phase_adaptive.csv", "metrics.json",
    ):
        assert (tmp_path / name).is_file()
    payload = json.loads((tmp_path / "metrics.json").read_text())
    assert set(payload) == {"static", "adaptive", "constants_report"}
    assert payload["static"]["rms_error"] > 0.0


def test_simulate_static_without_model(workspace, tmp_path):
    rc = cli.main([
        "simulate", "--config", str(workspace["config"]),
        "--mode", "static", "--out", str(tmp_path),
    ])
    assert rc == 0
    assert (tmp_path / "trace_static.csv").is_file()
    payload = json.loads((tmp_path / "metrics.json").read_text())
    assert "static" in payload and "constants_report" not in payload


def test_analyze(workspace, tmp_path):
    rc = cli.main([
        "analyze", "--config", str(workspace["config"]),
        "--model", str(workspace["model"]), "--out", str(tmp_path),
    ])
    assert rc == 0
    report = json.loads((tmp_path / "analysis.json").read_text())
    assert report["epsilon_interval"][0] == 0.0
    assert report["epsilon_interval"][1] > 0.0
    assert report["decrease_check"]["all_negative_definite"] is True
    assert report["decrease_check"]["schur_agreement"] is True
    assert report["constants"]["ultimate_radius"] > 0.0


def test_adaptive_mode_requires_model(workspace, tmp_path, capsys):
    rc = cli.main([
        "simulate", "--config", str(workspace["config"]),
        "--mode", "adaptive", "--out", str(tmp_path),
    ])
    assert rc == 2
    assert "--model" in capsys.readouterr().err


def test_missing_config_is_usage_error(tmp_path):
    rc = cli.main(["train", "--config", str(tmp_path / "nope.json")])
    assert rc == 2


def test_malformed_config_is_usage_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{]")
    assert cli.main(["train", "--config", str(bad)]) == 2
    wrong = tmp_path / "wrong.json"
    wrong.write_text(json.dumps({"plant": {"kind": "monorail"}}))
    assert cli.main(["train", "--config", str(wrong)]) == 2


def test_bad_model_file_is_usage_error(workspace, tmp_path):
    fake = tmp_path / "model.json"
    fake.write_text("{}")
    rc = cli.main([
        "analyze", "--config", str(workspace["config"]),
        "--model", str(fake), "--out", str(tmp_path),
    ])
    assert rc == 2
    rc = cli.main([
        "analyze", "--config", str(workspace["config"]),
        "--model", str(tmp_path / "absent.json"), "--out", str(tmp_path),
    ])
    assert rc == 2


def test_numerical_failure_exit_code(workspace, tmp_path, monkeypatch):
    def explode(cfg, seed=None, kappa=None):
        raise NumericalError("factorization failed")

    monkeypatch.setattr("gptorque.simulate.train_model", explode)
    rc = cli.main(["train", "--config", str(workspace["config"]), "--out", str(tmp_path)])
    assert rc == 3


def test_divergence_exit_code(tmp_path, capsys):
    cfg = dict(
        QUICK_CONFIG,
        integrator={"dt": 0.5},
        trajectory={"duration": 40.0},
        output_dir=str(tmp_path / "out"),
    )
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    rc = cli.main(["simulate", "--config", str(path), "--mode", "static"])
    assert rc == 4
    assert "non-finite" in capsys.readouterr().err


def test_usage_without_subcommand():
    with pytest.raises(SystemExit) as exc_info:
        cli.main([])
    assert exc_info.value.code == 2


def test_seed_override_changes_training_data(workspace, tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    c = tmp_path / "c"
    for out, seed in ((a, "11"), (b, "11"), (c, "12")):
        rc = cli.main([
            "train", "--config", str(workspace["config"]),
            "--seed", seed, "--out", str(out),
        ])
        assert rc == 0
    assert (a / "model.json").read_bytes() == (b / "model.json").read_bytes()
    assert (a / "model.json").read_bytes() != (c / "model.json").read_bytes()


def test_compare_outputs_are_deterministic(workspace, tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    for out in (a, b):
        rc = cli.main([
            "simulate", "--config", str(workspace["config"]),
            "--model", str(workspace["model"]), "--out", str(out),
        ])
        assert rc == 0
    for name in ("trace_static.csv", "trace_adaptive.csv", "metrics.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
