import json

import pytest
import yaml

from belnet.cli import EXIT_BAND, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main

TINY_BURGERS = {
    "pde": {"alpha": 0.1, "fine_mesh": 64, "coarse_mesh": 32},
    "data": {"n_train": 4, "n_test": 2},
    "train": {"epochs": 2},
    "ensemble_size": 1,
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY_BURGERS))
    return str(path)


def test_theory_check_ok(tmp_path, capsys):
    cfg = tmp_path / "t.json"
    cfg.write_text(json.dumps({"data": {"n_probes": 500, "n_configs": 5}}))
    out = tmp_path / "theory.json"
    assert main(["theory-check", "--config", str(cfg), "--output", str(out)]) == EXIT_OK
    report = json.loads(out.read_text())
    assert report["passed"] and report["seed"] == 0 and len(report["config_hash"]) == 64


def test_grad_check_exit_codes(tmp_path, capsys):
    assert main(["grad-check", "--n-cases", "3"]) == EXIT_OK
    assert main(["grad-check", "--n-cases", "3", "--fault"]) == EXIT_NUMERICAL


@pytest.mark.parametrize("content", ["[1, 2]", "experiment: burgers\nbogus: 3\n", "ensemble_size: 0\n", "{: bad"])
def test_invalid_config_exit_1(tmp_path, capsys, content):
    path = tmp_path / "bad.yaml"
    path.write_text(content)
    assert main(["reproduce", "burgers", "--config", str(path)]) == EXIT_CONFIG
    assert capsys.readouterr().err


def test_missing_config_file_exit_1(capsys):
    assert main(["reproduce", "burgers", "--config", "/nonexistent.yaml"]) == EXIT_CONFIG


def test_unknown_experiment_rejected_by_parser(capsys):
    with pytest.raises(SystemExit):
        main(["reproduce", "heat"])


def test_gen_train_eval_roundtrip(tmp_path, tiny_config, capsys):
    out = tmp_path / "run"
    assert main(["gen-data", "burgers", "--config", tiny_config, "--seed", "3", "--output", str(out)]) == EXIT_OK
    manifest = json.loads((out / "burgers.json").read_text())
    assert manifest["seed"] == 3 and manifest["splits"]["train"]["queries_per_function"] == 125
    ckpt = str(tmp_path / "model")
    assert main(["train", "burgers", "--config", tiny_config, "--seed", "3", "--data", str(out / "burgers"),
                 "--model", "deeponet", "--checkpoint", ckpt]) == EXIT_OK
    report_path = tmp_path / "eval.json"
    assert main(["eval", ckpt, "--data", str(out / "burgers"), "--output", str(report_path)]) == EXIT_OK
    report = json.loads(report_path.read_text())
    assert report["split"] == "test" and report["seed"] == 3 and len(report["relative_errors"]) == 2
    assert report["data_manifest_hash"] == manifest["manifest_hash"]
    assert report["config_hash"] == manifest["config_hash"]


def test_gen_data_is_reproducible(tmp_path, tiny_config, capsys):
    for name in ("a", "b"):
        assert main(["gen-data", "burgers", "--config", tiny_config, "--output", str(tmp_path / name)]) == EXIT_OK
    a = json.loads((tmp_path / "a" / "burgers.json").read_text())
    b = json.loads((tmp_path / "b" / "burgers.json").read_text())
    assert a["manifest_hash"] == b["manifest_hash"]


def test_eval_unknown_split(tmp_path, tiny_config, capsys):
    out = tmp_path / "run"
    main(["gen-data", "burgers", "--config", tiny_config, "--output", str(out)])
    ckpt = str(tmp_path / "m")
    main(["train", "burgers", "--config", tiny_config, "--data", str(out / "burgers"), "--checkpoint", ckpt])
    assert main(["eval", ckpt, "--data", str(out / "burgers"), "--split", "nope"]) == EXIT_CONFIG


def test_reproduce_writes_stamped_artifacts_and_strict_band(tmp_path, tiny_config, capsys):
    out = tmp_path / "res"
    args = ["reproduce", "burgers", "--config", tiny_config, "--seed", "2", "--output", str(out), "--workers", "1"]
    assert main(args) == EXIT_OK
    summary = json.loads((out / "burgers" / "summary.json").read_text())
    reports = json.loads((out / "burgers" / "reports.json").read_text())
    assert summary["seed"] == 2 and reports["meta"]["config_hash"] == summary["config_hash"]
    assert (out / "burgers" / "reports.csv").exists()
    # two epochs cannot reach the accuracy band
    assert main(args + ["--strict"]) == EXIT_BAND


def test_reproduce_gen_data_multiscale(tmp_path, capsys):
    cfg = tmp_path / "ms.json"
    cfg.write_text(json.dumps({"pde": {"epsilon": 0.125, "forcing": 1.0, "fine_mesh": 96, "coarse_mesh": 16}}))
    assert main(["gen-data", "elliptic2d_onefast", "--config", str(cfg), "--patch-size", "3",
                 "--output", str(tmp_path)]) == EXIT_OK
    manifest = json.loads((tmp_path / "elliptic2d_onefast_p3.json").read_text())
    assert manifest["splits"]["train"]["n_sensors"] == 9
    assert manifest["extra"]["patch_size"] == 3
