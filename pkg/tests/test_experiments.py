import numpy as np
import pytest

from belnet import experiments as ex
from belnet.training import EvalReport


def test_presets_validate_and_hash_stably():
    hashes = set()
    for name in ex.EXPERIMENTS:
        for scale in ex.SCALES:
            cfg = ex.preset(name, scale)
            assert cfg.hash == ex.preset(name, scale).hash
            hashes.add(cfg.hash)
    assert len(hashes) == 2 * len(ex.EXPERIMENTS)
    assert ex.preset("burgers", seed=1).hash != ex.preset("burgers").hash
    assert ex.preset("burgers", output_dir="x").hash == ex.preset("burgers").hash


def test_config_errors_name_fields():
    with pytest.raises(ex.ConfigError) as info:
        ex.preset("burgers", ensemble_size=0, reruns=0, models={"gpr": {}})
    assert {"ensemble_size", "reruns", "models.gpr"} <= set(info.value.errors)
    with pytest.raises(ex.ConfigError) as info:
        ex.preset("elliptic2d_onefast", patch={"sizes": [2]}, data={"n_obs": 15})
    assert {"patch.sizes", "data.n_obs"} <= set(info.value.errors)
    with pytest.raises(ex.ConfigError, match="unknown field"):
        ex.ExperimentConfig.from_mapping({"experiment": "burgers", "bogus": 1})
    with pytest.raises(ex.ConfigError, match="window"):
        ex.preset("elliptic1d", window=10**6)
    with pytest.raises(ex.ConfigError, match="experiment"):
        ex.preset("heat")


def test_config_roundtrip():
    cfg = ex.preset("elliptic2d_multiscale")
    assert ex.ExperimentConfig.from_mapping(cfg.to_dict()).hash == cfg.hash
    assert cfg.pde_config().epsilon == tuple(cfg.pde["epsilon"])


def test_rerun_seeds():
    assert ex.rerun_seeds(5, 1) == [5]
    s = ex.rerun_seeds(5, 10)
    assert s[0] == 5 and len(set(s)) == 10 and s == ex.rerun_seeds(5, 10)


def report(model, errors):
    return EvalReport("burgers", model, list(errors), 1, 0.0, list(range(len(errors))))


def test_paired_wins_counts_ties_only_when_not_strict():
    runs = [{"a": report("a", [0.1]), "b": report("b", [0.2])},
            {"a": report("a", [0.2]), "b": report("b", [0.2])},
            {"a": report("a", [0.3]), "b": report("b", [0.2])}]
    assert ex.paired_wins(runs, "a", "b") == 2
    assert ex.paired_wins(runs, "a", "b", strict=True) == 1


def test_burgers_checks():
    checks = ex.burgers_checks([report("belnet", [0.04]), report("vanilla", [0.06]), report("deeponet", [0.5])])
    assert checks == {"belnet_mean_le_0.05": True, "vanilla_mean_le_0.05": False}


def ms_report(p, mean, coarse, rej=None):
    r = report("belnet", [mean])
    r.extras.update(patch_size=p, coarse_error=coarse, final_error_mean=mean,
                    rejitter_error_mean=mean if rej is None else rej)
    return r


def test_multiscale_checks():
    good = [ms_report(1, 0.5, 0.1), ms_report(3, 0.05, 0.1), ms_report(5, 0.06, 0.1)]
    assert all(ex.multiscale_checks(good).values())
    assert "p1_improvement_ge_1.2" not in ex.multiscale_checks(good)
    weak = [ms_report(3, 0.09, 0.1), ms_report(5, 0.03, 0.1, rej=0.05)]
    checks = ex.multiscale_checks(weak)
    assert not checks["p3_improvement_ge_1.2"] and not checks["spread_le_2.0"]
    assert not checks["rejitter_le_1.5"]


@pytest.fixture(scope="module")
def tiny_2d():
    return ex.preset("elliptic2d_onefast", ensemble_size=2, train={"epochs": 20}, window=5,
                     pde={"epsilon": 1 / 8, "forcing": 1.0, "fine_mesh": 96, "coarse_mesh": 16},
                     data={"n_obs": 16, "n_eval": 64})


def test_multiscale_splits(tiny_2d):
    splits, model_seed = ex.multiscale_splits(tiny_2d, 3, 7)
    again, seed2 = ex.multiscale_splits(tiny_2d, 3, 7)
    assert model_seed == seed2
    np.testing.assert_array_equal(splits["train"].sensors, again["train"].sensors)
    assert splits["train"].n_functions == 16 and splits["train"].n_sensors == 9
    ev, rj = splits["eval"], splits["rejitter"]
    np.testing.assert_array_equal(ev.queries, rj.queries)
    np.testing.assert_array_equal(ev.targets, rj.targets)
    assert not np.array_equal(ev.sensors, rj.sensors)


def test_run_multiscale_tiny(tiny_2d):
    reports = ex.run_multiscale(tiny_2d, workers=1, sizes=[1, 3])
    assert [r.extras["patch_size"] for r in reports] == [1, 3]
    assert [r.extras["n_sensors"] for r in reports] == [1, 9]
    for r in reports:
        assert len(r.errors) == 2 and np.isfinite(r.mean)
        assert r.extras["coarse_error"] == pytest.approx(ex.coarse_baseline_error(tiny_2d))
    assert ex.patch_table(reports)[1]["patch_size"] == 3


def test_run_burgers_tiny():
    cfg = ex.preset("burgers", ensemble_size=1, train={"epochs": 2},
                    data={"n_train": 4, "n_test": 2}, pde={"fine_mesh": 64, "coarse_mesh": 32})
    reports = ex.run_burgers(cfg, workers=1)
    assert [r.model for r in reports] == ["belnet", "vanilla", "deeponet"]
    assert all(r.extras["n_train"] == 4 for r in reports)
    again = ex.run_burgers(cfg, workers=1)
    assert [r.errors for r in reports] == [r.errors for r in again]


def test_reproduce_batteries():
    out = ex.reproduce(ex.preset("theory_battery", data={"n_probes": 500, "n_configs": 5}))
    assert out["checks"] == {"battery_passed": True}
    assert out["config_hash"] and out["seed"] == 0
