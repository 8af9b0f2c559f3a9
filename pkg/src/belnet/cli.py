"""Command-line entry point: ``belnet <subcommand> ...``.

Exit codes: 0 success, 1 invalid configuration, 2 numerical failure,
3 acceptance-band miss under ``--strict``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np
import yaml

from . import experiments as ex
from .estimators import ExtrapolationWarning, make_regressor
from .io import jsonable, load_checkpoint, load_datasets, save_checkpoint, save_datasets
from .pde import SolverError
from .theory import NotCoveredError, SingularSensorsError
from .training import DivergenceError, relative_error, write_reports

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_BAND = 0, 1, 2, 3
NUMERICAL_ERRORS = (DivergenceError, SolverError, FloatingPointError, np.linalg.LinAlgError,
                    NotCoveredError, SingularSensorsError)

logger = logging.getLogger("belnet")


def load_config(path: str | Path) -> dict:
    """Read a YAML (``.yaml``/``.yml``) or JSON config file into a mapping."""
    path = Path(path)
    text = path.read_text()
    data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ex.ConfigError({"<file>": f"{path} must contain a mapping"})
    return data


def resolve_config(args) -> ex.ExperimentConfig:
    """Preset for ``args.experiment`` at ``args.scale``, overlaid with ``--config`` and ``--seed``."""
    overrides: dict = {}
    if getattr(args, "config", None):
        overrides = load_config(args.config)
    experiment = getattr(args, "experiment", None) or overrides.get("experiment")
    if experiment is None:
        raise ex.ConfigError({"experiment": "required (positional argument or config field)"})
    scale = overrides.pop("scale", None) or getattr(args, "scale", "desk")
    if overrides.get("experiment", experiment) != experiment:
        raise ex.ConfigError({"experiment": "config file and command line disagree"})
    overrides.pop("experiment", None)
    seed = overrides.pop("seed", 0)
    if getattr(args, "seed", None) is not None:
        seed = args.seed
    base = ex.preset(experiment, scale, seed).to_dict()
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict) and key != "models":
            base[key].update(value)
        else:
            base[key] = value
    for key in ("reruns", "ensemble_size"):
        if getattr(args, key, None) is not None:
            base[key] = getattr(args, key)
    if getattr(args, "output", None):
        base["output_dir"] = args.output
    return ex.ExperimentConfig.from_mapping(base)


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(jsonable(payload), indent=2, sort_keys=True))
    logger.info("wrote %s", path)


def _stamp(cfg: ex.ExperimentConfig) -> dict:
    return {"config_hash": cfg.hash, "seed": cfg.seed, "experiment": cfg.experiment, "scale": cfg.scale}


# ---------------------------------------------------------------------------
# Subcommands


def cmd_gen_data(args) -> int:
    cfg = resolve_config(args)
    out = Path(cfg.output_dir)
    if cfg.experiment == "burgers":
        train, test, record = ex.burgers_datasets(cfg)
        splits, extra = {"train": train, "test": test}, {"s": record["s"], "derivation": record["derivation"]}
        name = "burgers"
    elif cfg.experiment in ex.MULTISCALE:
        p = args.patch_size or cfg.patch["sizes"][0]
        splits, model_seed = ex.multiscale_splits(cfg, p, cfg.seed)
        extra = {"patch_size": p, "model_seed": model_seed}
        name = f"{cfg.experiment}_p{p}"
    else:
        raise ex.ConfigError({"experiment": f"{cfg.experiment} has no dataset"})
    config = {k: v for k, v in cfg.to_dict().items() if k != "output_dir"}
    manifest = save_datasets(out / name, splits, config, cfg.seed, extra)
    print(json.dumps({"path": str(out / name), "manifest_hash": manifest["manifest_hash"],
                      "splits": manifest["splits"]}, indent=2))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    splits, manifest = load_datasets(args.data)
    if "train" not in splits:
        raise ex.ConfigError({"data": "dataset has no 'train' split"})
    kind = args.model or next(iter(cfg.models))
    if kind not in cfg.models:
        raise ex.ConfigError({"model": f"{kind} is not configured for {cfg.experiment}"})
    train = splits["train"]
    extra = {}
    if cfg.experiment in ex.MULTISCALE:
        lo, hi = cfg.pde_config().domain
        dim = train.queries.shape[1]
        extra["input_bounds"] = ([lo] * dim, [hi] * dim)
    est = make_regressor(kind, **ex._estimator_params(cfg, kind, train.n_sensors, cfg.seed, **extra))
    est.fit(train)
    meta = dict(_stamp(cfg), data_manifest_hash=manifest["manifest_hash"],
                final_train_loss=float(est.loss_curve_[-1]))
    save_checkpoint(args.output_checkpoint, est, meta)
    print(json.dumps(jsonable({"checkpoint": args.output_checkpoint, **meta, "param_count": est.param_count_}),
                     indent=2))
    return EXIT_OK


def cmd_eval(args) -> int:
    est, sidecar = load_checkpoint(args.checkpoint)
    splits, manifest = load_datasets(args.data)
    split = args.split or ("test" if "test" in splits else "eval")
    if split not in splits:
        raise ex.ConfigError({"split": f"{split!r} not in dataset (have {sorted(splits)})"})
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ExtrapolationWarning)
        errors, mean = relative_error(est, splits[split])
    report = {
        "checkpoint": args.checkpoint,
        "split": split,
        "mean_relative_error": mean,
        "relative_errors": errors,
        "extrapolation_warnings": len([w for w in caught if issubclass(w.category, ExtrapolationWarning)]),
        "data_manifest_hash": manifest["manifest_hash"],
        **{k: sidecar["meta"].get(k) for k in ("config_hash", "seed")},
    }
    if args.output:
        _write_json(Path(args.output), report)
    print(json.dumps(jsonable({k: v for k, v in report.items() if k != "relative_errors"}), indent=2))
    return EXIT_OK


def cmd_reproduce(args) -> int:
    cfg = resolve_config(args)
    out = Path(cfg.output_dir) / cfg.experiment
    result = ex.reproduce(cfg, workers=args.workers, audit=args.audit)
    stamp = _stamp(cfg)
    summary = {k: v for k, v in result.items() if k != "reports"}
    if "reports" in result:
        write_reports(result["reports"], out / "reports", meta=dict(stamp, config=cfg.to_dict()))
        summary["rows"] = [
            {"model": r.model, "patch_size": r.extras.get("patch_size"), "mean_error": r.mean,
             "std_error": r.std, "param_count": r.param_count, "members": len(r.errors),
             "failures": len(r.failures)}
            for r in result["reports"]
        ]
    summary.update(stamp)
    _write_json(out / "summary.json", summary)
    print(json.dumps(jsonable({k: v for k, v in summary.items() if k not in ("battery",)}), indent=2))
    failed_members = sum(len(r.failures) for r in result.get("reports", []))
    if "reports" in result and all(not r.errors for r in result["reports"]):
        return EXIT_NUMERICAL
    if failed_members:
        logger.warning("%d ensemble members diverged", failed_members)
    if cfg.experiment in ("theory_battery", "grad_check") and not result["checks"]["battery_passed"]:
        return EXIT_NUMERICAL
    if args.strict and not all(result["checks"].values()):
        return EXIT_BAND
    return EXIT_OK


def cmd_grad_check(args) -> int:
    cfg = resolve_config(argparse.Namespace(experiment="grad_check", config=args.config, seed=args.seed, scale="desk"))
    n_cases = args.n_cases if args.n_cases is not None else cfg.data.get("n_cases", 300)
    report = ex.run_grad_check(seed=cfg.seed, n_cases=n_cases, fault=args.fault)
    report.update(_stamp(cfg))
    if args.output:
        _write_json(Path(args.output), report)
    print(json.dumps(jsonable({k: v for k, v in report.items() if k != "failures"}
                               | {"n_failures": len(report["failures"])}), indent=2))
    return EXIT_OK if report["passed"] else EXIT_NUMERICAL


def cmd_theory_check(args) -> int:
    cfg = resolve_config(argparse.Namespace(experiment="theory_battery", config=args.config, seed=args.seed,
                                            scale="desk"))
    report = ex.run_theory(cfg)
    report.update(_stamp(cfg))
    if args.output:
        _write_json(Path(args.output), report)
    print(json.dumps(jsonable(report), indent=2))
    return EXIT_OK if report["passed"] else EXIT_NUMERICAL


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="belnet", description="Discretization-invariant operator learning.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment_args(p, positional=True):
        if positional:
            p.add_argument("experiment", nargs="?", choices=ex.EXPERIMENTS)
        p.add_argument("--config", help="YAML or JSON overrides on top of the preset")
        p.add_argument("--scale", choices=ex.SCALES, default="desk")
        p.add_argument("--seed", type=int)
        p.add_argument("--output", help="output directory")

    p = sub.add_parser("gen-data", help="write a dataset container and manifest")
    experiment_args(p)
    p.add_argument("--patch-size", type=int, help="patch size for multiscale experiments")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model on a generated dataset")
    experiment_args(p)
    p.add_argument("--data", required=True, help="dataset path (without suffix)")
    p.add_argument("--model", choices=sorted(ex.REGRESSOR_KINDS))
    p.add_argument("--checkpoint", dest="output_checkpoint", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--split")
    p.add_argument("--output", help="JSON report path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reproduce", help="run an experiment end to end")
    experiment_args(p)
    p.add_argument("--workers", type=int, help="parallel ensemble members (default: all cores)")
    p.add_argument("--audit", action="store_true", help="single worker, for bitwise reproducibility audits")
    p.add_argument("--strict", action="store_true", help="exit 3 when an acceptance band is missed")
    p.add_argument("--reruns", type=int, help="whole-experiment reruns (Burgers trend checks)")
    p.add_argument("--ensemble-size", type=int)
    p.set_defaults(func=cmd_reproduce)

    for name, func, help_ in (("grad-check", cmd_grad_check, "finite-difference gradient battery"),
                              ("theory-check", cmd_theory_check, "constructive-approximation oracle battery")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        p.add_argument("--output", help="JSON report path")
        if name == "grad-check":
            p.add_argument("--n-cases", type=int)
            p.add_argument("--fault", action="store_true", help="inject a wrong gradient (checker self-test)")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ex.ConfigError as exc:
        print("invalid configuration:", file=sys.stderr)
        for key, msg in exc.errors.items():
            print(f"  {key}: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, yaml.YAMLError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
