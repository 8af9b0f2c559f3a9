"""Dataset containers, manifests and model checkpoints."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .estimators import REGRESSORS, OperatorRegressor
from .nn import load_param_vector, save_param_vector
from .operators import build_model
from .sampling import OperatorDataset

DATASET_FORMAT = "belnet-dataset"
CHECKPOINT_FORMAT = "belnet-checkpoint"


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def canonical_json(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, separators=(",", ":"))


def config_hash(config) -> str:
    """SHA-256 of the canonical JSON form of ``config``."""
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def array_digest(arrays: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        h.update(name.encode())
        h.update(str(a.dtype.str).encode() + str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def save_datasets(path: str | Path, splits: dict[str, OperatorDataset], config: dict, seed: int, extra: dict | None = None) -> dict:
    """Write ``<path>.npz`` holding every split's arrays and ``<path>.json`` as manifest.

    Returns the manifest. Its ``manifest_hash`` covers config, seed and array
    contents, so rerunning the same configuration reproduces it exactly.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for name, data in splits.items():
        for key, arr in data.arrays().items():
            arrays[f"{name}/{key}"] = arr.astype(np.int64) if key == "owner" else arr.astype(np.float64)
    manifest = {
        "format": DATASET_FORMAT,
        "version": 1,
        "config": jsonable(config),
        "config_hash": config_hash(config),
        "seed": int(seed),
        "splits": {
            name: {
                "n_functions": d.n_functions,
                "n_sensors": d.n_sensors,
                "n_queries": d.n_queries,
                "queries_per_function": _queries_per_function(d),
                "sensor_dim": int(d.sensors.shape[2]),
                "query_dim": int(d.queries.shape[1]),
            }
            for name, d in splits.items()
        },
        "arrays": {k: {"shape": list(v.shape), "dtype": v.dtype.str} for k, v in sorted(arrays.items())},
        "data_hash": array_digest(arrays),
    }
    if extra:
        manifest["extra"] = jsonable(extra)
    manifest["manifest_hash"] = config_hash(manifest)
    np.savez(path.with_suffix(".npz"), **arrays)
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def _queries_per_function(d: OperatorDataset):
    counts = np.bincount(d.owner, minlength=d.n_functions)
    return int(counts[0]) if counts.size and np.all(counts == counts[0]) else counts.tolist()


def load_datasets(path: str | Path, verify: bool = True) -> tuple[dict[str, OperatorDataset], dict]:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    if manifest.get("format") != DATASET_FORMAT:
        raise ValueError(f"{path} is not a dataset manifest")
    with np.load(path.with_suffix(".npz")) as z:
        arrays = {k: z[k] for k in z.files}
    if verify and array_digest(arrays) != manifest["data_hash"]:
        raise ValueError("dataset contents do not match the manifest hash")
    splits = {}
    for name in manifest["splits"]:
        splits[name] = OperatorDataset(
            *(arrays[f"{name}/{k}"] for k in ("sensors", "values", "queries", "owner", "targets"))
        )
    return splits, manifest


def save_checkpoint(path: str | Path, estimator: OperatorRegressor, meta: dict | None = None) -> None:
    """Parameter vector plus a sidecar with the architecture tag, estimator params and normalization."""
    model = estimator.model_
    extra = {
        "checkpoint": CHECKPOINT_FORMAT,
        "kind": model.kind,
        "model_config": model.config,
        "estimator_params": jsonable(estimator.get_params()),
        "normalization": jsonable(estimator.normalization_state()),
        "meta": jsonable(meta or {}),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    save_param_vector(path, model.params, model.layout(), extra)


def load_checkpoint(path: str | Path) -> tuple[OperatorRegressor, dict]:
    values, sidecar = load_param_vector(path)
    if sidecar.get("checkpoint") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} has no checkpoint metadata")
    kind = sidecar["kind"]
    model = build_model(kind, **sidecar["model_config"])
    model.set_params_flat(values)
    params = dict(sidecar["estimator_params"])
    for key, value in params.items():
        if isinstance(value, list):
            params[key] = tuple(value)
    estimator = REGRESSORS[kind](**params)
    estimator.restore(model, sidecar["normalization"])
    return estimator, sidecar
