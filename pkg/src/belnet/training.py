"""Loss, optimisation loop, error metrics and ensemble orchestration."""

from __future__ import annotations

import csv
import json
import logging
import os
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from joblib import Parallel, delayed

from .nn import AdamState, adam_step_
from .operators import OperatorModel
from .sampling import OperatorDataset

logger = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, message: str, trace: Sequence[float] = ()):
        super().__init__(message)
        self.trace = list(trace)


@dataclass
class TrainConfig:
    """Optimisation settings.

    ``batch_mode="queries"`` draws ``batch_size`` query points per step;
    ``"functions"`` draws ``batch_size`` input functions with all their queries,
    so the function-side subnetworks only run on the functions in the batch.
    ``batch_size=None`` means full-batch steps.
    """

    epochs: int = 3000
    batch_size: int | None = 256
    batch_mode: str = "queries"
    lr: float = 1e-3
    lr_milestones: tuple[float, ...] = (0.6, 0.85)
    lr_gamma: float = 0.5
    seed: int = 0
    divergence_threshold: float = 1e6

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.batch_mode not in ("queries", "functions"):
            raise ValueError(f"batch_mode must be 'queries' or 'functions', got {self.batch_mode!r}")

    def lr_at(self, epoch: int) -> float:
        drops = sum(epoch >= int(m * self.epochs) for m in self.lr_milestones)
        return self.lr * self.lr_gamma**drops


def loss(model: OperatorModel, batch: OperatorDataset) -> tuple[float, np.ndarray]:
    """Mean squared error over the batch and its exact parameter gradient."""
    n = batch.n_queries
    if n == 0:
        raise ValueError("empty batch")
    pred, store = model.forward(batch.sensors, batch.values, batch.queries, batch.owner, cache=True)
    resid = pred - batch.targets
    bad = np.flatnonzero(~np.isfinite(resid))
    if bad.size:
        raise FloatingPointError(f"non-finite prediction for sample {bad[0]}")
    value = float(np.mean(resid * resid))
    return value, model.backward(store, 2.0 * resid / n)


@dataclass
class TrainResult:
    losses: list[float]
    steps: int
    seconds: float


def train(
    model: OperatorModel,
    data: OperatorDataset,
    cfg: TrainConfig,
    callback: Callable[[int, OperatorModel], None] | None = None,
) -> TrainResult:
    """Adam on minibatches of queries; records the mean training loss of each epoch.

    ``callback(epoch, model)`` runs after every epoch.
    """
    rng = np.random.default_rng(cfg.seed)
    state = AdamState.zeros(model.param_count, lr=cfg.lr)
    by_function = cfg.batch_mode == "functions"
    n = data.n_functions if by_function else data.n_queries
    batch = n if cfg.batch_size is None else min(cfg.batch_size, n)
    take = data.subset_functions if by_function else data.subset_queries
    losses: list[float] = []
    steps = 0
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        state.lr = cfg.lr_at(epoch)
        order = rng.permutation(n) if batch < n else None
        total = 0.0
        for start in range(0, n, batch):
            sub = data if order is None else take(order[start : start + batch])
            value, grad = loss(model, sub)
            if not np.isfinite(value) or value > cfg.divergence_threshold:
                raise DivergenceError(f"loss {value:.3e} at epoch {epoch}", losses)
            if state.lr > 0:
                adam_step_(state, model.params, grad)
            total += value * sub.n_queries
            steps += 1
        losses.append(total / data.n_queries)
        if callback is not None:
            callback(epoch, model)
    return TrainResult(losses, steps, time.perf_counter() - t0)


def predict_dataset(model, data: OperatorDataset) -> np.ndarray:
    if hasattr(model, "predict_dataset"):
        return model.predict_dataset(data)
    return model.forward(data.sensors, data.values, data.queries, data.owner)


def relative_l2(pred: np.ndarray, true: np.ndarray) -> float:
    return float(np.linalg.norm(pred - true) / np.linalg.norm(true))


def relative_error(model, data: OperatorDataset, groups: np.ndarray | None = None, pred: np.ndarray | None = None):
    """Per-group relative L2 error and its mean.

    Groups default to the input function owning each query. Groups whose true
    values are all zero are skipped with a warning.
    """
    if pred is None:
        pred = predict_dataset(model, data)
    groups = data.owner if groups is None else np.asarray(groups)
    errors = []
    for g in np.unique(groups):
        mask = groups == g
        norm = np.linalg.norm(data.targets[mask])
        if norm == 0:
            warnings.warn(f"group {g} has zero true norm; skipped", RuntimeWarning)
            continue
        errors.append(np.linalg.norm(pred[mask] - data.targets[mask]) / norm)
    if not errors:
        raise ValueError("no group with non-zero true values")
    errors = np.array(errors)
    return errors, float(errors.mean())


# ---------------------------------------------------------------------------
# Ensembles


def derive_seeds(master_seed: int, n: int) -> list[int]:
    """Member seeds: first word of ``SeedSequence(master_seed).spawn(n)[i]``."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(master_seed).spawn(n)]


@dataclass
class EvalReport:
    experiment: str
    model: str
    errors: list[float]
    param_count: int
    wall_clock: float
    seeds: list[int] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(self.errors)) if self.errors else float("nan")

    @property
    def std(self) -> float:
        return float(np.std(self.errors)) if self.errors else float("nan")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mean"] = self.mean
        d["std"] = self.std
        return d


def _run_member(member: Callable[[int], dict], seed: int) -> dict:
    t0 = time.perf_counter()
    try:
        out = member(seed)
    except (DivergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return {"seed": seed, "failed": True, "error": f"{type(exc).__name__}: {exc}"}
    out.setdefault("seconds", time.perf_counter() - t0)
    out["seed"] = seed
    return out


def run_ensemble(
    member: Callable[[int], dict],
    ensemble_size: int,
    seed: int = 0,
    workers: int | None = None,
    audit: bool = False,
    experiment: str = "",
    model: str = "",
) -> EvalReport:
    """Train ``ensemble_size`` independent members and aggregate their errors.

    ``member(seed)`` must return a dict with at least ``error`` and
    ``param_count``; any other keys are averaged into ``extras`` when numeric.
    Members that diverge are recorded as failures and excluded.
    """
    if ensemble_size < 1:
        raise ValueError("ensemble_size must be at least 1")
    seeds = derive_seeds(seed, ensemble_size)
    workers = 1 if audit else (workers or os.cpu_count() or 1)
    t0 = time.perf_counter()
    if workers > 1 and ensemble_size > 1:
        results = Parallel(n_jobs=min(workers, ensemble_size))(
            delayed(_run_member)(member, s) for s in seeds
        )
    else:
        results = [_run_member(member, s) for s in seeds]
    ok = [r for r in results if not r.get("failed")]
    failures = [r for r in results if r.get("failed")]
    for f in failures:
        logger.warning("ensemble member %s failed: %s", f["seed"], f["error"])
    extras: dict = {}
    for key in sorted({k for r in ok for k in r}):
        vals = [r[key] for r in ok if key in r]
        if key in ("error", "seed", "param_count") or not all(isinstance(v, (int, float)) for v in vals):
            continue
        extras[f"{key}_per_model"] = [float(v) for v in vals]
        extras[f"{key}_mean"] = float(np.mean(vals))
    return EvalReport(
        experiment=experiment,
        model=model,
        errors=[float(r["error"]) for r in ok],
        param_count=int(ok[0]["param_count"]) if ok else 0,
        wall_clock=time.perf_counter() - t0,
        seeds=[int(r["seed"]) for r in ok],
        failures=failures,
        extras=extras,
    )


def write_reports(reports: Sequence[EvalReport], path: str | Path, meta: dict | None = None) -> None:
    """``<path>.json`` with every report, ``<path>.csv`` with one row per model and table key."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"meta": meta or {}, "reports": [r.to_dict() for r in reports]}
    path.with_suffix(".json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    with open(path.with_suffix(".csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["experiment", "model", "patch_size", "member", "seed", "relative_error", "param_count"])
        for r in reports:
            for i, (s, e) in enumerate(zip(r.seeds, r.errors)):
                writer.writerow([r.experiment, r.model, r.extras.get("patch_size", ""), i, s, e, r.param_count])
