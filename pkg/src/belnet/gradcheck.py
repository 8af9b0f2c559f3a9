"""Finite-difference verification of the hand-written gradients."""

from __future__ import annotations

import time
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .operators import OperatorModel, build_model

RTOL = 1e-5
ATOL = 1e-8


@dataclass
class GradCase:
    index: int
    kind: str
    param_count: int
    checked: int
    max_rel_error: float
    max_abs_error: float
    passed: bool


def _objective(model: OperatorModel, batch, weights: np.ndarray) -> float:
    return float(weights @ model.forward(*batch))


def compare(analytic: np.ndarray, numeric: np.ndarray, rtol: float = RTOL, atol: float = ATOL) -> tuple[float, bool]:
    """Entrywise check: pass when ``|a - n| <= atol`` or ``|a - n| / max(|a|, |n|) < rtol``.

    Returns the largest relative error among entries above the floor, and the pass flag.
    """
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = diff / np.where(scale > 0, scale, 1.0)
    # entries within the absolute floor do not count
    rel = np.where(diff <= atol, 0.0, rel)
    return float(rel.max(initial=0.0)), bool(np.all(rel < rtol))


def random_case(rng: np.random.Generator, kind: str):
    """Small random model and batch; every layer width is at most 16."""
    n_sensors = int(rng.integers(2, 7))
    d = int(rng.integers(1, 3))
    d_in = int(rng.integers(1, 3))
    act = str(rng.choice(["tanh", "sigmoid"]))
    seed = int(rng.integers(2**31))
    if kind == "belnet":
        model = build_model(
            "belnet", n_sensors=n_sensors, d=d, d_in=d_in, n_basis=int(rng.integers(1, 5)),
            width=int(rng.integers(1, 6)), nonlinear_width=int(rng.integers(1, 6)),
            projection_hidden=int(rng.integers(2, 9)),
            construction_hidden=(int(rng.integers(2, 9)),) if rng.random() < 0.5 else (),
            activation=act, seed=seed,
        )
    elif kind == "vanilla":
        model = build_model(
            "vanilla", n_sensors=n_sensors, d=d, d_in=d_in, width=int(rng.integers(1, 6)),
            projection_hidden=int(rng.integers(2, 9)), activation=act,
            mixing=bool(rng.random() < 0.7), seed=seed,
        )
    else:
        model = build_model(
            "deeponet", n_sensors=n_sensors, d=d, width=int(rng.integers(1, 8)),
            branch_hidden=(int(rng.integers(2, 9)),), trunk_hidden=(int(rng.integers(2, 9)),),
            activation=act, seed=seed,
        )
    B = int(rng.integers(1, 4))
    Q = int(rng.integers(1, 6))
    batch = (
        rng.uniform(-1, 1, size=(B, n_sensors, d_in)),
        rng.normal(size=(B, n_sensors)),
        rng.uniform(-1, 1, size=(Q, d)),
        rng.integers(0, B, size=Q),
    )
    return model, batch


def check_model(model: OperatorModel, batch, rng: np.random.Generator, max_coords: int = 64,
                step: float = 1e-6, fault: bool = False) -> tuple[int, float, float, bool]:
    """Compare analytic and central-difference gradients of a random linear functional of the output."""
    Q = len(batch[2])
    weights = rng.normal(size=Q)
    _, store = model.forward(*batch, cache=True)
    analytic = model.backward(store, weights)
    if fault:
        analytic = analytic.copy()
        analytic[int(rng.integers(analytic.size))] += 1e-3 * (1.0 + np.abs(analytic).max())
        analytic *= 1.0 + 1e-3
    n = model.param_count
    coords = np.arange(n) if n <= max_coords else np.sort(rng.choice(n, max_coords, replace=False))
    base = model.get_params_flat()
    numeric = np.empty(coords.size)
    for i, c in enumerate(coords):
        p = base.copy()
        p[c] += step
        model.set_params_flat(p)
        up = _objective(model, batch, weights)
        p[c] -= 2 * step
        model.set_params_flat(p)
        down = _objective(model, batch, weights)
        numeric[i] = (up - down) / (2 * step)
    model.set_params_flat(base)
    err, ok = compare(analytic[coords], numeric)
    return coords.size, err, float(np.abs(analytic[coords] - numeric).max()), ok


def run_grad_check(seed: int = 0, n_cases: int = 300, fault: bool = False) -> dict:
    """Seeded battery cycling through the three architectures."""
    if n_cases < 0:
        raise ValueError("n_cases must be non-negative")
    t0 = time.perf_counter()
    if n_cases == 0:
        warnings.warn("gradient check ran zero cases; passing vacuously", RuntimeWarning)
    rng = np.random.default_rng(seed)
    kinds = ("belnet", "vanilla", "deeponet")
    cases = []
    for i in range(n_cases):
        kind = kinds[i % 3]
        model, batch = random_case(rng, kind)
        checked, err, abs_err, ok = check_model(model, batch, rng, fault=fault)
        cases.append(GradCase(i, kind, model.param_count, checked, err, abs_err, ok))
    failures = [asdict(c) for c in cases if not c.passed]
    return {
        "seed": seed,
        "n_cases": n_cases,
        "fault_injection": fault,
        "rtol": RTOL,
        "atol": ATOL,
        "max_rel_error": max((c.max_rel_error for c in cases), default=0.0),
        "max_abs_error": max((c.max_abs_error for c in cases), default=0.0),
        "by_kind": {
            k: {
                "cases": sum(c.kind == k for c in cases),
                "max_rel_error": max((c.max_rel_error for c in cases if c.kind == k), default=0.0),
            }
            for k in kinds
        },
        "failures": failures,
        "passed": not failures,
        "seconds": time.perf_counter() - t0,
    }
