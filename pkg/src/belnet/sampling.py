"""Sensor placement and assembly of operator-learning datasets."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .pde import TWO_PI, GridFunction, burgers_ic, burgers_solve

logger = logging.getLogger(__name__)


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass
class OperatorSample:
    sensor_locations: np.ndarray  # (N, d_in)
    input_values: np.ndarray  # (N,)
    query_point: np.ndarray  # (d,)
    target: float

    def __post_init__(self):
        self.sensor_locations = np.asarray(self.sensor_locations, dtype=np.float64).reshape(
            len(self.input_values), -1
        )
        self.input_values = np.asarray(self.input_values, dtype=np.float64)
        self.query_point = np.atleast_1d(np.asarray(self.query_point, dtype=np.float64))
        if not np.isfinite(self.target):
            raise ValueError("target must be finite")


@dataclass
class OperatorDataset:
    """Input functions and their queries in grouped form.

    ``sensors[b]`` and ``values[b]`` describe input function ``b``; query ``q``
    at ``queries[q]`` belongs to function ``owner[q]`` and has target ``targets[q]``.
    """

    sensors: np.ndarray  # (B, N, d_in)
    values: np.ndarray  # (B, N)
    queries: np.ndarray  # (Q, d)
    owner: np.ndarray  # (Q,)
    targets: np.ndarray  # (Q,)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.sensors = np.asarray(self.sensors, dtype=np.float64)
        if self.sensors.ndim == 2:
            self.sensors = self.sensors[:, :, None]
        self.queries = np.asarray(self.queries, dtype=np.float64)
        if self.queries.ndim == 1:
            self.queries = self.queries[:, None]
        self.owner = np.asarray(self.owner, dtype=np.intp)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.sensors.shape[:2] != self.values.shape:
            raise ValueError("sensors and values disagree on (functions, sensors)")
        if not (len(self.queries) == len(self.owner) == len(self.targets)):
            raise ValueError("queries, owner and targets must have equal length")
        if len(self.owner) and (self.owner.min() < 0 or self.owner.max() >= len(self.values)):
            raise ValueError("owner index out of range")

    @property
    def n_functions(self) -> int:
        return self.values.shape[0]

    @property
    def n_sensors(self) -> int:
        return self.values.shape[1]

    @property
    def n_queries(self) -> int:
        return self.targets.shape[0]

    @classmethod
    def from_samples(cls, samples: Sequence[OperatorSample]) -> "OperatorDataset":
        """One input function per sample (the multiscale layout)."""
        if not samples:
            raise ValueError("no samples")
        return cls(
            sensors=np.stack([s.sensor_locations for s in samples]),
            values=np.stack([s.input_values for s in samples]),
            queries=np.stack([s.query_point for s in samples]),
            owner=np.arange(len(samples)),
            targets=np.array([s.target for s in samples]),
        )

    def samples(self) -> Iterator[OperatorSample]:
        for q in range(self.n_queries):
            b = self.owner[q]
            yield OperatorSample(self.sensors[b], self.values[b], self.queries[q], self.targets[q])

    def subset_queries(self, idx) -> "OperatorDataset":
        """Restrict to the given queries, keeping only the functions they use."""
        idx = np.asarray(idx)
        used, owner = np.unique(self.owner[idx], return_inverse=True)
        return OperatorDataset(
            self.sensors[used], self.values[used], self.queries[idx], owner, self.targets[idx]
        )

    def subset_functions(self, idx) -> "OperatorDataset":
        idx = np.asarray(idx)
        remap = np.full(self.n_functions, -1)
        remap[idx] = np.arange(idx.size)
        keep = np.flatnonzero(remap[self.owner] >= 0)
        return OperatorDataset(
            self.sensors[idx], self.values[idx], self.queries[keep],
            remap[self.owner[keep]], self.targets[keep],
        )

    def to_packed(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat ``(X, y)`` with rows ``[sensor coords, sensor values, query]``."""
        B = self.n_functions
        func = np.concatenate([self.sensors.reshape(B, -1), self.values], axis=1)
        return np.concatenate([func[self.owner], self.queries], axis=1), self.targets.copy()

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "sensors": self.sensors, "values": self.values, "queries": self.queries,
            "owner": self.owner, "targets": self.targets,
        }


def unpack(X: np.ndarray, n_sensors: int, sensor_dim: int = 1, y=None) -> OperatorDataset:
    """Inverse of :meth:`OperatorDataset.to_packed`; rows sharing an input function are grouped."""
    X = np.asarray(X, dtype=np.float64)
    width = n_sensors * (sensor_dim + 1)
    if X.ndim != 2 or X.shape[1] <= width:
        raise ValueError(
            f"packed rows need {width} function columns plus at least one query column; got {X.shape}"
        )
    func, owner = np.unique(X[:, :width], axis=0, return_inverse=True)
    sensors = func[:, : n_sensors * sensor_dim].reshape(-1, n_sensors, sensor_dim)
    values = func[:, n_sensors * sensor_dim :]
    targets = np.zeros(len(X)) if y is None else np.asarray(y, dtype=np.float64).ravel()
    return OperatorDataset(sensors, values, X[:, width:], owner.ravel(), targets)


# ---------------------------------------------------------------------------
# Burgers


def burgers_sample_sensors(ic: GridFunction, n_sensors: int = 25, seed=None) -> tuple[np.ndarray, np.ndarray]:
    """Uniform random sensor locations on [0, 2pi), sorted, with linearly interpolated values."""
    if n_sensors < 1:
        raise ValueError("need at least one sensor")
    rng = as_rng(seed)
    loc = np.sort(rng.uniform(0.0, TWO_PI, size=n_sensors))
    return loc, ic(loc)


def burgers_instance(s: float, rng: np.random.Generator, n_sensors=25, n_cells=512, alpha=0.1):
    ic = burgers_ic(s, n_cells)
    loc, vals = burgers_sample_sensors(ic, n_sensors, rng)
    snaps = burgers_solve(ic, alpha, t_end=0.3, n_snapshots=6)
    return loc, vals, snaps


def assemble_burgers_dataset(
    n_train: int = 200,
    n_test: int = 500,
    seed: int = 0,
    n_sensors: int = 25,
    n_cells: int = 512,
    alpha: float = 0.1,
    n_test_points: int = 151,
) -> tuple[OperatorDataset, OperatorDataset, dict]:
    """Training/test sets for the initial-condition to solution operator.

    Instance ``i`` of split ``k`` (0 train, 1 test) draws from
    ``SeedSequence(seed, spawn_key=(k, i))``: first ``s ~ U[0, 4]``, then the 25
    sensor locations. Training queries cross the sensor locations with the five
    snapshot times before ``t = 0.3``; test queries are ``n_test_points``
    uniform points on ``[0, 2pi]`` at ``t = 0.3``.
    """
    times = np.linspace(0.0, 0.3, 6)
    test_x = np.linspace(0.0, TWO_PI, n_test_points)
    splits, record = [], {"seed": seed, "derivation": "SeedSequence(seed, spawn_key=(split, i))", "s": {}}
    for k, count in enumerate((n_train, n_test)):
        sensors, values, queries, owner, targets, s_values = [], [], [], [], [], []
        for i in range(count):
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k, i)))
            s = float(rng.uniform(0.0, 4.0))
            loc, vals, snaps = burgers_instance(s, rng, n_sensors, n_cells, alpha)
            sensors.append(loc)
            values.append(vals)
            s_values.append(s)
            if k == 0:
                for t, snap in zip(times[:-1], snaps[:-1]):
                    queries.append(np.column_stack([loc, np.full(n_sensors, t)]))
                    targets.append(snap(loc))
                    owner.append(np.full(n_sensors, i))
            else:
                queries.append(np.column_stack([test_x, np.full(test_x.size, times[-1])]))
                targets.append(snaps[-1](test_x))
                owner.append(np.full(test_x.size, i))
        splits.append(
            OperatorDataset(
                np.array(sensors)[:, :, None], np.array(values), np.concatenate(queries),
                np.concatenate(owner), np.concatenate(targets),
            )
        )
        record["s"]["train" if k == 0 else "test"] = s_values
    return splits[0], splits[1], record


# ---------------------------------------------------------------------------
# Patches for the multiscale problems


@dataclass
class PatchSpec:
    size: int
    base_spacing: float
    jitter: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.size < 1 or self.size % 2 == 0:
            raise ValueError(f"patch size must be a positive odd integer, got {self.size}")
        if self.base_spacing <= 0:
            raise ValueError("base_spacing must be positive")

    def jitter_candidates(self, dim: int) -> np.ndarray:
        """Offsets a sensor may take around its nominal node: the node and its half-step neighbours."""
        half = 0.5 * self.base_spacing
        grids = np.meshgrid(*([np.array([-half, 0.0, half])] * dim), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)


def patch_offsets(size: int, spacing: float, dim: int) -> np.ndarray:
    r = (np.arange(size) - size // 2) * spacing
    grids = np.meshgrid(*([r] * dim), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def make_patch(center, spec: PatchSpec, coarse_u0: GridFunction, rng=None) -> tuple[np.ndarray, np.ndarray]:
    """Jittered ``size^d`` patch of sensors around ``center`` and the coarse values there.

    Every node except the centre picks one jitter candidate uniformly; the centre
    sensor stays on the observation point. Sensors are clamped to the domain.
    """
    center = np.atleast_1d(np.asarray(center, dtype=np.float64))
    dim = center.size
    rng = as_rng(spec.seed if rng is None else rng)
    nodes = center + patch_offsets(spec.size, spec.base_spacing, dim)
    if spec.jitter and spec.size > 1:
        cands = spec.jitter_candidates(dim)
        pick = rng.integers(0, len(cands), size=len(nodes))
        shift = cands[pick]
        shift[len(nodes) // 2] = 0.0
        nodes = nodes + shift
    lo = np.array([a[0] for a in coarse_u0.axes])
    hi = np.array([a[-1] for a in coarse_u0.axes])
    clamped = np.clip(nodes, lo, hi)
    if np.any(clamped != nodes):
        logger.debug("clamped %d patch sensors at the boundary near %s", np.sum(clamped != nodes), center)
    values = coarse_u0(clamped if dim > 1 else clamped[:, 0])
    return clamped, np.asarray(values, dtype=np.float64)


def observation_lattice(n_obs: int, dim: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """Cell-centre lattice with ``n_obs`` points in total (``n_obs`` must be a perfect power)."""
    per_axis = int(round(n_obs ** (1.0 / dim)))
    if per_axis**dim != n_obs:
        raise ValueError(f"{n_obs} observation points do not form a {dim}D lattice")
    c = lo + (hi - lo) * (np.arange(per_axis) + 0.5) / per_axis
    grids = np.meshgrid(*([c] * dim), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def assemble_multiscale_dataset(
    fine_u: GridFunction,
    coarse_u0: GridFunction,
    n_obs: int = 16,
    spec: PatchSpec | None = None,
    seed=None,
    points: np.ndarray | None = None,
) -> list[OperatorSample]:
    """One sample per observation point: a freshly jittered coarse patch and the fine value."""
    dim = coarse_u0.ndim
    if spec is None:
        spec = PatchSpec(1, coarse_u0.axes[0][1] - coarse_u0.axes[0][0], jitter=False)
    rng = as_rng(spec.seed if seed is None else seed)
    lo, hi = coarse_u0.axes[0][0], coarse_u0.axes[0][-1]
    pts = observation_lattice(n_obs, dim, lo, hi) if points is None else np.atleast_2d(points)
    targets = fine_u(pts if dim > 1 else pts[:, 0])
    samples = []
    for x, target in zip(pts, targets):
        loc, vals = make_patch(x, spec, coarse_u0, rng)
        samples.append(OperatorSample(loc, vals, x, float(target)))
    return samples
