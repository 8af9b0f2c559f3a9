"""Finite, computable pieces of the BelNet approximation argument.

These build eta-nets, the hat-function partition of unity over a net, the
interpolant ``u_k``, and the reconstruction matrix ``v`` that maps interpolant
values at arbitrary sensors to values at a fixed reference sensor set. The test
suite uses them as oracles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

COND_LIMIT = 1e12


class NotCoveredError(ValueError):
    pass


class SingularSensorsError(np.linalg.LinAlgError):
    pass


def _points(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 0:
        a = a[None, None]
    elif a.ndim == 1:
        a = a[:, None]
    return a


@dataclass
class EtaNet:
    """Points ``z_1..z_m`` such that every point of ``box`` lies within ``eta`` of one."""

    points: np.ndarray
    eta: float
    box: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        self.points = _points(self.points)
        if self.eta <= 0:
            raise ValueError("eta must be positive")

    @classmethod
    def grid(cls, lo, hi, eta: float, spacing: float | None = None) -> "EtaNet":
        """Uniform tensor grid over the box ``[lo, hi]`` with spacing at most ``spacing`` (default eta).

        Any point is then within ``spacing * sqrt(d) / 2`` of a grid point, which
        is below eta for d <= 3.
        """
        lo, hi = np.atleast_1d(lo).astype(float), np.atleast_1d(hi).astype(float)
        spacing = eta if spacing is None else spacing
        axes = [np.linspace(a, b, int(np.ceil((b - a) / spacing)) + 1) for a, b in zip(lo, hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        return cls(pts, eta, (lo, hi))

    @property
    def m(self) -> int:
        return self.points.shape[0]

    def covers(self, probe_step: float | None = None) -> bool:
        """Check the net property by probing the box at resolution eta/10."""
        if self.box is None:
            raise ValueError("net has no declared box")
        lo, hi = self.box
        step = probe_step or self.eta / 10
        axes = [np.linspace(a, b, int(np.ceil((b - a) / step)) + 1) for a, b in zip(lo, hi)]
        probes = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
        return bool(np.all(_nearest_distance(probes, self.points) < self.eta))


def _nearest_distance(y: np.ndarray, z: np.ndarray, chunk: int = 4096) -> np.ndarray:
    out = np.empty(y.shape[0])
    for s in range(0, y.shape[0], chunk):
        d = np.linalg.norm(y[s : s + chunk, None, :] - z[None, :, :], axis=2)
        out[s : s + chunk] = d.min(axis=1)
    return out


def t_star(y, z_j, eta: float) -> float:
    """Hat function ``max(0, 1 - |y - z_j| / eta)``."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    diff = np.atleast_1d(np.asarray(y, dtype=np.float64) - np.asarray(z_j, dtype=np.float64))
    return float(max(0.0, 1.0 - np.linalg.norm(diff) / eta))


def partition_matrix(y, net: EtaNet) -> np.ndarray:
    """Rows ``[T_1(y_i), ..., T_m(y_i)]`` for every point ``y_i``; each row sums to one."""
    y = _points(y)
    dist = np.linalg.norm(y[:, None, :] - net.points[None, :, :], axis=2)
    raw = np.maximum(0.0, 1.0 - dist / net.eta)
    total = raw.sum(axis=1)
    bad = np.flatnonzero(total <= 0)
    if bad.size:
        raise NotCoveredError(f"point {y[bad[0]]} not covered by eta-net (eta={net.eta})")
    return raw / total[:, None]


def t_kj(y, net: EtaNet, j: int) -> float:
    return float(partition_matrix(np.atleast_1d(y)[None], net)[0, j])


def interpolate_uk(u_at_net, net: EtaNet, y) -> np.ndarray:
    """``u_k(y) = sum_j u(z_j) T_j(y)``."""
    u_at_net = np.asarray(u_at_net, dtype=np.float64)
    if u_at_net.shape != (net.m,):
        raise ValueError(f"expected {net.m} net values, got {u_at_net.shape}")
    return partition_matrix(y, net) @ u_at_net


@dataclass
class ReconstructionOperator:
    T_y: np.ndarray
    T_z: np.ndarray
    M: np.ndarray
    v: np.ndarray
    condition: float
    eps_u: float
    delta: float | None = None
    net: EtaNet | None = field(default=None, repr=False)
    y_sensors: np.ndarray | None = field(default=None, repr=False)
    z_sensors: np.ndarray | None = field(default=None, repr=False)

    def residual(self) -> float:
        """Frobenius norm of ``v T_y - T_z``."""
        return float(np.linalg.norm(self.v @ self.T_y - self.T_z))

    def norm(self) -> float:
        return float(np.linalg.svd(self.v, compute_uv=False)[0])


def build_reconstruction(net: EtaNet, y_sensors, z_sensors, eps_u: float = 1.0, delta: float | None = None) -> ReconstructionOperator:
    """Assemble ``T_y``, ``T_z``, ``M = T_y^T T_y`` and ``v = T_z M^{-1} T_y^T``."""
    y_sensors, z_sensors = _points(y_sensors), _points(z_sensors)
    T_y = partition_matrix(y_sensors, net)
    T_z = partition_matrix(z_sensors, net)
    M = T_y.T @ T_y
    cond = np.linalg.cond(M) if T_y.shape[0] >= T_y.shape[1] else np.inf
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularSensorsError(
            f"sensors outside K_y: M not invertible (condition {cond:.2e}, "
            f"N={T_y.shape[0]}, C_delta={T_y.shape[1]})"
        )
    factor = scipy.linalg.cho_factor(M)
    X = scipy.linalg.cho_solve(factor, T_y.T)  # M^{-1} T_y^T
    # one step of iterative refinement
    X += scipy.linalg.cho_solve(factor, T_y.T - M @ X)
    v = T_z @ X
    return ReconstructionOperator(T_y, T_z, M, v, float(cond), eps_u, delta, net, y_sensors, z_sensors)


@dataclass
class KyCheck:
    member: bool
    reason: str
    v_norm: float
    bound: float
    condition: float


def check_ky_membership(op: ReconstructionOperator, C: int, delta: float) -> KyCheck:
    """Decide whether the sensors satisfy ``M`` invertible and ``|v|_2 <= eps_u / (2 sqrt(C delta^2)) - 1``."""
    bound = op.eps_u / (2.0 * np.sqrt(C * delta**2)) - 1.0
    v_norm = op.norm()
    if not np.isfinite(op.condition) or op.condition > COND_LIMIT:
        return KyCheck(False, "M not invertible", v_norm, bound, op.condition)
    if bound < 0:
        return KyCheck(False, "norm bound is negative", v_norm, bound, op.condition)
    if v_norm > bound:
        return KyCheck(False, f"|v| = {v_norm:.4g} exceeds bound {bound:.4g}", v_norm, bound, op.condition)
    return KyCheck(True, "ok", v_norm, bound, op.condition)


def reconstruction_identity_check(op: ReconstructionOperator, u_at_net) -> float:
    """``max |v u_k(y_hat) - u_k(z_hat)|`` for the interpolant with net values ``u_at_net``."""
    u_at_net = np.asarray(u_at_net, dtype=np.float64)
    if op.net is not None:
        lhs = op.v @ interpolate_uk(u_at_net, op.net, op.y_sensors)
        rhs = interpolate_uk(u_at_net, op.net, op.z_sensors)
    else:
        lhs = op.v @ (op.T_y @ u_at_net)
        rhs = op.T_z @ u_at_net
    return float(np.max(np.abs(lhs - rhs))) if lhs.size else 0.0


def block_repeat(r_sensors, n: int) -> np.ndarray:
    """Sensor set consisting of ``n`` stacked copies of ``r_sensors``."""
    return np.concatenate([_points(r_sensors)] * n, axis=0)


def pseudo_inverse_norm(T_y: np.ndarray) -> float:
    """Operator 2-norm of ``M^{-1} T_y^T`` computed by SVD."""
    M = T_y.T @ T_y
    return float(np.linalg.svd(np.linalg.solve(M, T_y.T), compute_uv=False)[0])


def block_repeat_norm_prediction(T_r: np.ndarray, n: int) -> float:
    """Closed form ``sqrt(|(T_r^T T_r)^{-1}|_2 / n)`` for an ``n``-fold repeated sensor set."""
    inv = np.linalg.inv(T_r.T @ T_r)
    return float(np.sqrt(np.linalg.norm(inv, 2) / n))


def matrix_rank(A: np.ndarray, rtol: float = 1e-10) -> int:
    s = np.linalg.svd(A, compute_uv=False)
    return int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0


def run_battery(seed: int = 0, n_probes: int = 10_000, n_configs: int = 50) -> dict:
    """Seeded battery of the oracle checks; returns a JSON-ready report."""
    rng = np.random.default_rng(seed)
    report: dict = {"seed": seed}

    # partition of unity on a 2D box
    net = EtaNet.grid([0.0, 0.0], [1.0, 1.0], eta=0.15, spacing=0.1)
    probes = rng.uniform(0.0, 1.0, size=(n_probes, 2))
    sums = partition_matrix(probes, net).sum(axis=1)
    report["partition_of_unity_max_dev"] = float(np.max(np.abs(sums - 1.0)))
    report["net_covers_box"] = net.covers()

    # reconstruction identity on seeded 1D configurations, every canonical basis input
    worst_identity, worst_residual = 0.0, 0.0
    for _ in range(n_configs):
        m = int(rng.integers(4, 12))
        net1 = EtaNet.grid(0.0, 1.0, eta=1.5 / (m - 1), spacing=1.0 / (m - 1))
        y = rng.uniform(0.0, 1.0, size=int(rng.integers(2 * net1.m, 4 * net1.m)))
        z = rng.uniform(0.0, 1.0, size=int(rng.integers(2, 8)))
        try:
            op = build_reconstruction(net1, y, z)
        except SingularSensorsError:
            continue
        worst_residual = max(worst_residual, op.residual())
        for j in range(net1.m):
            worst_identity = max(worst_identity, reconstruction_identity_check(op, np.eye(net1.m)[j]))
    report["identity_max_error"] = worst_identity
    report["vT_minus_T_z_max_frobenius"] = worst_residual

    # block-repeat norm law
    net1 = EtaNet.grid(0.0, 1.0, eta=0.3, spacing=0.2)
    r = np.sort(rng.uniform(0.0, 1.0, size=2 * net1.m))
    T_r = partition_matrix(r, net1)
    law = []
    for n in (1, 2, 4, 8, 16):
        T_y = partition_matrix(block_repeat(r, n), net1)
        law.append(abs(pseudo_inverse_norm(T_y) - block_repeat_norm_prediction(T_r, n)))
    report["block_repeat_max_error"] = float(max(law))

    # rank law
    rank_ok = True
    for _ in range(20):
        net1 = EtaNet.grid(0.0, 1.0, eta=0.25, spacing=0.125)
        y = rng.uniform(0.0, 1.0, size=int(rng.integers(1, 2 * net1.m)))
        T_y = partition_matrix(y, net1)
        M = T_y.T @ T_y
        rank_ok &= matrix_rank(M, 1e-12) == matrix_rank(T_y, 1e-6) <= min(T_y.shape)
    report["rank_law_holds"] = bool(rank_ok)

    report["passed"] = bool(
        report["partition_of_unity_max_dev"] < 1e-12
        and report["identity_max_error"] < 1e-8
        and report["vT_minus_T_z_max_frobenius"] < 1e-8
        and report["block_repeat_max_error"] < 1e-10
        and report["rank_law_holds"]
    )
    return report
