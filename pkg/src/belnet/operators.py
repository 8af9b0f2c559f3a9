"""BelNet, vanilla BelNet and DeepONet as differentiable compositions of Mlps.

All three share one calling convention for a batch of ``B`` input functions
and ``Q`` query points:

* ``sensors``: ``(B, N, d_in)`` sensor locations (``(B, N)`` when ``d_in == 1``)
* ``u``: ``(B, N)`` input-function values at those sensors
* ``x``: ``(Q, d)`` query coordinates
* ``owner``: ``(Q,)`` index of the input function each query belongs to
  (defaults to ``arange(B)`` when ``Q == B``)

The function-dependent branch is evaluated once per input function and shared
by all of its queries.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .nn import Mlp, activate, activation_grad, init_params


def _param_views(flat: np.ndarray, net: Mlp, offset: int) -> tuple[list[np.ndarray], int]:
    views = []
    for a in net.arrays():
        views.append(flat[offset : offset + a.size].reshape(a.shape))
        offset += a.size
    return views, offset


@dataclass
class SensorSet:
    """N sensor locations of dimension ``d_in``, flattened point-major."""

    locations: np.ndarray

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=np.float64)
        if loc.ndim == 1:
            loc = loc[:, None]
        if loc.ndim != 2 or loc.shape[0] < 1:
            raise ValueError("a SensorSet needs at least one location")
        self.locations = loc

    @property
    def n(self) -> int:
        return self.locations.shape[0]

    @property
    def dim(self) -> int:
        return self.locations.shape[1]

    def flat(self) -> np.ndarray:
        return self.locations.reshape(-1)

    def inside(self, lo, hi) -> bool:
        return bool(np.all(self.locations >= lo) and np.all(self.locations <= hi))


class OperatorModel:
    """Shared plumbing: flat parameter buffer, gradient views, call conventions."""

    kind = "base"

    def __init__(self, nets: dict[str, Mlp], config: dict):
        self.nets = nets
        self.config = config
        self.param_count = sum(net.param_count for net in nets.values())
        self.params = np.zeros(self.param_count)
        offset = 0
        for net in nets.values():
            net.bind(self.params[offset : offset + net.param_count])
            offset += net.param_count

    # -- parameters ---------------------------------------------------------
    def get_params_flat(self) -> np.ndarray:
        return self.params.copy()

    def set_params_flat(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.params.shape:
            raise ValueError(f"expected {self.param_count} parameters, got {values.shape}")
        self.params[...] = values

    def layout(self) -> dict:
        return {
            "kind": self.kind,
            "config": self.config,
            "nets": {name: net.describe() for name, net in self.nets.items()},
        }

    def _grad_buffers(self) -> tuple[np.ndarray, dict[str, list[np.ndarray]]]:
        grad = np.zeros(self.param_count)
        views, offset = {}, 0
        for name, net in self.nets.items():
            views[name], offset = _param_views(grad, net, offset)
        return grad, views

    # -- inputs -------------------------------------------------------------
    def _prepare(self, sensors, u, x, owner):
        u = np.asarray(u, dtype=np.float64)
        if u.ndim == 1:
            u = u[None, :]
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        B = u.shape[0]
        if owner is None:
            if x.shape[0] != B:
                raise ValueError(
                    f"{x.shape[0]} queries for {B} input functions; pass owner= to map them"
                )
            owner = np.arange(B)
        owner = np.asarray(owner, dtype=np.intp)
        if owner.shape != (x.shape[0],):
            raise ValueError("owner must have one entry per query")
        if sensors is not None:
            sensors = np.asarray(sensors, dtype=np.float64)
            if sensors.ndim == 1:
                sensors = sensors[None, :]
            if sensors.ndim == 2:
                sensors = sensors[:, :, None]
            if sensors.shape[:2] != u.shape:
                raise ValueError(
                    f"sensor array {sensors.shape} does not match values {u.shape}"
                )
        return sensors, u, x, owner

    def predict(self, sensors, u, x, owner=None) -> np.ndarray:
        return self.forward(sensors, u, x, owner)

    def forward(self, sensors, u, x, owner=None, cache: bool = False):
        raise NotImplementedError

    def backward(self, store, upstream: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def value_and_grad(self, sensors, u, x, owner, upstream):
        out, store = self.forward(sensors, u, x, owner, cache=True)
        return out, self.backward(store, upstream)


def _scatter_rows(owner: np.ndarray, rows: np.ndarray, n: int) -> np.ndarray:
    if owner.size == n and np.array_equal(owner, np.arange(n)):
        return rows
    out = np.zeros((n, rows.shape[1]))
    np.add.at(out, owner, rows)
    return out


class BelNet(OperatorModel):
    """Projection nets -> P u -> nonlinear nets -> h, paired with construction net features.

    Parameters
    ----------
    n_sensors, d_in : sensor count N and sensor coordinate dimension.
    d : query dimension.
    n_basis : C, number of projection nets (rows of P).
    width : K, number of nonlinear nets and construction features.
    nonlinear_width : I, hidden width of every nonlinear net.
    projection_hidden : hidden width(s) of each projection net.
    construction_hidden : hidden widths of the construction net; empty gives
        the single layer ``a_x(Q x + b_x)``.
    """

    kind = "belnet"

    def __init__(
        self,
        n_sensors: int,
        d: int = 1,
        d_in: int = 1,
        n_basis: int = 32,
        width: int = 32,
        nonlinear_width: int = 64,
        projection_hidden: int | Sequence[int] = 64,
        construction_hidden: Sequence[int] = (),
        activation: str = "tanh",
        seed: int = 0,
    ):
        hidden = [projection_hidden] if np.isscalar(projection_hidden) else list(projection_hidden)
        config = dict(
            n_sensors=n_sensors, d=d, d_in=d_in, n_basis=n_basis, width=width,
            nonlinear_width=nonlinear_width, projection_hidden=hidden,
            construction_hidden=list(construction_hidden), activation=activation, seed=seed,
        )
        rng = np.random.default_rng(seed)
        nets = {
            "projection": init_params(
                [n_sensors * d_in, *hidden, n_sensors], rng, activation,
                output_bias=False, members=n_basis,
            ),
            "nonlinear": init_params(
                [n_basis, nonlinear_width, 1], rng, activation,
                output_bias=False, members=width,
            ),
            "construction": init_params(
                [d, *construction_hidden, width], rng, activation, output_activation=activation,
            ),
        }
        super().__init__(nets, config)

    def projection_matrix(self, sensors) -> np.ndarray:
        """P for each sensor set: ``(B, C, N)``."""
        sensors = np.asarray(sensors, dtype=np.float64)
        B = sensors.shape[0]
        return self.nets["projection"].forward(sensors.reshape(B, -1)).reshape(B, -1, self.config["n_sensors"])

    def coefficients(self, sensors, u) -> np.ndarray:
        """P u, the projection coefficients: ``(B, C)``."""
        u = np.atleast_2d(np.asarray(u, dtype=np.float64))
        sensors = np.asarray(sensors, dtype=np.float64).reshape(u.shape[0], -1)
        return np.einsum("bcn,bn->bc", self.projection_matrix(sensors), u)

    def forward(self, sensors, u, x, owner=None, cache: bool = False):
        sensors, u, x, owner = self._prepare(sensors, u, x, owner)
        N = self.config["n_sensors"]
        if u.shape[1] != N:
            raise ValueError(f"model was built for {N} sensors, got {u.shape[1]}")
        B = u.shape[0]
        Y = sensors.reshape(B, -1)
        P, c_proj = self.nets["projection"].forward(Y, cache=True)
        P = P.reshape(B, -1, N)
        coeff = np.einsum("bcn,bn->bc", P, u)
        h3, c_nl = self.nets["nonlinear"].forward(coeff, cache=True)
        h = h3.reshape(B, -1)
        T, c_con = self.nets["construction"].forward(x, cache=True)
        out = np.einsum("qk,qk->q", h[owner], T)
        if not cache:
            return out
        return out, (u, owner, h, T, c_proj, c_nl, c_con)

    def backward(self, store, upstream):
        u, owner, h, T, c_proj, c_nl, c_con = store
        g = np.asarray(upstream, dtype=np.float64)
        grad, views = self._grad_buffers()
        self.nets["construction"].backward(c_con, g[:, None] * h[owner], views["construction"])
        dh = _scatter_rows(owner, g[:, None] * T, h.shape[0])
        _, dcoeff = self.nets["nonlinear"].backward(c_nl, dh[:, :, None], views["nonlinear"])
        dP = dcoeff[:, :, None] * u[:, None, :]
        self.nets["projection"].backward(c_proj, dP, views["projection"])
        return grad


class VanillaBelNet(OperatorModel):
    """K projection nets p^k, optional K x K mixing layer W, value activation a_u.

    Output is ``sum_k a_x(q_k . x + b_k) * a_u((W P u)_k)``.
    """

    kind = "vanilla"

    def __init__(
        self,
        n_sensors: int,
        d: int = 1,
        d_in: int = 1,
        width: int = 32,
        projection_hidden: int | Sequence[int] = 64,
        construction_hidden: Sequence[int] = (),
        activation: str = "tanh",
        value_activation: str = "tanh",
        mixing: bool = True,
        seed: int = 0,
    ):
        hidden = [projection_hidden] if np.isscalar(projection_hidden) else list(projection_hidden)
        config = dict(
            n_sensors=n_sensors, d=d, d_in=d_in, width=width, projection_hidden=hidden,
            construction_hidden=list(construction_hidden), activation=activation,
            value_activation=value_activation, mixing=mixing, seed=seed,
        )
        rng = np.random.default_rng(seed)
        nets = {
            "projection": init_params(
                [n_sensors * d_in, *hidden, n_sensors], rng, activation,
                output_bias=False, members=width,
            ),
        }
        if mixing:
            nets["mixing"] = init_params(
                [width, width], rng, output_activation=value_activation, output_bias=False
            )
        nets["construction"] = init_params(
            [d, *construction_hidden, width], rng, activation, output_activation=activation
        )
        super().__init__(nets, config)

    def forward(self, sensors, u, x, owner=None, cache: bool = False):
        sensors, u, x, owner = self._prepare(sensors, u, x, owner)
        N = self.config["n_sensors"]
        if u.shape[1] != N:
            raise ValueError(f"model was built for {N} sensors, got {u.shape[1]}")
        B = u.shape[0]
        P, c_proj = self.nets["projection"].forward(sensors.reshape(B, -1), cache=True)
        P = P.reshape(B, -1, N)
        pu = np.einsum("bkn,bn->bk", P, u)
        if self.config["mixing"]:
            h, c_mix = self.nets["mixing"].forward(pu, cache=True)
        else:
            h, c_mix = activate(self.config["value_activation"], pu), None
        T, c_con = self.nets["construction"].forward(x, cache=True)
        out = np.einsum("qk,qk->q", h[owner], T)
        if not cache:
            return out
        return out, (u, owner, pu, h, T, c_proj, c_mix, c_con)

    def backward(self, store, upstream):
        u, owner, pu, h, T, c_proj, c_mix, c_con = store
        g = np.asarray(upstream, dtype=np.float64)
        grad, views = self._grad_buffers()
        self.nets["construction"].backward(c_con, g[:, None] * h[owner], views["construction"])
        dh = _scatter_rows(owner, g[:, None] * T, h.shape[0])
        if self.config["mixing"]:
            _, dpu = self.nets["mixing"].backward(c_mix, dh, views["mixing"])
        else:
            dpu = dh * activation_grad(self.config["value_activation"], pu, h)
        self.nets["projection"].backward(c_proj, dpu[:, :, None] * u[:, None, :], views["projection"])
        return grad


class DeepONet(OperatorModel):
    """Unstacked DeepONet: ``branch(u) . trunk(x)``.

    The branch reads sensor values only, in a fixed order; sensor locations are
    accepted for interface parity and ignored.
    """

    kind = "deeponet"

    def __init__(
        self,
        n_sensors: int,
        d: int = 1,
        d_in: int = 1,
        width: int = 32,
        branch_hidden: Sequence[int] = (64,),
        trunk_hidden: Sequence[int] = (),
        activation: str = "tanh",
        seed: int = 0,
    ):
        config = dict(
            n_sensors=n_sensors, d=d, d_in=d_in, width=width, branch_hidden=list(branch_hidden),
            trunk_hidden=list(trunk_hidden), activation=activation, seed=seed,
        )
        rng = np.random.default_rng(seed)
        nets = {
            "branch": init_params([n_sensors, *branch_hidden, width], rng, activation, output_bias=False),
            "trunk": init_params([d, *trunk_hidden, width], rng, activation, output_activation=activation),
        }
        super().__init__(nets, config)

    def forward(self, sensors, u, x, owner=None, cache: bool = False):
        _, u, x, owner = self._prepare(None, u, x, owner)
        N = self.config["n_sensors"]
        if u.shape[1] != N:
            raise ValueError(
                f"DeepONet branch takes exactly {N} values at fixed sensors, got {u.shape[1]}"
            )
        b, c_br = self.nets["branch"].forward(u, cache=True)
        t, c_tr = self.nets["trunk"].forward(x, cache=True)
        out = np.einsum("qk,qk->q", b[owner], t)
        if not cache:
            return out
        return out, (owner, b, t, c_br, c_tr)

    def backward(self, store, upstream):
        owner, b, t, c_br, c_tr = store
        g = np.asarray(upstream, dtype=np.float64)
        grad, views = self._grad_buffers()
        self.nets["trunk"].backward(c_tr, g[:, None] * b[owner], views["trunk"])
        db = _scatter_rows(owner, g[:, None] * t, b.shape[0])
        self.nets["branch"].backward(c_br, db, views["branch"])
        return grad


ARCHITECTURES = {cls.kind: cls for cls in (BelNet, VanillaBelNet, DeepONet)}


def build_model(kind: str, **kwargs) -> OperatorModel:
    try:
        cls = ARCHITECTURES[kind]
    except KeyError:
        raise ValueError(f"unknown architecture {kind!r}; choose from {sorted(ARCHITECTURES)}") from None
    return cls(**kwargs)


def count_params(model: OperatorModel) -> int:
    return model.param_count


def belnet_forward(model: BelNet, sensors, u_values, x) -> float:
    """Single input function, single query point."""
    return float(model.forward(np.asarray(sensors)[None], np.asarray(u_values)[None], np.atleast_1d(x)[None])[0])


def vanilla_belnet_forward(model: VanillaBelNet, sensors, u_values, x) -> float:
    return float(model.forward(np.asarray(sensors)[None], np.asarray(u_values)[None], np.atleast_1d(x)[None])[0])


def deeponet_forward(model: DeepONet, u_values, x) -> float:
    return float(model.forward(None, np.asarray(u_values)[None], np.atleast_1d(x)[None])[0])
