"""Dense networks with hand-written reverse-mode gradients and an Adam optimizer.

Every network stores its weights as views into one flat float64 buffer, so a
model's full parameter set is a single contiguous vector. That vector is what
the optimizer updates and what gets serialized.

An :class:`Mlp` may hold ``members`` independent networks of identical shape
that all read the same input. BelNet uses this for its C projection nets and K
nonlinear nets; a plain network is simply ``members=1``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

ACTIVATIONS = ("tanh", "relu", "sigmoid", "identity")


def activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    if name == "identity":
        return z
    raise ValueError(f"unknown activation {name!r}")


def activation_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Derivative of the activation, given pre-activation ``z`` and output ``a``."""
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "identity":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class DenseLayer:
    """Affine map followed by an elementwise activation.

    ``weights`` has shape ``(members, out_dim, in_dim)`` and ``bias`` has shape
    ``(members, out_dim)``, or is None for a bias-free layer.
    """

    weights: np.ndarray
    bias: np.ndarray | None
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 3:
            raise ValueError("weights must have shape (members, out_dim, in_dim)")
        if self.bias is not None and self.bias.shape != self.weights.shape[:2]:
            raise ValueError(
                f"bias shape {self.bias.shape} does not match weights {self.weights.shape}"
            )

    @property
    def members(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[2]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def n_params(self) -> int:
        return self.weights.size + (0 if self.bias is None else self.bias.size)


@dataclass
class MlpCache:
    x: np.ndarray
    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)
    vector_input: bool = False


class Mlp:
    """A stack of :class:`DenseLayer` objects evaluated on batched input.

    Input is ``(batch, in_dim)`` (or a single vector). Output is
    ``(batch, out_dim)`` for a single-member net and
    ``(batch, members, out_dim)`` otherwise.
    """

    def __init__(self, layers: Sequence[DenseLayer]):
        if not layers:
            raise ValueError("an Mlp needs at least one layer")
        members = layers[0].members
        for i, (a, b) in enumerate(zip(layers[:-1], layers[1:])):
            if a.out_dim != b.in_dim:
                raise ValueError(
                    f"layer {i + 1} expects {b.in_dim} inputs but layer {i} gives {a.out_dim}"
                )
        if any(layer.members != members for layer in layers):
            raise ValueError("all layers must have the same member count")
        self.layers = list(layers)
        self.param_count = sum(layer.n_params for layer in self.layers)

    @property
    def members(self) -> int:
        return self.layers[0].members

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in the fixed flattening order."""
        out = []
        for layer in self.layers:
            out.append(layer.weights)
            if layer.bias is not None:
                out.append(layer.bias)
        return out

    def bind(self, flat: np.ndarray) -> None:
        """Re-point every parameter array at a slice of ``flat`` (copying values in)."""
        if flat.shape != (self.param_count,):
            raise ValueError(f"expected flat vector of length {self.param_count}")
        offset = 0
        for layer in self.layers:
            n = layer.weights.size
            view = flat[offset : offset + n].reshape(layer.weights.shape)
            view[...] = layer.weights
            layer.weights = view
            offset += n
            if layer.bias is not None:
                n = layer.bias.size
                view = flat[offset : offset + n].reshape(layer.bias.shape)
                view[...] = layer.bias
                layer.bias = view
                offset += n

    def member(self, i: int) -> "Mlp":
        """Copy of the ``i``-th member as a standalone single-member net."""
        return Mlp(
            [
                DenseLayer(
                    layer.weights[i : i + 1].copy(),
                    None if layer.bias is None else layer.bias[i : i + 1].copy(),
                    layer.activation,
                )
                for layer in self.layers
            ]
        )

    def forward(self, x: np.ndarray, cache: bool = False):
        x = np.asarray(x, dtype=np.float64)
        vector_input = x.ndim == 1
        if vector_input:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(
                f"layer 0 expects input width {self.in_dim}, got shape {x.shape}"
            )
        store = MlpCache(x=x, vector_input=vector_input)
        a = x  # (B, in) for the first layer, (G, B, in) afterwards
        for i, layer in enumerate(self.layers):
            if i == 0:
                # one GEMM for all members sharing the input
                G, o, n_in = layer.weights.shape
                z = (a @ layer.weights.reshape(G * o, n_in).T).reshape(-1, G, o).transpose(1, 0, 2)
            else:
                z = np.matmul(a, layer.weights.transpose(0, 2, 1))
            if layer.bias is not None:
                z += layer.bias[:, None, :]
            a = activate(layer.activation, z)
            if cache:
                store.pre.append(z)
                store.post.append(a)
        out = self._shape_output(a, vector_input)
        return (out, store) if cache else out

    def _shape_output(self, a: np.ndarray, vector_input: bool) -> np.ndarray:
        out = a.transpose(1, 0, 2)  # (B, G, out)
        if self.members == 1:
            out = out[:, 0, :]
        if vector_input:
            out = out[0]
        return out

    def backward(self, store: MlpCache, upstream: np.ndarray, grads: list[np.ndarray] | None = None):
        """Reverse pass. Returns (parameter gradients in ``arrays()`` order, input gradient).

        When ``grads`` is given, gradients are accumulated into those arrays.
        """
        g = np.asarray(upstream, dtype=np.float64)
        if store.vector_input:
            g = g[None]
        if self.members == 1 and g.ndim == 2:
            g = g[:, None, :]
        expected = (store.x.shape[0], self.members, self.out_dim)
        if g.shape != expected:
            raise ValueError(f"upstream shape {g.shape} does not match output {expected}")
        g = g.transpose(1, 0, 2)
        if grads is None:
            grads = [np.zeros_like(a) for a in self.arrays()]
        slots = self._grad_slots()
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            dz = g * activation_grad(layer.activation, store.pre[i], store.post[i])
            a_in = store.post[i - 1] if i > 0 else store.x
            w_slot, b_slot = slots[i]
            if i > 0:
                grads[w_slot] += np.matmul(dz.transpose(0, 2, 1), a_in)
                g = np.matmul(dz, layer.weights)
            else:
                G, o, n_in = layer.weights.shape
                flat_dz = dz.transpose(1, 0, 2).reshape(-1, G * o)
                grads[w_slot] += (flat_dz.T @ a_in).reshape(G, o, n_in)
                g = flat_dz @ layer.weights.reshape(G * o, n_in)
            if b_slot is not None:
                grads[b_slot] += dz.sum(axis=1)
        grad_x = g[0] if store.vector_input else g
        return grads, grad_x

    def _grad_slots(self) -> list[tuple[int, int | None]]:
        slots, k = [], 0
        for layer in self.layers:
            if layer.bias is None:
                slots.append((k, None))
                k += 1
            else:
                slots.append((k, k + 1))
                k += 2
        return slots

    def describe(self) -> list[dict]:
        return [
            {
                "members": layer.members,
                "in_dim": layer.in_dim,
                "out_dim": layer.out_dim,
                "bias": layer.bias is not None,
                "activation": layer.activation,
            }
            for layer in self.layers
        ]


def init_params(
    sizes: Sequence[int],
    seed: int | np.random.Generator = 0,
    activation: str = "tanh",
    output_activation: str = "identity",
    output_bias: bool = True,
    members: int = 1,
) -> Mlp:
    """Build an Mlp with Glorot-uniform weights and zero biases.

    ``sizes`` lists layer widths from input to output, e.g. ``[2, 3, 1]``.
    """
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2:
        raise ValueError("sizes needs at least an input and an output width")
    if any(s <= 0 for s in sizes) or members <= 0:
        raise ValueError(f"all dimensions must be positive, got {sizes} x {members}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    layers = []
    n_layers = len(sizes) - 1
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == n_layers - 1
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(members, fan_out, fan_in))
        b = None if (last and not output_bias) else np.zeros((members, fan_out))
        layers.append(DenseLayer(w, b, output_activation if last else activation))
    return Mlp(layers)


def mlp_forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    return net.forward(x)


def mlp_backward(net: Mlp, x: np.ndarray, upstream: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``upstream . net(x)`` w.r.t. the flat parameters and ``x``."""
    _, store = net.forward(x, cache=True)
    grads, grad_x = net.backward(store, upstream)
    return flatten(grads), grad_x


def flatten(arrays: Sequence[np.ndarray]) -> np.ndarray:
    if not arrays:
        return np.zeros(0)
    return np.concatenate([np.ravel(a) for a in arrays])


def unflatten(flat: np.ndarray, shapes: Sequence[tuple[int, ...]]) -> list[np.ndarray]:
    out, offset = [], 0
    for shape in shapes:
        n = int(np.prod(shape))
        out.append(flat[offset : offset + n].reshape(shape).copy())
        offset += n
    if offset != flat.size:
        raise ValueError(f"layout covers {offset} values but vector has {flat.size}")
    return out


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **hyper) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), **hyper)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. Inputs are not modified."""
    if not (params.shape == grads.shape == state.first_moment.shape):
        raise ValueError(
            f"length mismatch: params {params.shape}, grads {grads.shape}, "
            f"state {state.first_moment.shape}"
        )
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps_hat)
    new_state = AdamState(m, v, t, state.lr, state.beta1, state.beta2, state.eps_hat)
    return new_params, new_state


def adam_step_(state: AdamState, params: np.ndarray, grads: np.ndarray) -> None:
    """In-place variant of :func:`adam_step` used by the training loop."""
    state.step_count += 1
    t = state.step_count
    m, v = state.first_moment, state.second_moment
    m *= state.beta1
    m += (1.0 - state.beta1) * grads
    v *= state.beta2
    v += (1.0 - state.beta2) * grads * grads
    step = state.lr / (1.0 - state.beta1**t)
    denom = np.sqrt(v / (1.0 - state.beta2**t))
    denom += state.eps_hat
    params -= step * m / denom


# ---------------------------------------------------------------------------
# Parameter vector files

MAGIC = b"BELNETPV"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sHxx16sQ")


def layout_hash(layout: object) -> bytes:
    """16-byte digest of a JSON-serializable layout description."""
    blob = json.dumps(layout, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).digest()[:16]


def save_param_vector(path: str | Path, values: np.ndarray, layout: object, extra: dict | None = None) -> None:
    """Write ``values`` as little-endian float64 with a header, plus ``<path>.json``."""
    path = Path(path)
    values = np.ascontiguousarray(values, dtype="<f8")
    digest = layout_hash(layout)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, digest, values.size))
        fh.write(values.tobytes())
    sidecar = {
        "format": "belnet-param-vector",
        "version": FORMAT_VERSION,
        "layout_hash": digest.hex(),
        "n_values": int(values.size),
        "layout": layout,
    }
    if extra:
        sidecar.update(extra)
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_param_vector(path: str | Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    raw = path.read_bytes()
    magic, version, digest, n = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path} is not a parameter vector file")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported format version {version}")
    values = np.frombuffer(raw, dtype="<f8", count=n, offset=_HEADER.size).astype(np.float64)
    sidecar = json.loads(Path(str(path) + ".json").read_text())
    if layout_hash(sidecar["layout"]) != digest:
        raise ValueError("layout hash in header does not match the JSON sidecar")
    return values, sidecar
