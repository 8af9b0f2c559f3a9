import numpy as np
import pytest

from belnet.nn import (
    AdamState,
    DenseLayer,
    Mlp,
    adam_step,
    adam_step_,
    flatten,
    init_params,
    load_param_vector,
    mlp_backward,
    mlp_forward,
    save_param_vector,
    unflatten,
)


def straight_line(net: Mlp, x):
    """Independent evaluation: explicit loops over rows and units, math.tanh for tanh."""
    import math

    act = {
        "tanh": math.tanh,
        "identity": lambda z: z,
        "relu": lambda z: max(z, 0.0),
        "sigmoid": lambda z: 1.0 / (1.0 + math.exp(-z)),
    }
    a = [float(v) for v in x]
    for layer in net.layers:
        W = layer.weights[0]
        out = []
        for j in range(W.shape[0]):
            z = sum(W[j, i] * a[i] for i in range(W.shape[1]))
            if layer.bias is not None:
                z += layer.bias[0, j]
            out.append(act[layer.activation](z))
        a = out
    return np.array(a)


def test_identity_layer():
    net = Mlp([DenseLayer(np.eye(2)[None], np.zeros((1, 2)), "identity")])
    np.testing.assert_array_equal(net.forward(np.array([1.0, 2.0])), [1.0, 2.0])


def test_tanh_of_zero():
    net = Mlp([DenseLayer(np.zeros((1, 1, 1)), np.zeros((1, 1)), "tanh")])
    np.testing.assert_array_equal(net.forward(np.array([5.0])), [0.0])


@pytest.mark.parametrize("act", ["tanh", "sigmoid", "relu"])
def test_forward_matches_straight_line_oracle(act):
    rng = np.random.default_rng(3)
    net = init_params([3, 5, 2], seed=7, activation=act)
    for layer in net.layers:
        if layer.bias is not None:
            layer.bias[...] = rng.normal(size=layer.bias.shape)
    for x in rng.normal(size=(4, 3)):
        np.testing.assert_allclose(net.forward(x), straight_line(net, x), rtol=0, atol=1e-14)


def test_members_are_independent_nets():
    net = init_params([3, 4, 2], seed=1, members=3)
    x = np.random.default_rng(0).normal(size=(5, 3))
    out = net.forward(x)
    assert out.shape == (5, 3, 2)
    for g in range(3):
        np.testing.assert_allclose(out[:, g], net.member(g).forward(x), atol=1e-15)


def test_linear_weight_gradient_is_input():
    net = Mlp([DenseLayer(np.array([[[2.0]]]), None, "identity")])
    grads, gx = mlp_backward(net, np.array([3.0]), np.array([1.0]))
    np.testing.assert_array_equal(grads, [3.0])
    np.testing.assert_array_equal(gx, [2.0])


def test_zero_upstream_gives_zero_gradients():
    net = init_params([3, 4, 2], seed=0)
    g, gx = mlp_backward(net, np.ones((2, 3)), np.zeros((2, 2)))
    assert not g.any() and not gx.any()


@pytest.mark.parametrize("members", [1, 3])
def test_gradient_matches_central_differences(members):
    rng = np.random.default_rng(11)
    net = init_params([3, 4, 5, 2], seed=5, members=members)
    flat = np.zeros(net.param_count)
    net.bind(flat)
    x = rng.normal(size=(6, 3))
    shape = (6, 2) if members == 1 else (6, members, 2)
    w = rng.normal(size=shape)
    analytic, gx = mlp_backward(net, x, w)
    step = 1e-5
    numeric = np.empty_like(flat)
    base = flat.copy()
    for i in range(flat.size):
        flat[i] = base[i] + step
        up = np.sum(w * net.forward(x))
        flat[i] = base[i] - step
        down = np.sum(w * net.forward(x))
        flat[i] = base[i]
        numeric[i] = (up - down) / (2 * step)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-8)
    num_x = np.empty_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += step
        xm[idx] -= step
        num_x[idx] = (np.sum(w * net.forward(xp)) - np.sum(w * net.forward(xm))) / (2 * step)
    np.testing.assert_allclose(gx, num_x, rtol=1e-5, atol=1e-8)


def test_init_deterministic_and_counted():
    a, b, c = init_params([2, 3, 1], 4), init_params([2, 3, 1], 4), init_params([2, 3, 1], 5)
    assert a.param_count == 2 * 3 + 3 + 3 * 1 + 1 == 13
    np.testing.assert_array_equal(flatten(a.arrays()), flatten(b.arrays()))
    assert not np.array_equal(flatten(a.arrays()), flatten(c.arrays()))


def test_glorot_bounds_and_zero_bias():
    net = init_params([50, 30, 1], seed=0)
    limit = np.sqrt(6 / 80)
    assert np.abs(net.layers[0].weights).max() <= limit
    assert not net.layers[0].bias.any()


@pytest.mark.parametrize("sizes", [[2], [2, 0, 1]])
def test_init_rejects_bad_sizes(sizes):
    with pytest.raises(ValueError):
        init_params(sizes)


def test_layer_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="expects"):
        Mlp([DenseLayer(np.zeros((1, 3, 2)), None, "tanh"), DenseLayer(np.zeros((1, 1, 4)), None, "tanh")])


def test_bind_keeps_values_and_views_buffer():
    net = init_params([2, 3, 1], seed=2)
    before = flatten(net.arrays())
    flat = np.zeros(net.param_count)
    net.bind(flat)
    np.testing.assert_array_equal(flat, before)
    flat[0] = 42.0
    assert net.layers[0].weights.flat[0] == 42.0


def test_flatten_roundtrip():
    arrays = [np.arange(6.0).reshape(2, 3), np.arange(4.0)]
    out = unflatten(flatten(arrays), [a.shape for a in arrays])
    for a, b in zip(arrays, out):
        np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        unflatten(np.zeros(5), [(2, 3)])


def test_adam_zero_gradient_keeps_params():
    state = AdamState(np.full(3, 0.5), np.full(3, 0.5))
    p = np.arange(3.0)
    new, st = adam_step(state, p, np.zeros(3))
    # the stored moments decay, the update direction is their bias-corrected ratio
    np.testing.assert_allclose(st.first_moment, 0.45)
    np.testing.assert_allclose(st.second_moment, 0.5 * 0.999)
    fresh = AdamState.zeros(3)
    new, _ = adam_step(fresh, p, np.zeros(3))
    np.testing.assert_array_equal(new, p)


def test_adam_first_step_is_lr_sign():
    g = np.array([0.3, -2.0, 1e-3])
    new, _ = adam_step(AdamState.zeros(3, lr=0.01), np.zeros(3), g)
    # m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps_hat)
    np.testing.assert_allclose(new, -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-15)
    np.testing.assert_allclose(new, -0.01 * np.sign(g), rtol=1e-5)


def test_adam_constant_gradient_limit():
    state, p = AdamState.zeros(2, lr=0.1), np.zeros(2)
    g = np.array([2.0, -0.5])
    for _ in range(2000):
        prev = p
        p, state = adam_step(state, p, g)
    np.testing.assert_allclose(np.abs(p - prev), 0.1, rtol=1e-6)


def test_adam_inplace_matches_functional():
    rng = np.random.default_rng(0)
    a, b = AdamState.zeros(4, lr=3e-3), AdamState.zeros(4, lr=3e-3)
    p1, p2 = rng.normal(size=4), None
    p2 = p1.copy()
    for _ in range(20):
        g = rng.normal(size=4)
        p1, a = adam_step(a, p1, g)
        adam_step_(b, p2, g)
    np.testing.assert_allclose(p1, p2, rtol=1e-14)


def test_adam_length_mismatch():
    with pytest.raises(ValueError, match="length mismatch"):
        adam_step(AdamState.zeros(3), np.zeros(2), np.zeros(2))


def test_mlp_forward_alias():
    net = init_params([2, 2], 0)
    np.testing.assert_array_equal(mlp_forward(net, np.ones(2)), net.forward(np.ones(2)))


def test_param_vector_roundtrip(tmp_path):
    values = np.random.default_rng(0).normal(size=17)
    layout = {"sizes": [2, 3, 1]}
    save_param_vector(tmp_path / "p.bin", values, layout, {"note": 1})
    out, side = load_param_vector(tmp_path / "p.bin")
    np.testing.assert_array_equal(out, values)
    assert side["note"] == 1 and side["n_values"] == 17


def test_param_vector_detects_tampering(tmp_path):
    save_param_vector(tmp_path / "p.bin", np.zeros(3), {"a": 1})
    side = tmp_path / "p.bin.json"
    side.write_text(side.read_text().replace('"a": 1', '"a": 2'))
    with pytest.raises(ValueError, match="layout hash"):
        load_param_vector(tmp_path / "p.bin")
    (tmp_path / "q.bin").write_bytes(b"NOTAFILE" + bytes(40))
    with pytest.raises(ValueError, match="not a parameter"):
        load_param_vector(tmp_path / "q.bin")
