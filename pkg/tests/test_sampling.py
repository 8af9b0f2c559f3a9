import numpy as np
import pytest

from belnet.pde import GridFunction, PdeConfig, burgers_ic, elliptic1d_homogenized, elliptic1d_solve_exact, uniform_axis
from belnet.sampling import (
    OperatorDataset,
    OperatorSample,
    PatchSpec,
    assemble_burgers_dataset,
    assemble_multiscale_dataset,
    burgers_sample_sensors,
    make_patch,
    observation_lattice,
    patch_offsets,
    unpack,
)


@pytest.fixture(scope="module")
def small_burgers():
    return assemble_burgers_dataset(n_train=4, n_test=3, seed=5, n_cells=128)


def linear_2d(a=1.0, b=2.0, c=0.5):
    x = uniform_axis(0, 1, 32)
    X, Y = np.meshgrid(x, x, indexing="ij")
    return GridFunction((x, x), a * X + b * Y + c)


def test_burgers_counts(small_burgers):
    train, test, record = small_burgers
    assert train.n_functions == 4 and train.n_sensors == 25
    np.testing.assert_array_equal(np.bincount(train.owner), 125)
    np.testing.assert_array_equal(np.bincount(test.owner), 151)
    # training times are the five snapshots before the terminal time
    np.testing.assert_allclose(np.unique(train.queries[:, 1]), [0.0, 0.06, 0.12, 0.18, 0.24])
    np.testing.assert_allclose(np.unique(test.queries[:, 1]), [0.3])
    assert len(record["s"]["train"]) == 4


def test_burgers_deterministic_and_seed_sensitive(small_burgers):
    train, _, _ = small_burgers
    again, _, _ = assemble_burgers_dataset(n_train=4, n_test=3, seed=5, n_cells=128)
    np.testing.assert_array_equal(train.sensors, again.sensors)
    np.testing.assert_array_equal(train.targets, again.targets)
    other, _, _ = assemble_burgers_dataset(n_train=4, n_test=3, seed=6, n_cells=128)
    assert not np.array_equal(train.sensors, other.sensors)
    # instances draw their own sensor sets
    assert not np.array_equal(train.sensors[0], train.sensors[1])


def test_burgers_prefix_stability():
    a, _, _ = assemble_burgers_dataset(n_train=2, n_test=1, seed=0, n_cells=64)
    b, _, _ = assemble_burgers_dataset(n_train=3, n_test=1, seed=0, n_cells=64)
    np.testing.assert_array_equal(a.sensors, b.sensors[:2])


def test_burgers_sensor_values_match_interpolation():
    ic = burgers_ic(2.5, 256)
    loc, vals = burgers_sample_sensors(ic, 25, 0)
    assert np.all(np.diff(loc) >= 0) and loc.min() >= 0 and loc.max() < 2 * np.pi
    x, v = ic.axes[0], ic.values
    idx = np.minimum((loc // (x[1] - x[0])).astype(int), x.size - 1)
    nxt = (idx + 1) % x.size
    w = (loc - x[idx]) / (x[1] - x[0])
    np.testing.assert_allclose(vals, (1 - w) * v[idx] + w * v[nxt], atol=1e-12)


def test_burgers_zero_amplitude_gives_zero_targets():
    ic = burgers_ic(0.0, 64)
    _, vals = burgers_sample_sensors(ic, 5, 1)
    assert not vals.any()


def test_patch_offsets():
    np.testing.assert_allclose(patch_offsets(3, 0.1, 1)[:, 0], [-0.1, 0.0, 0.1])
    assert patch_offsets(5, 1.0, 2).shape == (25, 2)


def test_size_one_patch_is_the_point():
    u0 = linear_2d()
    loc, vals = make_patch([0.3, 0.6], PatchSpec(1, 0.05, jitter=False), u0)
    np.testing.assert_allclose(loc, [[0.3, 0.6]])
    np.testing.assert_allclose(vals, [0.3 + 1.2 + 0.5])


def test_three_point_patch_candidates():
    x = uniform_axis(0, 1, 64)
    u0 = GridFunction((x,), x.copy())
    h = 1 / 32
    spec = PatchSpec(3, h)
    rng = np.random.default_rng(0)
    lefts, rights = set(), set()
    for _ in range(200):
        loc, _ = make_patch([0.5], spec, u0, rng)
        assert loc[1, 0] == 0.5  # centre is never jittered
        lefts.add(round(0.5 - loc[0, 0], 12))
        rights.add(round(loc[2, 0] - 0.5, 12))
    assert lefts == {round(0.5 * h, 12), round(h, 12), round(1.5 * h, 12)}
    assert rights == lefts


def test_constant_input_values_independent_of_jitter():
    x = uniform_axis(0, 1, 16)
    u0 = GridFunction((x, x), np.full((17, 17), 3.0))
    _, vals = make_patch([0.4, 0.4], PatchSpec(5, 0.05), u0, 1)
    np.testing.assert_array_equal(vals, 3.0)


def test_patch_clamped_to_domain():
    loc, _ = make_patch([0.01, 0.99], PatchSpec(7, 0.05), linear_2d(), 2)
    assert loc.min() >= 0 and loc.max() <= 1


def test_patch_values_match_linear_function():
    loc, vals = make_patch([0.5, 0.5], PatchSpec(5, 0.03), linear_2d(), 3)
    np.testing.assert_allclose(vals, loc[:, 0] + 2 * loc[:, 1] + 0.5, atol=1e-12)


@pytest.mark.parametrize("bad", [0, 2, -1])
def test_patch_spec_rejects_even_sizes(bad):
    with pytest.raises(ValueError):
        PatchSpec(bad, 0.1)


def test_observation_lattice():
    np.testing.assert_allclose(observation_lattice(16, 1)[:, 0], (np.arange(16) + 0.5) / 16)
    pts = observation_lattice(16, 2)
    assert pts.shape == (16, 2)
    np.testing.assert_allclose(np.unique(pts[:, 0]), [0.125, 0.375, 0.625, 0.875])
    with pytest.raises(ValueError):
        observation_lattice(15, 2)


@pytest.fixture(scope="module")
def fields_1d():
    cfg = PdeConfig("elliptic1d", epsilon=1 / 64, forcing=0.5, fine_mesh=2048, coarse_mesh=64)
    return elliptic1d_solve_exact(cfg), elliptic1d_homogenized(cfg)


def test_multiscale_samples_1d(fields_1d):
    fine, coarse = fields_1d
    h = coarse.axes[0][1]
    samples = assemble_multiscale_dataset(fine, coarse, 16, PatchSpec(1, h, jitter=False), 0)
    assert len(samples) == 16
    for s in samples:
        assert s.input_values[0] == pytest.approx(coarse(s.query_point)[0], abs=1e-15)
        assert s.target == pytest.approx(fine(s.query_point)[0], abs=1e-15)


def test_multiscale_jitter_changes_sensors_not_targets(fields_1d):
    fine, coarse = fields_1d
    spec = PatchSpec(5, coarse.axes[0][1])
    a = OperatorDataset.from_samples(assemble_multiscale_dataset(fine, coarse, 16, spec, 1))
    b = OperatorDataset.from_samples(assemble_multiscale_dataset(fine, coarse, 16, spec, 2))
    np.testing.assert_array_equal(a.targets, b.targets)
    assert not np.array_equal(a.sensors, b.sensors)
    c = OperatorDataset.from_samples(assemble_multiscale_dataset(fine, coarse, 16, spec, 1))
    np.testing.assert_array_equal(a.sensors, c.sensors)


def make_dataset(rng):
    return OperatorDataset(
        rng.uniform(size=(3, 4, 2)), rng.normal(size=(3, 4)), rng.uniform(size=(7, 2)),
        np.array([0, 0, 1, 2, 2, 2, 1]), rng.normal(size=7),
    )


def test_dataset_packing_roundtrip():
    d = make_dataset(np.random.default_rng(0))
    X, y = d.to_packed()
    assert X.shape == (7, 4 * 2 + 4 + 2)
    back = unpack(X, 4, 2, y)
    assert back.n_functions == 3
    np.testing.assert_array_equal(back.to_packed()[0], X)
    np.testing.assert_array_equal(back.targets, y)
    with pytest.raises(ValueError):
        unpack(X[:, :12], 4, 2)


def test_dataset_subsets():
    d = make_dataset(np.random.default_rng(1))
    q = d.subset_queries([3, 6])
    assert q.n_functions == 2 and q.n_queries == 2
    np.testing.assert_array_equal(q.values, d.values[[1, 2]])
    f = d.subset_functions(np.array([2]))
    assert f.n_queries == 3 and not f.owner.any()
    samples = list(d.samples())
    assert len(samples) == 7 and samples[2].target == d.targets[2]


def test_dataset_validation():
    rng = np.random.default_rng(2)
    with pytest.raises(ValueError, match="owner"):
        OperatorDataset(rng.uniform(size=(2, 3)), rng.normal(size=(2, 3)), rng.uniform(size=(2, 1)), [0, 5], [0, 0])
    with pytest.raises(ValueError):
        OperatorDataset(rng.uniform(size=(2, 4)), rng.normal(size=(2, 3)), rng.uniform(size=(2, 1)), [0, 1], [0, 0])
    with pytest.raises(ValueError, match="finite"):
        OperatorSample([0.1], [1.0], [0.5], float("nan"))
    with pytest.raises(ValueError):
        OperatorDataset.from_samples([])
