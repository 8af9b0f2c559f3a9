import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from belnet.estimators import (
    REGRESSORS,
    AffineScaler,
    BelNetRegressor,
    DeepONetRegressor,
    ExtrapolationWarning,
    VanillaBelNetRegressor,
    check_operator_data,
    make_regressor,
)
from belnet.sampling import OperatorDataset

FAST = dict(epochs=5, batch_size=None)


def toy(n_functions=8, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.5, 1.5, size=n_functions)
    sensors = np.sort(rng.uniform(0, 4, size=(n_functions, 6)), axis=1)
    owner = np.repeat(np.arange(n_functions), 3)
    x = rng.uniform(0, 4, size=owner.size)
    return OperatorDataset(sensors, scale * a[:, None] * np.cos(sensors), x, owner, scale * a[owner] * x)


@pytest.mark.parametrize("cls", [BelNetRegressor, VanillaBelNetRegressor, DeepONetRegressor])
def test_get_params_and_clone(cls):
    est = cls(epochs=7, random_state=3)
    params = est.get_params()
    assert params["epochs"] == 7 and params["random_state"] == 3
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(lr=0.01)
    assert est.lr == 0.01


@pytest.mark.parametrize("kind", sorted(REGRESSORS))
def test_fit_predict_dataset_and_packed_agree(kind):
    data = toy()
    est = make_regressor(kind, **FAST).fit(data)
    X, _ = data.to_packed()
    np.testing.assert_allclose(est.predict(X), est.predict_dataset(data), atol=1e-12)
    assert len(est.loss_curve_) == 5 and est.param_count_ > 0


def test_fit_from_packed_array():
    data = toy()
    X, y = data.to_packed()
    est = BelNetRegressor(n_sensors=6, **FAST).fit(X, y)
    ref = BelNetRegressor(**FAST).fit(data)
    np.testing.assert_allclose(est.predict(X), ref.predict_dataset(data), atol=1e-10)
    assert est.score(X, y) < 1.0  # RegressorMixin R^2


def test_predictions_are_in_original_units():
    # rescaling values and targets together rescales predictions exactly
    a, b = toy(scale=1.0), toy(scale=100.0)
    pa = BelNetRegressor(**FAST).fit(a).predict_dataset(a)
    pb = BelNetRegressor(**FAST).fit(b).predict_dataset(b)
    np.testing.assert_allclose(pb, 100 * pa, rtol=1e-9)


def test_normalization_state_and_bounds():
    data = toy()
    est = BelNetRegressor(**FAST).fit(data)
    state = est.normalization_state()
    assert state["value_scale"] == pytest.approx(np.abs(data.values).max())
    assert state["target_scale"] == pytest.approx(np.abs(data.targets).max())
    fixed = BelNetRegressor(input_bounds=([0.0], [8.0]), **FAST).fit(data)
    np.testing.assert_array_equal(fixed.query_scaler_.lo, [0.0])
    np.testing.assert_array_equal(fixed.sensor_scaler_.hi, [8.0])
    with pytest.raises(ValueError, match="input_bounds"):
        BelNetRegressor(input_bounds=([1.0], [0.0]), **FAST).fit(data)


def test_extrapolation_warning():
    data = toy()
    est = DeepONetRegressor(**FAST).fit(data)
    far = OperatorDataset(data.sensors, data.values, data.queries + 10, data.owner, data.targets)
    with pytest.warns(ExtrapolationWarning):
        est.predict_dataset(far)


def test_skip_sensor_residual_learning():
    data = toy()
    est = BelNetRegressor(skip_sensor=2, epochs=1, batch_size=None, lr=0.0).fit(data)
    # with lr=0 the network part is the untrained output, so subtracting it leaves the skip value
    scaled = est._scale(data, False)
    net = est.model_.forward(scaled.sensors, scaled.values, scaled.queries, scaled.owner) * est.target_scale_
    np.testing.assert_allclose(est.predict_dataset(data) - net, data.values[data.owner, 2], atol=1e-12)
    with pytest.raises(ValueError, match="skip_sensor"):
        BelNetRegressor(skip_sensor=6, **FAST).fit(data)


def test_unfitted_and_shape_errors():
    data = toy()
    with pytest.raises(NotFittedError):
        BelNetRegressor().predict_dataset(data)
    est = BelNetRegressor(**FAST).fit(data)
    fewer = OperatorDataset(data.sensors[:, :5], data.values[:, :5], data.queries, data.owner, data.targets)
    with pytest.raises(ValueError, match="sensors"):
        est.predict_dataset(fewer)


def test_check_operator_data_validation():
    data = toy()
    X, y = data.to_packed()
    with pytest.raises(ValueError, match="n_sensors"):
        check_operator_data(X, y)
    with pytest.raises(ValueError, match="rows"):
        check_operator_data(X, y[:-1], n_sensors=6)
    with pytest.raises(ValueError):
        check_operator_data(np.where(np.isnan(X), 0, np.nan), y, n_sensors=6)
    bad = OperatorDataset(data.sensors, data.values * np.nan, data.queries, data.owner, data.targets)
    with pytest.raises(ValueError, match="non-finite"):
        check_operator_data(bad)
    replaced = check_operator_data(data, np.zeros(data.n_queries))
    assert not replaced.targets.any()


def test_affine_scaler():
    s = AffineScaler.fit(np.array([[0.0, 5.0], [2.0, 5.0]]))
    np.testing.assert_allclose(s(np.array([[1.0, 5.0]])), [[0.0, -1.0]])
    assert s.outside(np.array([[3.0, 5.0]])) and not s.outside(np.array([[2.0, 5.0]]))
    back = AffineScaler.from_dict(s.to_dict())
    np.testing.assert_array_equal(back.lo, s.lo)
    np.testing.assert_array_equal(back.hi, s.hi)


def test_make_regressor_unknown():
    with pytest.raises(ValueError, match="unknown"):
        make_regressor("gpr")


def test_invalid_training_settings_rejected_before_work():
    with pytest.raises(ValueError, match="batch_mode"):
        BelNetRegressor(batch_mode="bogus").fit(toy())
