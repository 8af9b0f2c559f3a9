"""scikit-learn style wrappers around the operator networks.

The estimators accept either an :class:`~belnet.sampling.OperatorDataset` or a
packed design matrix whose rows are ``[sensor coords, sensor values, query]``
(see :meth:`OperatorDataset.to_packed`). Coordinates are mapped affinely to
``[-1, 1]`` using training ranges (or ``input_bounds`` when given) and values
are divided by the largest training magnitude; predictions are returned in
original units. With ``skip_sensor`` set, the network learns the target minus
that sensor's reading, which is added back at prediction time.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .operators import BelNet, DeepONet, OperatorModel, VanillaBelNet
from .sampling import OperatorDataset, unpack
from .training import TrainConfig, train


class ExtrapolationWarning(UserWarning):
    """Raised when queries or sensors fall outside the range seen in training."""


@dataclass
class AffineScaler:
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, points: np.ndarray) -> "AffineScaler":
        pts = points.reshape(-1, points.shape[-1])
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        return cls(lo, lo + span)

    @classmethod
    def identity(cls, dim: int) -> "AffineScaler":
        return cls(-np.ones(dim), np.ones(dim))

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return 2.0 * (points - self.lo) / (self.hi - self.lo) - 1.0

    def outside(self, points: np.ndarray, tol: float = 1e-9) -> bool:
        pts = points.reshape(-1, points.shape[-1])
        slack = tol * (self.hi - self.lo)
        return bool(np.any(pts < self.lo - slack) or np.any(pts > self.hi + slack))

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "AffineScaler":
        return cls(np.asarray(d["lo"], dtype=float), np.asarray(d["hi"], dtype=float))


def check_operator_data(X, y=None, n_sensors=None, sensor_dim=1) -> OperatorDataset:
    """Validate and convert estimator input to an :class:`OperatorDataset`."""
    if isinstance(X, OperatorDataset):
        data = X
        for name, arr in data.arrays().items():
            if name != "owner" and not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")
        if y is not None:
            y = np.asarray(y, dtype=np.float64).ravel()
            if y.shape != data.targets.shape:
                raise ValueError(f"y has {y.size} entries for {data.n_queries} queries")
            data = OperatorDataset(data.sensors, data.values, data.queries, data.owner, y)
        return data
    if n_sensors is None:
        raise ValueError("n_sensors must be set to fit or predict from a packed array")
    X = check_array(X, dtype=np.float64)
    if y is not None:
        y = check_array(np.asarray(y).reshape(-1, 1), dtype=np.float64).ravel()
        if y.size != X.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.size}")
    return unpack(X, n_sensors, sensor_dim, y)


class OperatorRegressor(RegressorMixin, BaseEstimator):
    """Shared fit/predict logic; subclasses provide ``_build``."""

    def _build(self, n_sensors: int, d: int, d_in: int) -> OperatorModel:
        raise NotImplementedError

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            batch_mode=self.batch_mode,
            lr=self.lr,
            lr_milestones=tuple(self.lr_milestones),
            lr_gamma=self.lr_gamma,
            seed=self.random_state,
        )

    def _skip(self, data: OperatorDataset) -> np.ndarray | float:
        """Value added back to the network output: the skip sensor's reading, or zero."""
        if self.skip_sensor is None:
            return 0.0
        return data.values[data.owner, self.skip_sensor]

    def _scale(self, data: OperatorDataset, with_targets: bool) -> OperatorDataset:
        targets = (data.targets - self._skip(data)) / self.target_scale_ if with_targets else data.targets
        return OperatorDataset(
            self.sensor_scaler_(data.sensors),
            data.values / self.value_scale_,
            self.query_scaler_(data.queries),
            data.owner,
            targets,
        )

    def fit(self, X, y=None, callback=None):
        data = check_operator_data(X, y, self.n_sensors, self.sensor_dim)
        if data.n_queries == 0:
            raise ValueError("no training queries")
        if self.skip_sensor is not None and not 0 <= self.skip_sensor < data.n_sensors:
            raise ValueError(f"skip_sensor={self.skip_sensor} is not a sensor index (n_sensors={data.n_sensors})")
        cfg = self._train_config()  # validates the schedule before any work
        if self.normalize:
            if self.input_bounds is not None:
                lo, hi = (np.asarray(b, dtype=np.float64) for b in self.input_bounds)
                if lo.shape != (data.queries.shape[1],) or hi.shape != lo.shape or np.any(hi <= lo):
                    raise ValueError("input_bounds must be (lo, hi) with one entry per query coordinate and hi > lo")
                d_in = data.sensors.shape[2]
                self.query_scaler_ = AffineScaler(lo, hi)
                self.sensor_scaler_ = AffineScaler(lo[:d_in], hi[:d_in])
            else:
                self.sensor_scaler_ = AffineScaler.fit(data.sensors)
                self.query_scaler_ = AffineScaler.fit(data.queries)
            self.value_scale_ = float(np.max(np.abs(data.values))) or 1.0
            self.target_scale_ = float(np.max(np.abs(data.targets - self._skip(data)))) or 1.0
        else:
            self.sensor_scaler_ = AffineScaler.identity(data.sensors.shape[2])
            self.query_scaler_ = AffineScaler.identity(data.queries.shape[1])
            self.value_scale_ = self.target_scale_ = 1.0
        self.n_sensors_in_ = data.n_sensors
        self.sensor_dim_in_ = data.sensors.shape[2]
        self.query_dim_in_ = data.queries.shape[1]
        self.model_ = self._build(data.n_sensors, self.query_dim_in_, self.sensor_dim_in_)
        self.result_ = train(self.model_, self._scale(data, True), cfg, callback)
        self.loss_curve_ = self.result_.losses
        return self

    def predict_dataset(self, data: OperatorDataset) -> np.ndarray:
        check_is_fitted(self, "model_")
        if data.n_sensors != self.n_sensors_in_:
            raise ValueError(f"estimator was fitted with {self.n_sensors_in_} sensors, got {data.n_sensors}")
        if data.queries.shape[1] != self.query_dim_in_:
            raise ValueError(f"expected {self.query_dim_in_}-dimensional queries")
        if self.query_scaler_.outside(data.queries) or self.sensor_scaler_.outside(data.sensors):
            warnings.warn("inputs outside the training range; predictions extrapolate", ExtrapolationWarning)
        scaled = self._scale(data, False)
        out = self.model_.forward(scaled.sensors, scaled.values, scaled.queries, scaled.owner)
        return out * self.target_scale_ + self._skip(data)

    def predict(self, X):
        check_is_fitted(self, "model_")
        data = check_operator_data(X, None, self.n_sensors_in_, self.sensor_dim_in_)
        return self.predict_dataset(data)

    @property
    def param_count_(self) -> int:
        check_is_fitted(self, "model_")
        return self.model_.param_count

    def normalization_state(self) -> dict:
        check_is_fitted(self, "model_")
        return {
            "sensor": self.sensor_scaler_.to_dict(),
            "query": self.query_scaler_.to_dict(),
            "value_scale": self.value_scale_,
            "target_scale": self.target_scale_,
        }

    def restore(self, model: OperatorModel, normalization: dict) -> "OperatorRegressor":
        """Attach a trained model and its normalization constants (used by checkpoint loading)."""
        self.model_ = model
        self.sensor_scaler_ = AffineScaler.from_dict(normalization["sensor"])
        self.query_scaler_ = AffineScaler.from_dict(normalization["query"])
        self.value_scale_ = float(normalization["value_scale"])
        self.target_scale_ = float(normalization["target_scale"])
        self.n_sensors_in_ = model.config["n_sensors"]
        self.sensor_dim_in_ = model.config["d_in"]
        self.query_dim_in_ = model.config["d"]
        return self


class BelNetRegressor(OperatorRegressor):
    def __init__(
        self,
        n_basis=16,
        width=16,
        nonlinear_width=32,
        projection_hidden=(32,),
        construction_hidden=(32,),
        activation="tanh",
        epochs=3000,
        batch_size=256,
        batch_mode="queries",
        lr=1e-3,
        lr_milestones=(0.6, 0.85),
        lr_gamma=0.5,
        normalize=True,
        input_bounds=None,
        skip_sensor=None,
        n_sensors=None,
        sensor_dim=1,
        random_state=0,
    ):
        self.n_basis = n_basis
        self.width = width
        self.nonlinear_width = nonlinear_width
        self.projection_hidden = projection_hidden
        self.construction_hidden = construction_hidden
        self.activation = activation
        self.epochs = epochs
        self.batch_size = batch_size
        self.batch_mode = batch_mode
        self.lr = lr
        self.lr_milestones = lr_milestones
        self.lr_gamma = lr_gamma
        self.normalize = normalize
        self.input_bounds = input_bounds
        self.skip_sensor = skip_sensor
        self.n_sensors = n_sensors
        self.sensor_dim = sensor_dim
        self.random_state = random_state

    def _build(self, n_sensors, d, d_in):
        return BelNet(
            n_sensors, d=d, d_in=d_in, n_basis=self.n_basis, width=self.width,
            nonlinear_width=self.nonlinear_width, projection_hidden=self.projection_hidden,
            construction_hidden=self.construction_hidden, activation=self.activation,
            seed=self.random_state,
        )


class VanillaBelNetRegressor(OperatorRegressor):
    def __init__(
        self,
        width=32,
        projection_hidden=(32,),
        construction_hidden=(32,),
        activation="tanh",
        value_activation="tanh",
        mixing=True,
        epochs=3000,
        batch_size=256,
        batch_mode="queries",
        lr=1e-3,
        lr_milestones=(0.6, 0.85),
        lr_gamma=0.5,
        normalize=True,
        input_bounds=None,
        skip_sensor=None,
        n_sensors=None,
        sensor_dim=1,
        random_state=0,
    ):
        self.width = width
        self.projection_hidden = projection_hidden
        self.construction_hidden = construction_hidden
        self.activation = activation
        self.value_activation = value_activation
        self.mixing = mixing
        self.epochs = epochs
        self.batch_size = batch_size
        self.batch_mode = batch_mode
        self.lr = lr
        self.lr_milestones = lr_milestones
        self.lr_gamma = lr_gamma
        self.normalize = normalize
        self.input_bounds = input_bounds
        self.skip_sensor = skip_sensor
        self.n_sensors = n_sensors
        self.sensor_dim = sensor_dim
        self.random_state = random_state

    def _build(self, n_sensors, d, d_in):
        return VanillaBelNet(
            n_sensors, d=d, d_in=d_in, width=self.width, projection_hidden=self.projection_hidden,
            construction_hidden=self.construction_hidden, activation=self.activation,
            value_activation=self.value_activation, mixing=self.mixing, seed=self.random_state,
        )


class DeepONetRegressor(OperatorRegressor):
    """DeepONet baseline. Sensor locations are accepted but ignored by the network."""

    def __init__(
        self,
        width=32,
        branch_hidden=(32,),
        trunk_hidden=(32,),
        activation="tanh",
        epochs=3000,
        batch_size=256,
        batch_mode="queries",
        lr=1e-3,
        lr_milestones=(0.6, 0.85),
        lr_gamma=0.5,
        normalize=True,
        input_bounds=None,
        skip_sensor=None,
        n_sensors=None,
        sensor_dim=1,
        random_state=0,
    ):
        self.width = width
        self.branch_hidden = branch_hidden
        self.trunk_hidden = trunk_hidden
        self.activation = activation
        self.epochs = epochs
        self.batch_size = batch_size
        self.batch_mode = batch_mode
        self.lr = lr
        self.lr_milestones = lr_milestones
        self.lr_gamma = lr_gamma
        self.normalize = normalize
        self.input_bounds = input_bounds
        self.skip_sensor = skip_sensor
        self.n_sensors = n_sensors
        self.sensor_dim = sensor_dim
        self.random_state = random_state

    def _build(self, n_sensors, d, d_in):
        return DeepONet(
            n_sensors, d=d, d_in=d_in, width=self.width, branch_hidden=self.branch_hidden,
            trunk_hidden=self.trunk_hidden, activation=self.activation, seed=self.random_state,
        )


REGRESSORS = {
    "belnet": BelNetRegressor,
    "vanilla": VanillaBelNetRegressor,
    "deeponet": DeepONetRegressor,
}


def make_regressor(kind: str, **params) -> OperatorRegressor:
    if kind not in REGRESSORS:
        raise ValueError(f"unknown architecture {kind!r}; choose from {sorted(REGRESSORS)}")
    return REGRESSORS[kind](**params)
