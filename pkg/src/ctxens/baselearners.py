"""Base forecasters: lagged ridge autoregression, boosted trees, passthrough.

The ensembling method treats bases as interchangeable one-step-ahead
forecasters. Besides the two trainable kinds, a passthrough kind reads a
named column of the frame as its prediction sequence; that is how the
synthetic experiments use the raw mixture components as oracle bases.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .core import TimeSeriesFrame
from .errors import ConfigInvalid, DimensionMismatch, SeriesTooShort, SingularDesign
from .gbdt import BoostedBaseModel, GBDTConfig, fit_base

DEFAULT_RIDGE = 1e-3


class BaseKind(enum.Enum):
    LINEAR_AR = "linear_ar"
    BOOSTED_TREES = "boosted_trees"
    COLUMN = "column"

    @classmethod
    def parse(cls, text: str) -> "BaseKind":
        try:
            return cls(text.strip().lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ConfigInvalid(f"unknown base kind {text!r}; expected one of {names}")


@dataclass(frozen=True)
class BasePredictorSpec:
    name: str
    kind: BaseKind
    lags: tuple[int, ...] = ()
    exog_columns: tuple[str, ...] = ()
    hyperparams: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "lags", tuple(int(l) for l in self.lags))
        object.__setattr__(self, "exog_columns", tuple(self.exog_columns))
        if self.kind is BaseKind.COLUMN:
            if "column" not in self.hyperparams:
                raise ConfigInvalid(f"base {self.name!r}: column kind needs 'column'")
            return
        if not self.lags:
            raise ConfigInvalid(f"base {self.name!r}: lags must be nonempty")
        if any(l <= 0 for l in self.lags) or list(self.lags) != sorted(set(self.lags)):
            raise ConfigInvalid(
                f"base {self.name!r}: lags must be positive, strictly increasing"
            )

    @property
    def max_lag(self) -> int:
        return max(self.lags) if self.lags else 0


class FeatureSet(NamedTuple):
    """Feature rows aligned to targets; offset rows were dropped for history."""

    features: np.ndarray
    targets: np.ndarray
    names: tuple[str, ...]
    offset: int


def make_features(frame: TimeSeriesFrame, spec: BasePredictorSpec) -> FeatureSet:
    """Row for time t holds y_{t-lag} for each lag plus exog columns at t.

    The first max(lags) rows have insufficient history and are dropped; the
    returned offset records how many.
    """
    y = frame.values
    n = y.shape[0]
    m = spec.max_lag
    if n <= m:
        raise SeriesTooShort(f"series length {n} <= max lag {m}")
    cols = [y[m - lag : n - lag] for lag in spec.lags]
    names = [f"lag{lag}" for lag in spec.lags]
    for name in spec.exog_columns:
        cols.append(frame.column(name)[m:])
        names.append(name)
    return FeatureSet(
        features=np.column_stack(cols),
        targets=y[m:],
        names=tuple(names),
        offset=m,
    )


def fit_linear_ar(features, targets, ridge: float = DEFAULT_RIDGE) -> np.ndarray:
    """Closed-form ridge solution (X^T X + ridge I)^{-1} X^T y."""
    X = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"features {X.shape} vs targets {y.shape}")
    gram = X.T @ X + ridge * np.eye(X.shape[1])
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        raise SingularDesign("X^T X singular and ridge is 0") from None
    rhs = X.T @ y
    return np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))


def predict_base(model, features) -> np.ndarray:
    """Row-wise one-step-ahead predictions from a fitted base."""
    X = np.asarray(features, dtype=float)
    if isinstance(model, BoostedBaseModel):
        return model.predict(X)
    coef = np.asarray(model, dtype=float)
    if X.ndim != 2 or X.shape[1] != coef.shape[0]:
        raise DimensionMismatch(f"features {X.shape} vs coefficients {coef.shape}")
    return X @ coef


@dataclass
class FittedBase:
    """A trained base bound to its spec; prediction re-derives features."""

    spec: BasePredictorSpec
    model: object  # coefficient vector, BoostedBaseModel, or column name
    feature_names: tuple[str, ...]

    def predict_window(self, frame: TimeSeriesFrame, lo: int, hi: int) -> np.ndarray:
        """Predictions for rows lo..hi-1 (0-based) of the frame."""
        if self.spec.kind is BaseKind.COLUMN:
            return frame.column(str(self.model))[lo:hi].copy()
        fs = make_features(frame, self.spec)
        if lo < fs.offset:
            raise SeriesTooShort(
                f"rows before {fs.offset} lack history for base {self.spec.name!r}"
            )
        return predict_base(self.model, fs.features[lo - fs.offset : hi - fs.offset])


def _gbdt_config(hyper: dict) -> GBDTConfig:
    keys = (
        "num_rounds",
        "learning_rate",
        "max_leaves",
        "min_samples_leaf",
        "l2_lambda",
        "histogram_bins",
        "seed",
    )
    kwargs = {k: hyper[k] for k in keys if k in hyper}
    return GBDTConfig(**kwargs)


def fit_base_predictor(
    frame: TimeSeriesFrame, spec: BasePredictorSpec, train_end: int
) -> FittedBase:
    """Train a base on frame rows [0, train_end) only."""
    if spec.kind is BaseKind.COLUMN:
        name = str(spec.hyperparams["column"])
        if not frame.has_column(name):
            raise ConfigInvalid(f"base {spec.name!r}: no column {name!r}")
        return FittedBase(spec=spec, model=name, feature_names=())
    fs = make_features(frame, spec)
    if train_end <= fs.offset:
        raise SeriesTooShort(
            f"training window ends at {train_end}, needs more than {fs.offset} rows"
        )
    stop = train_end - fs.offset
    X, y = fs.features[:stop], fs.targets[:stop]
    if spec.kind is BaseKind.LINEAR_AR:
        ridge = float(spec.hyperparams.get("ridge", DEFAULT_RIDGE))
        model = fit_linear_ar(X, y, ridge)
    else:
        model = fit_base(X, y, _gbdt_config(spec.hyperparams))
    return FittedBase(spec=spec, model=model, feature_names=fs.names)
