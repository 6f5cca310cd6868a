"""Two-phase experiment orchestration plus conventional baselines.

Offline phase: bases train on the first partition, their out-of-sample
predictions over the second partition become the meta-learner's training
targets, and the meta trains on the duplicate-free union of the bases' side
info (never on the predictions themselves). Online phase: bases retrain on
the full training range, the frozen meta produces a weight vector per test
step from the test-time side info, and the ensemble prediction is the
weighted combination.

Conventional baselines (linear / MLP stacking on predictions, best base,
uniform average) run through the same harness for comparison.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import gbdt, mlp
from .baselearners import BaseKind, BasePredictorSpec, FittedBase, fit_base_predictor, make_features
from .constraints import ConstraintKind
from .core import (
    PredictionBundle,
    SplitSpec,
    TimeSeriesFrame,
    WeightVector,
    build_superset_side_info,
    load_csv,
)
from .datagen import SyntheticSpec, generate_frame
from .errors import ConfigInvalid
from .metrics import ErrorCurve, cumulative_normalized_curve

_RIDGE_FLOOR = 1e-8

NORMALIZATION_NOTE = (
    "cumulative error normalized by within-window step count (running mean)"
)


class MetaKind(enum.Enum):
    GBDT = "gbdt"
    MLP = "mlp"
    CONVENTIONAL_LINEAR = "conventional_linear"
    CONVENTIONAL_MLP = "conventional_mlp"
    BEST_BASE = "best_base"
    UNIFORM_AVERAGE = "uniform_average"

    @classmethod
    def parse(cls, text: str) -> "MetaKind":
        try:
            return cls(text.strip().lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ConfigInvalid(f"unknown meta {text!r}; expected one of {names}")


WEIGHT_LEARNING_METAS = (MetaKind.GBDT, MetaKind.MLP)


@dataclass(frozen=True)
class ExperimentConfig:
    data_source: SyntheticSpec | str
    split: SplitSpec
    bases: tuple[BasePredictorSpec, ...]
    meta: MetaKind
    constraint: ConstraintKind | None = None
    meta_hyperparams: dict = field(default_factory=dict)
    seed: int = 0
    output_dir: str = "out"
    extra_side_columns: tuple[str, ...] = ()
    one_hot_columns: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "bases", tuple(self.bases))
        object.__setattr__(self, "extra_side_columns", tuple(self.extra_side_columns))
        object.__setattr__(self, "one_hot_columns", tuple(self.one_hot_columns))
        if len(self.bases) < 2:
            raise ConfigInvalid("need at least 2 base models")
        names = [b.name for b in self.bases]
        if len(set(names)) != len(names):
            raise ConfigInvalid(f"duplicate base names: {names}")
        if self.meta in WEIGHT_LEARNING_METAS:
            if self.constraint is None:
                raise ConfigInvalid(f"meta {self.meta.value} requires a constraint")
        elif self.constraint is not None:
            raise ConfigInvalid(
                f"meta {self.meta.value} does not take a constraint"
            )

    def canonical(self) -> dict:
        src = self.data_source
        return {
            "data_source": (
                {"synthetic": vars(src)} if isinstance(src, SyntheticSpec) else str(src)
            ),
            "split": [self.split.t1, self.split.t_end, self.split.t2],
            "bases": [
                {
                    "name": b.name,
                    "kind": b.kind.value,
                    "lags": list(b.lags),
                    "exog": list(b.exog_columns),
                    "hyperparams": dict(sorted(b.hyperparams.items())),
                }
                for b in self.bases
            ],
            "meta": self.meta.value,
            "constraint": self.constraint.value if self.constraint else None,
            "meta_hyperparams": dict(sorted(self.meta_hyperparams.items())),
            "seed": self.seed,
            "extra_side_columns": list(self.extra_side_columns),
            "one_hot_columns": list(self.one_hot_columns),
        }

    def content_hash(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def load_frame(config: ExperimentConfig) -> TimeSeriesFrame:
    if isinstance(config.data_source, SyntheticSpec):
        return generate_frame(config.data_source)
    return load_csv(config.data_source)


# ---------------------------------------------------------------------------
# superset side info
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SideInfoSchema:
    """Superset column names plus the one-hot expansion fitted on meta-train rows."""

    names: tuple[str, ...]
    one_hot: dict[str, tuple[float, ...]]
    feature_names: tuple[str, ...]


def _superset_window(
    frame: TimeSeriesFrame, config: ExperimentConfig, lo: int, hi: int
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Union of base side-info rows for frame rows [lo, hi), extras appended."""
    blocks = []
    for spec in config.bases:
        if spec.kind is BaseKind.COLUMN:
            continue  # oracle bases contribute no side info
        fs = make_features(frame, spec)
        if lo < fs.offset:
            raise ConfigInvalid(
                f"window starts at row {lo} but base {spec.name!r} needs {fs.offset}"
            )
        blocks.append((fs.features[lo - fs.offset : hi - fs.offset], fs.names))
    extras = None
    if config.extra_side_columns:
        cols = np.column_stack(
            [frame.column(c)[lo:hi] for c in config.extra_side_columns]
        )
        extras = (cols, config.extra_side_columns)
    if not blocks:
        if extras is None:
            raise ConfigInvalid("no side-info sources: all bases are column kind "
                                "and no extra_side_columns given")
        return build_superset_side_info([extras])
    return build_superset_side_info(blocks, extras)


def _fit_schema(
    matrix: np.ndarray, names: tuple[str, ...], one_hot_columns: tuple[str, ...]
) -> SideInfoSchema:
    mapping: dict[str, tuple[float, ...]] = {}
    feature_names: list[str] = []
    for j, name in enumerate(names):
        if name in one_hot_columns:
            values = tuple(float(v) for v in np.unique(matrix[:, j]))
            mapping[name] = values
            feature_names.extend(f"{name}={v:g}" for v in values)
        else:
            feature_names.append(name)
    return SideInfoSchema(
        names=names, one_hot=mapping, feature_names=tuple(feature_names)
    )


def _apply_schema(matrix: np.ndarray, names: tuple[str, ...], schema: SideInfoSchema):
    if names != schema.names:
        raise ConfigInvalid(f"side-info columns changed: {names} vs {schema.names}")
    cols = []
    for j, name in enumerate(names):
        if name in schema.one_hot:
            for v in schema.one_hot[name]:
                cols.append((matrix[:, j] == v).astype(float))
        else:
            cols.append(matrix[:, j])
    return np.column_stack(cols)


# ---------------------------------------------------------------------------
# trained meta wrapper
# ---------------------------------------------------------------------------

@dataclass
class TrainedMeta:
    meta: MetaKind
    constraint: ConstraintKind | None
    model: object
    schema: SideInfoSchema | None
    base_names: tuple[str, ...]

    def to_payload(self) -> dict:
        """Stable serialized form (drives the leakage audit and model files)."""
        if self.meta is MetaKind.GBDT:
            inner = self.model.to_dict()
        elif self.meta in (MetaKind.MLP, MetaKind.CONVENTIONAL_MLP):
            inner = self.model.to_dict()
        elif self.meta is MetaKind.CONVENTIONAL_LINEAR:
            inner = {"coefficients": [float(c) for c in self.model]}
        elif self.meta is MetaKind.BEST_BASE:
            inner = {"selected": int(self.model)}
        else:
            inner = {}
        return {
            "meta": self.meta.value,
            "constraint": self.constraint.value if self.constraint else None,
            "base_names": list(self.base_names),
            "schema": None
            if self.schema is None
            else {
                "names": list(self.schema.names),
                "one_hot": {k: list(v) for k, v in self.schema.one_hot.items()},
                "feature_names": list(self.schema.feature_names),
            },
            "model": inner,
        }


def _meta_mlp_config(config: ExperimentConfig) -> mlp.MLPConfig:
    h = config.meta_hyperparams
    return mlp.MLPConfig(
        hidden_units=int(h.get("hidden_units", 16)),
        learning_rate=float(h.get("learning_rate", 1e-3)),
        epochs=int(h.get("epochs", 300)),
        seed=int(h.get("seed", config.seed)),
        shuffle=bool(h.get("shuffle", True)),
    )


def _meta_gbdt_config(config: ExperimentConfig) -> gbdt.GBDTConfig:
    h = config.meta_hyperparams
    return gbdt.GBDTConfig(
        num_rounds=int(h.get("num_rounds", 500)),
        learning_rate=float(h.get("learning_rate", 0.05)),
        max_leaves=int(h.get("max_leaves", 31)),
        min_samples_leaf=int(h.get("min_samples_leaf", 5)),
        l2_lambda=float(h.get("l2_lambda", 1.0)),
        histogram_bins=int(h.get("histogram_bins", 255)),
        seed=int(h.get("seed", config.seed)),
    )


def run_conventional_linear(base_preds_train, targets_train, base_preds_test):
    """Least-squares combination of predictions (1e-8 ridge floor), applied
    to the test bundle."""
    coef = _conventional_linear_coef(base_preds_train, targets_train)
    return np.asarray(base_preds_test, dtype=float) @ coef


def _conventional_linear_coef(base_preds_train, targets_train) -> np.ndarray:
    X = np.asarray(base_preds_train, dtype=float)
    y = np.asarray(targets_train, dtype=float)
    gram = X.T @ X + _RIDGE_FLOOR * np.eye(X.shape[1])
    return np.linalg.solve(gram, X.T @ y)


def _check_window(config: ExperimentConfig, frame: TimeSeriesFrame) -> None:
    s = config.split
    if s.t2 > len(frame):
        raise ConfigInvalid(f"split t2={s.t2} exceeds data length {len(frame)}")
    max_lag = max((b.max_lag for b in config.bases), default=0)
    if s.t1 <= max_lag:
        raise ConfigInvalid(f"t1={s.t1} leaves no training rows past max lag {max_lag}")


def run_offline_phase(
    config: ExperimentConfig,
    frame: TimeSeriesFrame | None = None,
) -> tuple[TrainedMeta, PredictionBundle, tuple[np.ndarray, tuple[str, ...]]]:
    """Train bases on rows < t1, harvest their predictions on [t1, t_end),
    and train the meta on that window. Only rows < t_end are ever touched."""
    if frame is None:
        frame = load_frame(config)
    _check_window(config, frame)
    s = config.split
    fitted = [fit_base_predictor(frame, b, s.t1) for b in config.bases]
    preds = np.column_stack([f.predict_window(frame, s.t1, s.t_end) for f in fitted])
    bundle = PredictionBundle(preds, tuple(b.name for b in config.bases))
    targets = frame.values[s.t1 : s.t_end]

    schema = None
    superset: tuple[np.ndarray, tuple[str, ...]] = (np.zeros((len(targets), 0)), ())
    if config.meta in WEIGHT_LEARNING_METAS:
        matrix, names = _superset_window(frame, config, s.t1, s.t_end)
        schema = _fit_schema(matrix, names, config.one_hot_columns)
        expanded = _apply_schema(matrix, names, schema)
        superset = (matrix, names)
        if config.meta is MetaKind.GBDT:
            model = gbdt.fit_meta(
                expanded,
                bundle.base_preds,
                targets,
                config.constraint,
                _meta_gbdt_config(config),
                feature_names=schema.feature_names,
            )
        else:
            model = mlp.fit_meta(
                expanded,
                bundle.base_preds,
                targets,
                config.constraint,
                _meta_mlp_config(config),
            )
    elif config.meta is MetaKind.CONVENTIONAL_LINEAR:
        model = _conventional_linear_coef(bundle.base_preds, targets)
    elif config.meta is MetaKind.CONVENTIONAL_MLP:
        model = mlp.fit_conventional(
            bundle.base_preds, targets, _meta_mlp_config(config)
        )
    elif config.meta is MetaKind.BEST_BASE:
        mses = np.mean((bundle.base_preds - targets[:, None]) ** 2, axis=0)
        model = int(np.argmin(mses))
    else:
        model = None

    trained = TrainedMeta(
        meta=config.meta,
        constraint=config.constraint,
        model=model,
        schema=schema,
        base_names=bundle.model_names,
    )
    return trained, bundle, superset


@dataclass(frozen=True)
class StepRecord:
    t: int
    y: float
    base_preds: tuple[float, ...]
    weights: tuple[float, ...] | None
    prediction: float


@dataclass(frozen=True)
class ExperimentResult:
    records: tuple[StepRecord, ...]
    curve: ErrorCurve
    final_cumulative_error: float
    provenance: dict


def _test_weights(
    trained: TrainedMeta,
    config: ExperimentConfig,
    frame: TimeSeriesFrame,
    n_steps: int,
    n_models: int,
) -> np.ndarray | None:
    """Per-step weight matrix for the test window, or None (conventional MLP)."""
    s = config.split
    if trained.meta in WEIGHT_LEARNING_METAS:
        matrix, names = _superset_window(frame, config, s.t_end, s.t2)
        X = _apply_schema(matrix, names, trained.schema)
        rows = []
        for i in range(n_steps):
            if trained.meta is MetaKind.GBDT:
                wv = gbdt.predict_weights(trained.model, X[i])
            else:
                wv = mlp.predict_weights(trained.model, X[i])
            rows.append(wv.w)
        return np.vstack(rows)
    if trained.meta is MetaKind.CONVENTIONAL_LINEAR:
        coef = np.asarray(trained.model, dtype=float)
        return np.tile(coef, (n_steps, 1))
    if trained.meta is MetaKind.BEST_BASE:
        w = np.zeros(n_models)
        w[int(trained.model)] = 1.0
        WeightVector(w, ConstraintKind.CONVEX)  # contract check
        return np.tile(w, (n_steps, 1))
    if trained.meta is MetaKind.UNIFORM_AVERAGE:
        w = np.full(n_models, 1.0 / n_models)
        WeightVector(w, ConstraintKind.CONVEX)
        return np.tile(w, (n_steps, 1))
    return None


def run_online_phase(
    config: ExperimentConfig,
    trained: TrainedMeta,
    frame: TimeSeriesFrame | None = None,
) -> ExperimentResult:
    """Retrain bases on rows < t_end, combine per test step with the frozen meta."""
    if frame is None:
        frame = load_frame(config)
    _check_window(config, frame)
    s = config.split
    fitted = [fit_base_predictor(frame, b, s.t_end) for b in config.bases]
    preds = np.column_stack([f.predict_window(frame, s.t_end, s.t2) for f in fitted])
    bundle = PredictionBundle(preds, tuple(b.name for b in config.bases))
    y_test = frame.values[s.t_end : s.t2]
    n_steps = s.t2 - s.t_end

    weights = _test_weights(trained, config, frame, n_steps, bundle.n_models)
    if trained.meta is MetaKind.CONVENTIONAL_MLP:
        yhat = mlp.predict_conventional(trained.model, bundle.base_preds)
    else:
        yhat = (weights * bundle.base_preds).sum(axis=1)

    records = tuple(
        StepRecord(
            t=s.t_end + i + 1,
            y=float(y_test[i]),
            base_preds=tuple(float(v) for v in bundle.base_preds[i]),
            weights=None if weights is None else tuple(float(v) for v in weights[i]),
            prediction=float(yhat[i]),
        )
        for i in range(n_steps)
    )
    curve = cumulative_normalized_curve(y_test, yhat, t_start=s.t_end + 1)
    provenance = {
        "config_hash": config.content_hash(),
        "seed": config.seed,
        "normalization": NORMALIZATION_NOTE,
    }
    return ExperimentResult(
        records=records,
        curve=curve,
        final_cumulative_error=curve.final_value,
        provenance=provenance,
    )


def run_experiment(
    config: ExperimentConfig,
) -> tuple[TrainedMeta, ExperimentResult]:
    frame = load_frame(config)
    trained, _, _ = run_offline_phase(config, frame)
    return trained, run_online_phase(config, trained, frame)


def poison_test_targets(
    frame: TimeSeriesFrame, split_spec: SplitSpec, sentinel: float = 1.0e9
) -> TimeSeriesFrame:
    """Replace every test-segment entry (target and side info) with a sentinel;
    the offline phase must be bit-identical on the result."""
    values = frame.values.copy()
    side = frame.side_info.copy()
    values[split_spec.t_end :] = sentinel
    side[split_spec.t_end :, :] = sentinel
    return TimeSeriesFrame(values, side, frame.columns)
