"""Two-layer perceptron meta-learner trained by per-sample SGD.

The network maps a side-info vector through one ReLU hidden layer to M raw
outputs, which the constraint transform turns into combination weights; the
loss is the squared error of the linearly combined ensemble prediction.
Gradients flow through the transform via its Jacobian and through ReLU with
derivative 1{v > 0}. There are no bias terms.

The same machinery with an identity scalar head serves as the conventional
prediction-fed MLP baseline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .constraints import ConstraintKind, transform, transform_jacobian
from .core import WeightVector
from .errors import (
    DimensionMismatch,
    EmptyData,
    NonFiniteGradient,
    NormalizationDegenerate,
)

FORMAT_VERSION = 1
_AFFINE_EPS = 1e-8
_SKIP_FRACTION_LIMIT = 0.01


@dataclass(frozen=True)
class MLPConfig:
    hidden_units: int = 16
    learning_rate: float = 1e-3
    epochs: int = 300
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.hidden_units < 1:
            raise ValueError("hidden_units must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class MLPModel:
    """Layer matrices plus the input standardization fitted with them.

    kind is None for the conventional scalar-output baseline (no transform).
    """

    u1: np.ndarray
    u2: np.ndarray
    kind: ConstraintKind | None
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_scale: float = 1.0
    train_losses: list[float] = field(default_factory=list)

    @property
    def n_inputs(self) -> int:
        return self.u1.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.u2.shape[0]

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.x_mean) / self.x_scale

    def to_dict(self) -> dict:
        return {
            "format": "ctxens-mlp",
            "version": FORMAT_VERSION,
            "kind": self.kind.value if self.kind is not None else None,
            "u1": self.u1.tolist(),
            "u2": self.u2.tolist(),
            "x_mean": self.x_mean.tolist(),
            "x_scale": self.x_scale.tolist(),
            "y_scale": self.y_scale,
            "train_losses": self.train_losses,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MLPModel":
        if d.get("format") != "ctxens-mlp" or d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unrecognized model payload: {d.get('format')!r}")
        return cls(
            u1=np.asarray(d["u1"], dtype=float),
            u2=np.asarray(d["u2"], dtype=float),
            kind=ConstraintKind(d["kind"]) if d["kind"] is not None else None,
            x_mean=np.asarray(d["x_mean"], dtype=float),
            x_scale=np.asarray(d["x_scale"], dtype=float),
            y_scale=float(d["y_scale"]),
            train_losses=[float(v) for v in d["train_losses"]],
        )


def save_model(model: MLPModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh)


def load_model(path) -> MLPModel:
    with open(path) as fh:
        return MLPModel.from_dict(json.load(fh))


def init_model(
    n_inputs: int,
    hidden_units: int,
    n_outputs: int,
    kind: ConstraintKind | None,
    seed: int,
) -> MLPModel:
    """Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)], identity scaling.

    The affine head instead starts at a positive constant plus small noise:
    hidden activations are nonnegative, so sum(p) begins safely positive and
    every input maps to (near) the uniform-average ensemble, instead of
    initializing on top of the sum(p) = 0 singularity of the normalization.
    """
    rng = np.random.default_rng(seed)
    b1 = 1.0 / np.sqrt(n_inputs)
    b2 = 1.0 / np.sqrt(hidden_units)
    u2 = rng.uniform(-b2, b2, size=(n_outputs, hidden_units))
    if kind is ConstraintKind.AFFINE:
        u2 = 1.0 / hidden_units + 0.1 * b2 * rng.uniform(
            -1.0, 1.0, size=(n_outputs, hidden_units)
        )
    return MLPModel(
        u1=rng.uniform(-b1, b1, size=(hidden_units, n_inputs)),
        u2=u2,
        kind=kind,
        x_mean=np.zeros(n_inputs),
        x_scale=np.ones(n_inputs),
    )


def forward(model: MLPModel, x):
    """(v, z, p, w): pre-activation, hidden, raw outputs, weights.

    x is a raw input row; standardization stored in the model is applied
    first (identity unless the model was fitted with standardization).
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n_inputs,):
        raise DimensionMismatch(f"expected {model.n_inputs} inputs, got {x.shape}")
    v = model.u1 @ model.standardize(x)
    z = np.maximum(v, 0.0)
    p = model.u2 @ z
    if model.kind is None:
        return v, z, p, None
    w = WeightVector(transform(p, model.kind), model.kind)
    return v, z, p, w


def backward(model: MLPModel, x, y: float, base_preds):
    """Gradients of (y - w^T yhat)^2 w.r.t. u1 and u2 at one sample.

    dL/dp goes through the transform Jacobian; dL/dv gates on v > 0.
    """
    yp = np.asarray(base_preds, dtype=float)
    v, z, p, w = forward(model, x)
    y_ens = float(w.w @ yp)
    dl_dw = 2.0 * (y_ens - y) * yp
    dl_dp = transform_jacobian(p, model.kind).T @ dl_dw
    du2 = np.outer(dl_dp, z)
    dl_dz = model.u2.T @ dl_dp
    dl_dv = dl_dz * (v > 0.0)
    du1 = np.outer(dl_dv, model.standardize(np.asarray(x, dtype=float)))
    return du1, du2


def sgd_step(model: MLPModel, gradients, learning_rate: float) -> MLPModel:
    du1, du2 = gradients
    if not (np.isfinite(du1).all() and np.isfinite(du2).all()):
        raise NonFiniteGradient("gradient contains NaN or inf")
    return replace(
        model,
        u1=model.u1 - learning_rate * du1,
        u2=model.u2 - learning_rate * du2,
    )


def _standardizer(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0.0] = 1.0
    return mean, scale


def _epoch_order(rng: np.random.Generator, n: int, shuffle: bool) -> np.ndarray:
    return rng.permutation(n) if shuffle else np.arange(n)


def fit_meta(
    side_info,
    base_preds,
    targets,
    kind: ConstraintKind,
    config: MLPConfig,
) -> MLPModel:
    """Per-sample SGD on the constraint-aware ensemble loss.

    Inputs are standardized with statistics from the training rows only (the
    statistics are stored in the model and applied at prediction time).
    Target and base predictions are jointly divided by std(y) during training:
    the weights are invariant to that scaling, so the minimizer is unchanged,
    but gradients become O(1) and one learning-rate scale works across
    datasets. Affine models skip samples whose raw-output sum degenerates;
    more than 1% skipped in an epoch aborts the fit.
    """
    X = np.asarray(side_info, dtype=float)
    Y = np.asarray(base_preds, dtype=float)
    y = np.asarray(targets, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0] or Y.shape[0] != y.shape[0]:
        raise DimensionMismatch(
            f"rows disagree: side {X.shape}, preds {Y.shape}, targets {y.shape}"
        )
    n = X.shape[0]
    if n == 0:
        raise EmptyData("no training rows")
    y_scale = float(y.std())
    if y_scale <= 0.0:
        y_scale = 1.0
    Y = Y / y_scale
    y = y / y_scale
    model = init_model(X.shape[1], config.hidden_units, Y.shape[1], kind, config.seed)
    mean, scale = _standardizer(X)
    model.x_mean, model.x_scale = mean, scale
    rng = np.random.default_rng(config.seed + 1)
    lr = config.learning_rate
    for epoch in range(config.epochs):
        skipped = 0
        for i in _epoch_order(rng, n, config.shuffle):
            try:
                grads = backward(model, X[i], float(y[i]), Y[i])
            except NormalizationDegenerate:
                skipped += 1
                continue
            try:
                model = sgd_step(model, grads, lr)
            except NonFiniteGradient as exc:
                raise NonFiniteGradient(
                    f"epoch {epoch}, sample {int(i)}: {exc}"
                ) from None
        if skipped > _SKIP_FRACTION_LIMIT * n:
            raise NormalizationDegenerate(
                f"epoch {epoch}: {skipped}/{n} samples had degenerate sum(p)"
            )
        # recorded in the caller's units, not the preconditioned ones
        model.train_losses.append(_meta_loss(model, X, Y, y) * y_scale**2)
    return model


def _meta_loss(model: MLPModel, X, Y, y) -> float:
    total = 0.0
    count = 0
    for i in range(y.shape[0]):
        try:
            _, _, _, w = forward(model, X[i])
        except NormalizationDegenerate:
            continue
        total += (y[i] - w.w @ Y[i]) ** 2
        count += 1
    return float(total / count) if count else float("nan")


def predict_weights(model: MLPModel, x) -> WeightVector:
    _, _, _, w = forward(model, x)
    return w


def fit_conventional(base_preds, targets, config: MLPConfig) -> MLPModel:
    """Regression MLP straight from base predictions to the target.

    No output transform and a single output unit. Inputs are standardized
    and the network learns the target divided by its training std; the scale
    is stored on the model and multiplied back at prediction time, so a zero
    model still predicts 0 and one learning rate serves any target scale.
    """
    X = np.asarray(base_preds, dtype=float)
    y = np.asarray(targets, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"preds {X.shape} vs targets {y.shape}")
    n = X.shape[0]
    if n == 0:
        raise EmptyData("no training rows")
    model = init_model(X.shape[1], config.hidden_units, 1, None, config.seed)
    mean, scale = _standardizer(X)
    model.x_mean, model.x_scale = mean, scale
    y_scale = float(y.std())
    if y_scale <= 0.0:
        y_scale = 1.0
    model.y_scale = y_scale
    y_s = y / y_scale
    rng = np.random.default_rng(config.seed + 1)
    lr = config.learning_rate
    for epoch in range(config.epochs):
        for i in _epoch_order(rng, n, config.shuffle):
            v, z, p, _ = forward(model, X[i])
            resid = float(p[0] - y_s[i])
            dl_dp = np.array([2.0 * resid])
            du2 = np.outer(dl_dp, z)
            dl_dv = (model.u2.T @ dl_dp) * (v > 0.0)
            du1 = np.outer(dl_dv, model.standardize(X[i]))
            try:
                model = sgd_step(model, (du1, du2), lr)
            except NonFiniteGradient as exc:
                raise NonFiniteGradient(
                    f"epoch {epoch}, sample {int(i)}: {exc}"
                ) from None
        model.train_losses.append(
            float(np.mean((predict_conventional(model, X) - y) ** 2))
        )
    return model


def predict_conventional(model: MLPModel, base_preds) -> np.ndarray:
    X = np.asarray(base_preds, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_inputs:
        raise DimensionMismatch(f"expected {model.n_inputs} inputs, got {X.shape}")
    Z = np.maximum(model.standardize(X) @ model.u1.T, 0.0)
    return (Z @ model.u2.T)[:, 0] * model.y_scale
