"""Histogram-based gradient-boosted regression trees with custom objectives.

The engine plays two roles: a plain squared-loss forecaster (base model) and
a multi-output meta-learner that emits one raw score per base model, trained
with the constraint-specific gradients and hessians of the ensemble squared
loss. Multi-output boosting grows one tree per output per round, mirroring
the per-output gradient indexing of the objective.

Everything is deterministic given the config and data: split ties break
toward the lower feature index and lower bin, and no sampling is performed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .constraints import ConstraintKind, transform
from .core import WeightVector
from .errors import (
    DimensionMismatch,
    EmptyData,
    NonFiniteLoss,
    NormalizationDegenerate,
)

HESSIAN_FLOOR = 1e-6  # damped-Newton guard: affine/convex hessians can go negative
_AFFINE_EPS = 1e-8

FORMAT_VERSION = 1


@dataclass(frozen=True)
class GBDTConfig:
    num_rounds: int = 500
    learning_rate: float = 0.05
    max_leaves: int = 31
    min_samples_leaf: int = 5
    l2_lambda: float = 1.0
    histogram_bins: int = 255
    seed: int = 0

    def __post_init__(self):
        if self.num_rounds < 0:
            raise ValueError("num_rounds must be >= 0")
        if not (0.0 < self.learning_rate <= 1.0):
            raise ValueError("learning_rate must be in (0, 1]")
        if self.max_leaves < 2:
            raise ValueError("max_leaves must be >= 2")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be >= 0")
        if not (2 <= self.histogram_bins <= 255):
            raise ValueError("histogram_bins must be in [2, 255]")


# ---------------------------------------------------------------------------
# trees
# ---------------------------------------------------------------------------

@dataclass
class Tree:
    """Flat binary tree; feature == -1 marks a leaf. Rule: x <= threshold -> left."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        n = X.shape[0]
        idx = np.zeros(n, dtype=np.int64)
        while True:
            feats = self.feature[idx]
            pending = np.nonzero(feats >= 0)[0]
            if pending.size == 0:
                break
            node = idx[pending]
            go_left = X[pending, feats[pending]] <= self.threshold[node]
            idx[pending] = np.where(go_left, self.left[node], self.right[node])
        return self.value[idx]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=float),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=float),
        )


def _feature_edges(col: np.ndarray, max_bins: int) -> np.ndarray:
    """Candidate split thresholds for one feature (upper edge of each bin)."""
    uniq = np.unique(col)
    if uniq.size <= 1:
        return np.empty(0)
    if uniq.size <= max_bins:
        return uniq[:-1]
    qs = np.quantile(col, np.linspace(0.0, 1.0, max_bins + 1)[1:-1])
    edges = np.unique(qs)
    return edges[(edges >= uniq[0]) & (edges < uniq[-1])]


class _Binner:
    """Equal-frequency binning computed once on the training matrix."""

    def __init__(self, X: np.ndarray, max_bins: int):
        self.edges = [_feature_edges(X[:, f], max_bins) for f in range(X.shape[1])]
        self.n_bins = [e.size + 1 for e in self.edges]

    def bin(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape, dtype=np.int64)
        for f, edges in enumerate(self.edges):
            out[:, f] = np.searchsorted(edges, X[:, f], side="left")
        return out


class _TreeGrower:
    """Best-first (leaf-wise) growth to at most max_leaves leaves."""

    def __init__(self, binned, binner, grad, hess, cfg: GBDTConfig):
        self.binned = binned
        self.binner = binner
        self.grad = grad
        self.hess = hess
        self.cfg = cfg

    def _best_split(self, rows: np.ndarray):
        """(gain, feature, bin, left_rows, right_rows) or None."""
        lam = self.cfg.l2_lambda
        min_leaf = self.cfg.min_samples_leaf
        g_tot = self.grad[rows].sum()
        h_tot = self.hess[rows].sum()
        parent = g_tot * g_tot / (h_tot + lam)
        best = None
        for f, nb in enumerate(self.binner.n_bins):
            if nb < 2:
                continue
            b = self.binned[rows, f]
            hg = np.bincount(b, weights=self.grad[rows], minlength=nb)
            hh = np.bincount(b, weights=self.hess[rows], minlength=nb)
            hc = np.bincount(b, minlength=nb)
            gl = np.cumsum(hg)[:-1]
            hl = np.cumsum(hh)[:-1]
            cl = np.cumsum(hc)[:-1]
            gr = g_tot - gl
            hr = h_tot - hl
            cr = rows.size - cl
            with np.errstate(divide="ignore", invalid="ignore"):
                gain = gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent
            gain[~np.isfinite(gain)] = -np.inf
            gain[(cl < min_leaf) | (cr < min_leaf)] = -np.inf
            k = int(np.argmax(gain))
            if gain[k] > 0.0 and (best is None or gain[k] > best[0]):
                best = (float(gain[k]), f, k)
        if best is None:
            return None
        gain, f, k = best
        mask = self.binned[rows, f] <= k
        return gain, f, k, rows[mask], rows[~mask]

    def grow(self) -> tuple[Tree, np.ndarray]:
        """Build one tree; returns (tree, per-training-row output)."""
        lam = self.cfg.l2_lambda
        lr = self.cfg.learning_rate
        n = self.grad.shape[0]
        feature, threshold, left, right, value = [-1], [0.0], [-1], [-1], [0.0]
        all_rows = np.arange(n)
        leaves = {0: (all_rows, self._best_split(all_rows))}
        while len(leaves) < self.cfg.max_leaves:
            cand = [
                (split[0], node)
                for node, (_, split) in sorted(leaves.items())
                if split is not None
            ]
            if not cand:
                break
            _, node = max(cand, key=lambda t: (t[0], -t[1]))
            _, split = leaves.pop(node)
            _, f, k, rows_l, rows_r = split
            feature[node] = f
            threshold[node] = float(self.binner.edges[f][k])
            nl, nr = len(feature), len(feature) + 1
            left[node], right[node] = nl, nr
            for rows_child in (rows_l, rows_r):
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                value.append(0.0)
            leaves[nl] = (rows_l, self._best_split(rows_l))
            leaves[nr] = (rows_r, self._best_split(rows_r))
        out = np.zeros(n)
        for node, (rows, _) in leaves.items():
            denom = self.hess[rows].sum() + lam
            leaf_val = 0.0 if denom <= 0 else -lr * self.grad[rows].sum() / denom
            value[node] = float(leaf_val)
            out[rows] = leaf_val
        tree = Tree(
            feature=np.asarray(feature, dtype=np.int64),
            threshold=np.asarray(threshold, dtype=float),
            left=np.asarray(left, dtype=np.int64),
            right=np.asarray(right, dtype=np.int64),
            value=np.asarray(value, dtype=float),
        )
        return tree, out


# ---------------------------------------------------------------------------
# objectives
# ---------------------------------------------------------------------------

def _ensemble_pred(base_preds: np.ndarray, p: np.ndarray, kind: ConstraintKind):
    """(weights, ensemble prediction) for a batch of rows."""
    if kind is ConstraintKind.UNCONSTRAINED:
        w = p
    elif kind is ConstraintKind.AFFINE:
        s = p.sum(axis=1)
        if (np.abs(s) <= _AFFINE_EPS).any():
            bad = int(np.argmax(np.abs(s) <= _AFFINE_EPS))
            raise NormalizationDegenerate(f"|sum(p)| <= {_AFFINE_EPS} at row {bad}")
        w = p / s[:, None]
    else:
        shifted = p - p.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        w = e / e.sum(axis=1, keepdims=True)
    return w, (w * base_preds).sum(axis=1)


def _grad_hess_batch(y, base_preds, p, kind: ConstraintKind):
    """Per-sample gradient and hessian of (y - w^T yhat)^2 w.r.t. each raw
    output p_i, in the closed forms specific to each transform."""
    w, y_ens = _ensemble_pred(base_preds, p, kind)
    resid = y - y_ens
    if kind is ConstraintKind.UNCONSTRAINED:
        grad = 2.0 * base_preds * -resid[:, None]
        hess = 2.0 * base_preds**2
    elif kind is ConstraintKind.AFFINE:
        inv_s = 1.0 / p.sum(axis=1)
        diff = y_ens[:, None] - base_preds
        grad = 2.0 * resid[:, None] * inv_s[:, None] * diff
        hess = (
            2.0
            * inv_s[:, None] ** 2
            * diff
            * (3.0 * y_ens[:, None] - 2.0 * y[:, None] - base_preds)
        )
    else:
        diff = y_ens[:, None] - base_preds
        grad = 2.0 * resid[:, None] * w * diff
        hess = grad * (1.0 - 2.0 * w) + 2.0 * w**2 * diff**2
    return grad, hess


def meta_grad_hess(y: float, base_preds, p, kind: ConstraintKind):
    """Gradient/hessian of the ensemble squared loss at one sample."""
    yp = np.asarray(base_preds, dtype=float)[None, :]
    pp = np.asarray(p, dtype=float)[None, :]
    g, h = _grad_hess_batch(np.asarray([y], dtype=float), yp, pp, kind)
    return g[0], h[0]


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

@dataclass
class BoostedBaseModel:
    """Single-output forest for plain squared-loss forecasting."""

    trees: list[Tree]
    init_score: float
    n_features: int
    train_losses: list[float] = field(default_factory=list)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DimensionMismatch(
                f"expected {self.n_features} features, got shape {X.shape}"
            )
        out = np.full(X.shape[0], self.init_score)
        for tree in self.trees:
            out += tree.predict(X)
        return out

    def to_dict(self) -> dict:
        return {
            "format": "ctxens-gbdt-base",
            "version": FORMAT_VERSION,
            "init_score": self.init_score,
            "n_features": self.n_features,
            "train_losses": self.train_losses,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoostedBaseModel":
        if d.get("format") != "ctxens-gbdt-base" or d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unrecognized model payload: {d.get('format')!r}")
        return cls(
            trees=[Tree.from_dict(t) for t in d["trees"]],
            init_score=float(d["init_score"]),
            n_features=int(d["n_features"]),
            train_losses=[float(v) for v in d["train_losses"]],
        )


@dataclass
class BoostedMetaModel:
    """One forest per base model; raw outputs pass through the constraint
    transform to become combination weights."""

    forests: list[list[Tree]]
    init_scores: np.ndarray
    kind: ConstraintKind
    feature_names: tuple[str, ...]
    train_losses: list[float] = field(default_factory=list)

    @property
    def n_models(self) -> int:
        return len(self.forests)

    def predict_raw(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise DimensionMismatch(
                f"expected {len(self.feature_names)} features, got shape {X.shape}"
            )
        p = np.tile(self.init_scores, (X.shape[0], 1))
        for i, forest in enumerate(self.forests):
            for tree in forest:
                p[:, i] += tree.predict(X)
        return p

    def to_dict(self) -> dict:
        return {
            "format": "ctxens-gbdt-meta",
            "version": FORMAT_VERSION,
            "kind": self.kind.value,
            "init_scores": self.init_scores.tolist(),
            "feature_names": list(self.feature_names),
            "train_losses": self.train_losses,
            "forests": [[t.to_dict() for t in forest] for forest in self.forests],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoostedMetaModel":
        if d.get("format") != "ctxens-gbdt-meta" or d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unrecognized model payload: {d.get('format')!r}")
        return cls(
            forests=[[Tree.from_dict(t) for t in forest] for forest in d["forests"]],
            init_scores=np.asarray(d["init_scores"], dtype=float),
            kind=ConstraintKind(d["kind"]),
            feature_names=tuple(d["feature_names"]),
            train_losses=[float(v) for v in d["train_losses"]],
        )


def save_model(model, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh)


def load_model(path):
    with open(path) as fh:
        d = json.load(fh)
    if d.get("format") == "ctxens-gbdt-base":
        return BoostedBaseModel.from_dict(d)
    return BoostedMetaModel.from_dict(d)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def fit_base(features, targets, config: GBDTConfig) -> BoostedBaseModel:
    """Squared-loss boosting from a mean initial score."""
    X = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"features {X.shape} vs targets {y.shape}")
    if X.shape[0] == 0:
        raise EmptyData("no training rows")
    binner = _Binner(X, config.histogram_bins)
    binned = binner.bin(X)
    init = float(y.mean())
    pred = np.full(y.shape[0], init)
    trees: list[Tree] = []
    losses: list[float] = []
    for _ in range(config.num_rounds):
        grad = 2.0 * (pred - y)
        hess = np.full_like(grad, 2.0)
        tree, out = _TreeGrower(binned, binner, grad, hess, config).grow()
        trees.append(tree)
        pred += out
        losses.append(float(np.mean((y - pred) ** 2)))
    return BoostedBaseModel(
        trees=trees, init_score=init, n_features=X.shape[1], train_losses=losses
    )


def fit_meta(
    side_info,
    base_preds,
    targets,
    kind: ConstraintKind,
    config: GBDTConfig,
    feature_names: tuple[str, ...] | None = None,
) -> BoostedMetaModel:
    """Boost the constraint-aware ensemble objective on side-info features.

    Each round adds one tree per output, fitted by Newton steps on the
    per-sample gradients/hessians, with hessians floored at HESSIAN_FLOOR so
    the non-convex affine/convex objectives cannot flip leaf signs.
    """
    X = np.asarray(side_info, dtype=float)
    Y = np.asarray(base_preds, dtype=float)
    y = np.asarray(targets, dtype=float)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != y.shape[0] or Y.shape[0] != y.shape[0]:
        raise DimensionMismatch(
            f"rows disagree: side {X.shape}, preds {Y.shape}, targets {y.shape}"
        )
    if X.shape[0] == 0:
        raise EmptyData("no training rows")
    n_models = Y.shape[1]
    if n_models < 2:
        raise DimensionMismatch("need at least 2 base models")
    if feature_names is None:
        feature_names = tuple(f"f{j}" for j in range(X.shape[1]))

    init = np.zeros(n_models) if kind is ConstraintKind.CONVEX else np.full(
        n_models, 1.0 / n_models
    )
    binner = _Binner(X, config.histogram_bins)
    binned = binner.bin(X)
    p = np.tile(init, (X.shape[0], 1))
    forests: list[list[Tree]] = [[] for _ in range(n_models)]
    losses: list[float] = []
    for rnd in range(config.num_rounds):
        grad, hess = _grad_hess_batch(y, Y, p, kind)
        hess = np.maximum(hess, HESSIAN_FLOOR)
        for i in range(n_models):
            tree, out = _TreeGrower(
                binned, binner, grad[:, i], hess[:, i], config
            ).grow()
            forests[i].append(tree)
            p[:, i] += out
        _, y_ens = _ensemble_pred(Y, p, kind)
        loss = float(np.mean((y - y_ens) ** 2))
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"training loss diverged at round {rnd}")
        losses.append(loss)
    return BoostedMetaModel(
        forests=forests,
        init_scores=init,
        kind=kind,
        feature_names=feature_names,
        train_losses=losses,
    )


def predict_weights(model: BoostedMetaModel, side_info_row) -> WeightVector:
    row = np.asarray(side_info_row, dtype=float).reshape(1, -1)
    p = model.predict_raw(row)[0]
    return WeightVector(transform(p, model.kind), model.kind)


def predict_weights_batch(model: BoostedMetaModel, side_info) -> np.ndarray:
    p = model.predict_raw(np.asarray(side_info, dtype=float))
    w, _ = _ensemble_pred(np.zeros_like(p), p, model.kind)
    return w
