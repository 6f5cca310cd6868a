"""Output transformations mapping raw meta-learner outputs to combination weights.

Three feasible sets are supported for the weight vector: all of R^M
(identity transform), the sum-to-one hyperplane (normalization by the sum),
and the unit simplex (softmax). Both meta-learners and the analytic oracle
share these definitions and their first derivatives.
"""

from __future__ import annotations

import enum

import numpy as np

from .errors import NormalizationDegenerate

AFFINE_SUM_EPS = 1e-8


class ConstraintKind(enum.Enum):
    UNCONSTRAINED = "unconstrained"
    AFFINE = "affine"
    CONVEX = "convex"

    @classmethod
    def parse(cls, text: str) -> "ConstraintKind":
        try:
            return cls(text.strip().lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown constraint {text!r}; expected one of {names}")


def softmax(p: np.ndarray) -> np.ndarray:
    # max-subtraction: the naive form overflows for |p| > ~700
    shifted = p - p.max()
    e = np.exp(shifted)
    return e / e.sum()


def transform(p, kind: ConstraintKind) -> np.ndarray:
    """Map raw outputs p to weights w for the given constraint.

    Identity for unconstrained, w_i = p_i / sum(p) for affine,
    w_i = exp(p_i) / sum(exp(p_m)) for convex.
    """
    p = np.asarray(p, dtype=float)
    if kind is ConstraintKind.UNCONSTRAINED:
        return p.copy()
    if kind is ConstraintKind.AFFINE:
        s = p.sum()
        if abs(s) <= AFFINE_SUM_EPS:
            raise NormalizationDegenerate(f"|sum(p)|={abs(s):.3e} <= {AFFINE_SUM_EPS}")
        return p / s
    return softmax(p)


def transform_jacobian(p, kind: ConstraintKind) -> np.ndarray:
    """J[m, i] = d w_m / d p_i for the given transform."""
    p = np.asarray(p, dtype=float)
    m = p.shape[0]
    if kind is ConstraintKind.UNCONSTRAINED:
        return np.eye(m)
    if kind is ConstraintKind.AFFINE:
        s = p.sum()
        if abs(s) <= AFFINE_SUM_EPS:
            raise NormalizationDegenerate(f"|sum(p)|={abs(s):.3e} <= {AFFINE_SUM_EPS}")
        w = p / s
        return (np.eye(m) - w[:, None]) / s
    w = softmax(p)
    return np.diag(w) - np.outer(w, w)
