"""Optimal combination weights and losses under known conditional statistics.

Given the conditional second-moment matrix C of the base predictions, the
cross-moment vector a between target and predictions, and the target's
conditional second moment sigma2, the best achievable squared error has a
closed form in the unconstrained and affine cases. The convex case has a
closed form only for two base models (corner analysis); larger M is solved
numerically by projected gradient on the unit simplex.

These are the ground truth the learned meta-models are measured against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constraints import ConstraintKind
from .core import WeightVector
from .errors import NoConvergence, OrderingViolated, SingularStatistics

ORDERING_TOL = 1e-9
_PG_MAX_ITER = 10_000
_PG_LOSS_TOL = 1e-12


@dataclass(frozen=True)
class ConditionalStats:
    """Second-moment statistics of (target, base predictions) given side info.

    c_mat = E[yhat yhat^T | s], a_vec = E[y yhat | s], sigma2 = E[y^2 | s].
    sigma2 equals the conditional variance for a zero-mean target.
    """

    c_mat: np.ndarray
    a_vec: np.ndarray
    sigma2: float

    def __post_init__(self):
        c = np.asarray(self.c_mat, dtype=float)
        a = np.asarray(self.a_vec, dtype=float)
        object.__setattr__(self, "c_mat", c)
        object.__setattr__(self, "a_vec", a)
        object.__setattr__(self, "sigma2", float(self.sigma2))
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise SingularStatistics(f"c_mat must be square, got {c.shape}")
        if a.shape != (c.shape[0],):
            raise SingularStatistics(f"a_vec shape {a.shape} vs c_mat {c.shape}")
        if not np.allclose(c, c.T, atol=1e-12, rtol=0.0):
            raise SingularStatistics("c_mat not symmetric within 1e-12")
        if self.sigma2 < 0:
            raise SingularStatistics(f"sigma2 must be >= 0, got {self.sigma2}")
        # SPD check via the factorization we use everywhere else: failure is
        # exactly the condition under which the stats are unusable.
        try:
            chol = np.linalg.cholesky(c)
        except np.linalg.LinAlgError:
            raise SingularStatistics("c_mat is not positive definite") from None
        object.__setattr__(self, "_chol", chol)
        c.setflags(write=False)
        a.setflags(write=False)

    @property
    def n_models(self) -> int:
        return self.a_vec.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """C^{-1} rhs via the cached Cholesky factor."""
        lo = np.linalg.solve(self._chol, rhs)
        return np.linalg.solve(self._chol.T, lo)


def optimal_unconstrained(stats: ConditionalStats) -> WeightVector:
    return WeightVector(stats.solve(stats.a_vec), ConstraintKind.UNCONSTRAINED)


def loss_unconstrained(stats: ConditionalStats) -> float:
    w = stats.solve(stats.a_vec)
    return stats.sigma2 - float(stats.a_vec @ w)


def optimal_affine(stats: ConditionalStats) -> WeightVector:
    w_unc = stats.solve(stats.a_vec)
    c_inv_one = stats.solve(np.ones(stats.n_models))
    shift = (w_unc.sum() - 1.0) / c_inv_one.sum()
    w = w_unc - shift * c_inv_one
    # kill the last few ulps so downstream sum-to-one checks are exact
    w = w / w.sum()
    return WeightVector(w, ConstraintKind.AFFINE)


def loss_affine(stats: ConditionalStats) -> float:
    w_unc = stats.solve(stats.a_vec)
    c_inv_one = stats.solve(np.ones(stats.n_models))
    penalty = (w_unc.sum() - 1.0) ** 2 / c_inv_one.sum()
    return loss_unconstrained(stats) + float(penalty)


def loss_at_weights(stats: ConditionalStats, w) -> float:
    """Squared loss of an arbitrary weight vector: the completed-square form
    L_unc* + (w - w_unc*)^T C (w - w_unc*)."""
    w = np.asarray(w, dtype=float)
    d = w - stats.solve(stats.a_vec)
    return loss_unconstrained(stats) + float(d @ stats.c_mat @ d)


def project_to_simplex(v) -> np.ndarray:
    """Euclidean projection onto the unit simplex (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ks = np.arange(1, v.size + 1)
    cond = u - css / ks > 0
    rho = ks[cond][-1]
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def _convex_m2(stats: ConditionalStats) -> WeightVector:
    w_aff = optimal_affine(stats).w
    if (w_aff >= 0).all():
        return WeightVector(w_aff, ConstraintKind.CONVEX)
    # exactly one component is negative (they sum to 1): the optimum is the
    # adjacent simplex corner
    corner = np.where(w_aff < 0, 0.0, 1.0)
    return WeightVector(corner, ConstraintKind.CONVEX)


def optimal_convex(stats: ConditionalStats) -> WeightVector:
    """Best weights on the unit simplex.

    M = 2 uses the corner-or-interior case analysis; larger M runs projected
    gradient on the quadratic loss with step 1/(2 lambda_max(C)), which is
    globally convergent for a convex quadratic.
    """
    if stats.n_models == 2:
        return _convex_m2(stats)
    w_unc = stats.solve(stats.a_vec)
    step = 1.0 / (2.0 * float(np.linalg.eigvalsh(stats.c_mat)[-1]))
    w = project_to_simplex(w_unc)
    prev = loss_at_weights(stats, w)
    for _ in range(_PG_MAX_ITER):
        grad = 2.0 * (stats.c_mat @ (w - w_unc))
        w = project_to_simplex(w - step * grad)
        cur = loss_at_weights(stats, w)
        if abs(prev - cur) < _PG_LOSS_TOL:
            return WeightVector(w, ConstraintKind.CONVEX)
        prev = cur
    raise NoConvergence(f"projected gradient did not settle in {_PG_MAX_ITER} steps")


def loss_convex(stats: ConditionalStats) -> float:
    if stats.n_models == 2:
        w_aff = optimal_affine(stats).w
        if (w_aff >= 0).all():
            return loss_affine(stats)
        neg = float(w_aff[w_aff < 0][0])
        d = np.array([-1.0, 1.0])
        return loss_affine(stats) + float(d @ stats.c_mat @ d) * neg**2
    return loss_at_weights(stats, optimal_convex(stats).w)


def check_loss_ordering(stats: ConditionalStats) -> tuple[float, float, float]:
    """(L_unc*, L_aff*, L_con*), asserting the theoretical inclusion ordering."""
    l_unc = loss_unconstrained(stats)
    l_aff = loss_affine(stats)
    l_con = loss_convex(stats)
    if l_unc > l_aff + ORDERING_TOL or l_aff > l_con + ORDERING_TOL:
        raise OrderingViolated(
            f"loss ordering violated: unc={l_unc!r} aff={l_aff!r} con={l_con!r}"
        )
    return l_unc, l_aff, l_con


def estimate_stats(base_preds, targets) -> ConditionalStats:
    """Plain-average second-moment estimates from data (testing helper).

    No shrinkage: C = mean over rows of yhat yhat^T, a = mean of y yhat,
    sigma2 = mean of y^2.
    """
    preds = np.asarray(base_preds, dtype=float)
    y = np.asarray(targets, dtype=float)
    if preds.ndim != 2 or preds.shape[0] != y.shape[0]:
        raise SingularStatistics(f"shapes {preds.shape} vs {y.shape}")
    n = preds.shape[0]
    c = preds.T @ preds / n
    a = preds.T @ y / n
    return ConditionalStats(c_mat=(c + c.T) / 2.0, a_vec=a, sigma2=float(y @ y / n))
