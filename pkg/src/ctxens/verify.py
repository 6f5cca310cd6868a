"""Property suites behind the `verify` CLI command.

Each suite pits an analytic path against an independent oracle (finite
differences, exhaustive grid search, a dense solver) and reports the worst
observed error. Pass/fail is |a - b| <= rtol * max(|a|, |b|) + atol, where
atol absorbs the oracle's own floating-point measurement noise; the reported
score is |a - b| / (max(|a|, |b|) + atol / rtol), directly comparable to rtol.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constraints import ConstraintKind, transform
from .errors import NormalizationDegenerate
from .gbdt import meta_grad_hess
from .mlp import backward, forward, init_model
from .oracle import (
    ConditionalStats,
    check_loss_ordering,
    loss_at_weights,
    optimal_affine,
    optimal_convex,
    optimal_unconstrained,
)

GRAD_RTOL = 1e-5
HESS_RTOL = 1e-4
MLP_RTOL = 1e-4
FD_ATOL = 1e-7  # covers central-difference roundoff at the sampled loss scales
FD_STEP = 1e-5

ORACLE_LOSS_TOL = 2e-4
ORDER_TOL = 1e-9


@dataclass(frozen=True)
class CheckResult:
    name: str
    observed: float
    tolerance: float
    passed: bool

    def line(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return f"[{status}] {self.name}: max error {self.observed:.3e} (tol {self.tolerance:.1e})"


def _score(a: np.ndarray, b: np.ndarray, rtol: float, atol: float) -> float:
    denom = np.maximum(np.abs(a), np.abs(b)) + atol / rtol
    return float(np.max(np.abs(a - b) / denom))


def _ensemble_loss(y, yp, p, kind) -> float:
    w = transform(p, kind)
    return float((y - w @ yp) ** 2)


def _draw_instance(rng, kind, n_models):
    y = rng.uniform(-3.0, 3.0)
    yp = rng.uniform(-3.0, 3.0, n_models)
    p = rng.uniform(-3.0, 3.0, n_models)
    if kind is ConstraintKind.AFFINE:
        while abs(p.sum()) < 1.0:
            p = rng.uniform(-3.0, 3.0, n_models)
    return y, yp, p


def grad_suite(n: int = 1000, seed: int = 20240) -> list[CheckResult]:
    """Boosting-objective gradients/hessians and MLP backprop vs finite
    differences, per constraint kind."""
    rng = np.random.default_rng(seed)
    results = []
    h = FD_STEP
    for kind in ConstraintKind:
        grad_err = 0.0
        hess_err = 0.0
        for _ in range(n):
            m = int(rng.integers(2, 6))
            y, yp, p = _draw_instance(rng, kind, m)
            g, hs = meta_grad_hess(y, yp, p, kind)
            fd_g = np.empty(m)
            fd_h = np.empty(m)
            for i in range(m):
                e = np.zeros(m)
                e[i] = h
                fd_g[i] = (
                    _ensemble_loss(y, yp, p + e, kind)
                    - _ensemble_loss(y, yp, p - e, kind)
                ) / (2 * h)
                # the hessian is defined as the derivative of the gradient;
                # difference the (independently validated) analytic gradient
                gp, _ = meta_grad_hess(y, yp, p + e, kind)
                gm, _ = meta_grad_hess(y, yp, p - e, kind)
                fd_h[i] = (gp[i] - gm[i]) / (2 * h)
            grad_err = max(grad_err, _score(g, fd_g, GRAD_RTOL, FD_ATOL))
            hess_err = max(hess_err, _score(hs, fd_h, HESS_RTOL, FD_ATOL))
        results.append(
            CheckResult(
                f"gbdt-grad-{kind.value}", grad_err, GRAD_RTOL, grad_err <= GRAD_RTOL
            )
        )
        results.append(
            CheckResult(
                f"gbdt-hess-{kind.value}", hess_err, HESS_RTOL, hess_err <= HESS_RTOL
            )
        )

    for kind in ConstraintKind:
        worst = 0.0
        count = 0
        trial = 0
        while count < n:
            trial += 1
            model = init_model(3, 4, 2, kind, seed=seed + trial)
            x = rng.uniform(-2.0, 2.0, 3)
            y = rng.uniform(-2.0, 2.0)
            yp = rng.uniform(-2.0, 2.0, 2)
            if kind is ConstraintKind.AFFINE:
                model.u2 += 0.5
            try:
                v, _, p, _ = forward(model, x)
            except NormalizationDegenerate:
                continue
            # the loss is not differentiable at a ReLU kink; stay clear of it
            if np.abs(v).min() < 1e-3:
                continue
            if kind is ConstraintKind.AFFINE and abs(p.sum()) < 0.3:
                continue
            count += 1
            du1, du2 = backward(model, x, y, yp)
            for U, dU in ((model.u1, du1), (model.u2, du2)):
                fd = np.empty_like(dU)
                for idx in np.ndindex(U.shape):
                    orig = U[idx]
                    U[idx] = orig + h
                    lp = _mlp_loss(model, x, y, yp)
                    U[idx] = orig - h
                    lm = _mlp_loss(model, x, y, yp)
                    U[idx] = orig
                    fd[idx] = (lp - lm) / (2 * h)
                worst = max(worst, _score(dU, fd, MLP_RTOL, FD_ATOL))
        results.append(
            CheckResult(f"mlp-backward-{kind.value}", worst, MLP_RTOL, worst <= MLP_RTOL)
        )
    return results


def _mlp_loss(model, x, y, yp) -> float:
    _, _, _, w = forward(model, x)
    return float((y - w.w @ yp) ** 2)


def _sample_stats_m2(rng) -> ConditionalStats:
    """Random SPD stats whose unconstrained and affine optima stay inside the
    [-2, 2]^2 grid-search box."""
    while True:
        eigs = rng.uniform(0.1, 10.0, 2)
        theta = rng.uniform(0.0, np.pi)
        rot = np.array(
            [[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]]
        )
        c = rot @ np.diag(eigs) @ rot.T
        c = (c + c.T) / 2.0
        w_star = rng.uniform(-1.5, 1.5, 2)
        a = c @ w_star
        sigma2 = float(w_star @ a) + float(rng.uniform(0.0, 1.0))
        stats = ConditionalStats(c_mat=c, a_vec=a, sigma2=sigma2)
        w_aff = optimal_affine(stats).w
        if np.abs(w_aff).max() <= 1.8:
            return stats


def _direct_loss_grid(stats: ConditionalStats, w1: np.ndarray, w2: np.ndarray):
    """min over the grid of sigma2 - 2 w.a + w'Cw, evaluated directly."""
    c, a = stats.c_mat, stats.a_vec
    u1 = c[0, 0] * w1**2 - 2.0 * a[0] * w1
    u2 = c[1, 1] * w2**2 - 2.0 * a[1] * w2
    k = 2.0 * c[0, 1] * w1
    best = np.inf
    chunk = 2048
    buf = np.empty((chunk, w2.size))
    for lo in range(0, w1.size, chunk):
        hi = min(lo + chunk, w1.size)
        view = buf[: hi - lo]
        np.multiply.outer(k[lo:hi], w2, out=view)
        view += u2
        view += u1[lo:hi, None]
        best = min(best, float(view.min()))
    return best + stats.sigma2


def oracle_suite(n: int = 100, seed: int = 777) -> list[CheckResult]:
    """Closed forms vs exhaustive grid search in achieved loss (M = 2)."""
    rng = np.random.default_rng(seed)
    grid = np.arange(-2.0, 2.0 + 1e-12, 1e-3)
    simplex_w1 = np.arange(0.0, 1.0 + 1e-12, 1e-4)
    unc_err = aff_err = con_err = 0.0
    for _ in range(n):
        stats = _sample_stats_m2(rng)

        got = loss_at_weights(stats, optimal_unconstrained(stats).w)
        grid_min = _direct_loss_grid(stats, grid, grid)
        unc_err = max(unc_err, abs(got - grid_min))

        w_aff = optimal_affine(stats).w
        got = loss_at_weights(stats, w_aff)
        cand = np.column_stack([grid, 1.0 - grid])
        losses = (
            stats.sigma2
            - 2.0 * cand @ stats.a_vec
            + np.einsum("ij,jk,ik->i", cand, stats.c_mat, cand)
        )
        aff_err = max(aff_err, abs(got - float(losses.min())))

        w_con = optimal_convex(stats).w
        got = loss_at_weights(stats, w_con)
        cand = np.column_stack([simplex_w1, 1.0 - simplex_w1])
        losses = (
            stats.sigma2
            - 2.0 * cand @ stats.a_vec
            + np.einsum("ij,jk,ik->i", cand, stats.c_mat, cand)
        )
        con_err = max(con_err, abs(got - float(losses.min())))
    return [
        CheckResult("oracle-unconstrained-vs-grid", unc_err, ORACLE_LOSS_TOL,
                    unc_err <= ORACLE_LOSS_TOL),
        CheckResult("oracle-affine-vs-grid", aff_err, ORACLE_LOSS_TOL,
                    aff_err <= ORACLE_LOSS_TOL),
        CheckResult("oracle-convex-vs-grid", con_err, ORACLE_LOSS_TOL,
                    con_err <= ORACLE_LOSS_TOL),
    ]


def sample_spd_stats(rng, n_models: int) -> ConditionalStats:
    """Random SPD statistics with eigenvalues in [0.1, 10]."""
    eigs = rng.uniform(0.1, 10.0, n_models)
    q, _ = np.linalg.qr(rng.standard_normal((n_models, n_models)))
    c = q @ np.diag(eigs) @ q.T
    c = (c + c.T) / 2.0
    a = rng.uniform(-2.0, 2.0, n_models)
    sigma2 = float(rng.uniform(0.5, 5.0))
    return ConditionalStats(c_mat=c, a_vec=a, sigma2=sigma2)


def order_suite(n: int = 100, seed: int = 4242) -> list[CheckResult]:
    """Loss ordering plus solver cross-checks on random SPD statistics."""
    rng = np.random.default_rng(seed)
    violations = 0
    solve_err = 0.0
    aff_sum_err = 0.0
    con_feas_err = 0.0
    for i in range(n):
        m = 2 + i % 4
        stats = sample_spd_stats(rng, m)
        try:
            check_loss_ordering(stats)
        except Exception:
            violations += 1
        w_unc = optimal_unconstrained(stats).w
        ref = np.linalg.solve(stats.c_mat, stats.a_vec)
        solve_err = max(solve_err, float(np.abs(w_unc - ref).max()))
        aff_sum_err = max(aff_sum_err, abs(optimal_affine(stats).w.sum() - 1.0))
        w_con = optimal_convex(stats).w
        con_feas_err = max(
            con_feas_err,
            abs(w_con.sum() - 1.0),
            float(max(0.0, -(w_con.min()))),
        )
    return [
        CheckResult("loss-ordering-violations", float(violations), 0.0, violations == 0),
        CheckResult("unconstrained-vs-dense-solve", solve_err, 1e-9, solve_err <= 1e-9),
        CheckResult("affine-sum-to-one", aff_sum_err, 1e-9, aff_sum_err <= 1e-9),
        CheckResult("convex-on-simplex", con_feas_err, 1e-9, con_feas_err <= 1e-9),
    ]


SUITES = {"grad": grad_suite, "oracle": oracle_suite, "order": order_suite}
