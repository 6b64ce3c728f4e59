"""Seeded K-fold cross-validation for choosing the penalty level.

The score for a candidate penalty is the held-out mean squared deviation of
the portfolio return from the ideal return: folds are fit on their
complement and scored as (1/|fold|) sum (r_bar - x' theta_hat)^2, averaged
across folds. Infeasible grid points (degenerate fold fits, too few
components, solver failures) carry an explicit +inf sentinel and never win.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._solvers import lasso_kkt, lasso_solve
from .estimators import (
    COND_MAX,
    EIG_TOL,
    KKT_TOL,
    BaseWeightEstimator,
    LassoPortfolio,
    PrincipalComponentPortfolio,
    RidgePortfolio,
    _gram_target,
    lasso_penalty_ceiling,
)
from .exceptions import AllInfeasible, InvalidFoldCount
from .validation import check_returns, freeze_array, rng_from

PENALTY_KINDS = ("ridge", "lasso", "pcr")


@dataclass(frozen=True)
class FoldPlan:
    """Reproducible balanced assignment of n periods to k folds."""

    k: int
    assignments: np.ndarray
    seed: int = 0

    def __post_init__(self):
        a = np.asarray(self.assignments, dtype=int)
        if a.ndim != 1:
            raise ValueError("assignments must be a vector")
        counts = np.bincount(a, minlength=self.k)
        if len(counts) != self.k or counts.min() < 1:
            raise ValueError("every fold must be nonempty")
        if counts.max() - counts.min() > 1:
            raise ValueError("fold sizes may differ by at most one")
        object.__setattr__(self, "assignments", freeze_array(a, dtype=int))

    @property
    def n(self) -> int:
        return self.assignments.shape[0]

    def test_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)


def make_folds(n: int, k: int, seed: int = 0) -> FoldPlan:
    """Uniformly random balanced partition of range(n) into k folds."""
    if k < 2 or k > n:
        raise InvalidFoldCount(f"need 2 <= k <= n, got k={k} for n={n}")
    perm = rng_from(seed).permutation(n)
    assignments = np.empty(n, dtype=int)
    base, extra = divmod(n, k)
    start = 0
    for fold in range(k):
        size = base + (1 if fold < extra else 0)
        assignments[perm[start : start + size]] = fold
        start += size
    return FoldPlan(k=k, assignments=assignments, seed=seed)


@dataclass(frozen=True)
class CvCurve:
    """Cross-validation error curve over a penalty grid."""

    kind: str
    grid: np.ndarray
    errors: np.ndarray
    per_fold: np.ndarray
    chosen: float

    def chosen_index(self) -> int:
        return int(np.flatnonzero(self.grid == self.chosen)[0])


def default_penalty_grid(returns, r_bar: float, kind: str, *, num: int = 100, span: float = 1e-4):
    """Penalty grid per estimator kind.

    ridge/lasso: `num` log-spaced values from the all-zero lasso ceiling
    down to ceiling * span, with 0 appended so the unpenalized solution is
    always a candidate. pcr: the integers 1..m (callers may cap at fold
    rank).
    """
    X = check_returns(returns)
    if kind == "pcr":
        return np.arange(1, X.shape[1] + 1)
    if kind not in PENALTY_KINDS:
        raise ValueError(f"unknown penalty kind {kind!r}")
    lam_max = lasso_penalty_ceiling(X, r_bar)
    if lam_max == 0.0:
        return np.array([0.0])
    grid = np.geomspace(lam_max, lam_max * span, num)
    return np.append(grid, 0.0)


def _ridge_fold_errors(train, test, r_bar, grid):
    G, b = _gram_target(train, r_bar)
    d, V = np.linalg.eigh(G)
    Vb = V.T @ b
    lam = np.asarray(grid, dtype=float)
    errs = np.full(lam.shape[0], np.inf)
    pos = lam > 0
    if pos.any():
        coef = V @ (Vb[:, None] / (d[:, None] + lam[pos][None, :]))
        errs[pos] = ((r_bar - test @ coef) ** 2).mean(axis=0)
    if (~pos).any() and d[0] > 0 and d[-1] / d[0] < COND_MAX:
        coef0 = V @ (Vb / d)
        errs[~pos] = ((r_bar - test @ coef0) ** 2).mean()
    return errs


def _lasso_fold_errors(train, test, r_bar, grid, tol, max_iter):
    n = train.shape[0]
    G, b = _gram_target(train, r_bar)
    H = (2.0 / n) * G
    c = (2.0 / n) * b
    theta = np.zeros(train.shape[1])
    errs = np.full(len(grid), np.inf)
    for i, lam in enumerate(grid):
        _, converged = lasso_solve(H, c, float(lam), theta, tol, max_iter, X=train, r_bar=r_bar)
        if lasso_kkt(H, c, theta, float(lam)) > KKT_TOL:
            if not converged:
                theta[:] = 0.0  # do not warm start the next point from garbage
            continue
        errs[i] = ((r_bar - test @ theta) ** 2).mean()
    return errs


def _pcr_fold_errors(train, test, r_bar, grid):
    G, b = _gram_target(train, r_bar)
    d, V = np.linalg.eigh(G)
    d = d[::-1]
    V = V[:, ::-1]
    rank = int(np.sum(d > EIG_TOL))
    gamma = np.zeros_like(d)
    gamma[:rank] = (V.T @ b)[:rank] / d[:rank]
    paths = np.cumsum(V * gamma[None, :], axis=1)  # column k-1 = weights with k components
    preds = test @ paths
    errs = np.full(len(grid), np.inf)
    for i, k in enumerate(grid):
        k = int(k)
        if 1 <= k <= rank:
            errs[i] = ((r_bar - preds[:, k - 1]) ** 2).mean()
    return errs


def _prefer(kind: str, candidate, incumbent) -> bool:
    # parsimony tie-break: more regularization for ridge/lasso, fewer components for pcr
    if kind == "pcr":
        return candidate < incumbent
    return candidate > incumbent


def _choose(kind, grid, errors):
    best = None
    for i, err in enumerate(errors):
        if not np.isfinite(err):
            continue
        if best is None or err < errors[best] or (err == errors[best] and _prefer(kind, grid[i], grid[best])):
            best = i
    return best


def cross_validate(
    returns,
    r_bar: float,
    kind: str,
    grid,
    plan: FoldPlan,
    *,
    lasso_tol: float = 1e-10,
    lasso_max_iter: int = 100_000,
) -> CvCurve:
    """Fit each fold complement over the grid and score on the held-out fold.

    Raises AllInfeasible when no grid point has a finite mean error.
    """
    X = check_returns(returns)
    if X.shape[0] != plan.n:
        raise ValueError("fold plan does not match the number of periods")
    if kind not in PENALTY_KINDS:
        raise ValueError(f"unknown penalty kind {kind!r}")
    grid = np.asarray(grid)
    per_fold = np.empty((plan.k, grid.shape[0]))
    for fold in range(plan.k):
        train = X[plan.train_index(fold)]
        test = X[plan.test_index(fold)]
        if kind == "ridge":
            per_fold[fold] = _ridge_fold_errors(train, test, r_bar, grid)
        elif kind == "lasso":
            per_fold[fold] = _lasso_fold_errors(train, test, r_bar, grid, lasso_tol, lasso_max_iter)
        else:
            per_fold[fold] = _pcr_fold_errors(train, test, r_bar, grid)
    errors = per_fold.mean(axis=0)
    best = _choose(kind, grid, errors)
    if best is None:
        raise AllInfeasible(f"every {kind} grid point was infeasible on some fold")
    return CvCurve(
        kind=kind,
        grid=freeze_array(grid, dtype=grid.dtype),
        errors=freeze_array(errors),
        per_fold=freeze_array(per_fold),
        chosen=grid[best].item(),
    )


def _refit_estimator(kind, chosen, r_bar):
    if kind == "ridge":
        return RidgePortfolio(penalty=chosen, r_bar=r_bar)
    if kind == "lasso":
        return LassoPortfolio(penalty=chosen, r_bar=r_bar)
    return PrincipalComponentPortfolio(n_components=int(chosen), r_bar=r_bar)


class PenaltySearchCV(BaseWeightEstimator):
    """Choose the penalty by K-fold cross-validation, then refit on all data.

    Parameters
    ----------
    kind : {"ridge", "lasso", "pcr"}
        Which penalized estimator to tune.
    r_bar : float
        Ideal return used as the constant regression target.
    grid : array-like, optional
        Candidate penalties. Defaults to :func:`default_penalty_grid`; for
        pcr the default is additionally capped at the smallest fold
        complement rank.
    cv : int or "loo"
        Number of folds, or leave-one-out.
    seed : int
        Seed for the fold assignment.

    Attributes
    ----------
    weights_ : ndarray
        Refit positions at the chosen penalty.
    chosen_ : float
        Penalty with the smallest CV error (ties break toward more
        regularization, or fewer components for pcr).
    curve_ : CvCurve
        Full per-fold error surface.
    """

    def __init__(self, kind="ridge", r_bar=1.0, grid=None, cv=5, seed=0,
                 grid_size=100, grid_span=1e-4):
        self.kind = kind
        self.r_bar = r_bar
        self.grid = grid
        self.cv = cv
        self.seed = seed
        self.grid_size = grid_size
        self.grid_span = grid_span

    def _fit_weights(self, X):
        n = X.shape[0]
        k = n if self.cv == "loo" else int(self.cv)
        plan = make_folds(n, k, self.seed)
        if self.grid is not None:
            grid = np.asarray(self.grid)
        else:
            grid = default_penalty_grid(
                X, self.r_bar, self.kind, num=self.grid_size, span=self.grid_span
            )
            if self.kind == "pcr":
                ranks = []
                for fold in range(plan.k):
                    G, _ = _gram_target(X[plan.train_index(fold)], self.r_bar)
                    ranks.append(int(np.sum(np.linalg.eigvalsh(G) > EIG_TOL)))
                grid = np.arange(1, max(1, min(X.shape[1], min(ranks))) + 1)
        curve = cross_validate(X, self.r_bar, self.kind, grid, plan)
        estimator = _refit_estimator(self.kind, curve.chosen, self.r_bar).fit(X)
        self.curve_ = curve
        self.chosen_ = curve.chosen
        self.plan_ = plan
        self.estimator_ = estimator
        return estimator.weights_
