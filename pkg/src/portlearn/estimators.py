"""Portfolio weight estimators with a scikit-learn style fit/predict API.

Every estimator learns an absolute position vector ``weights_`` from a panel
of excess returns. ``predict(X)`` returns the per-period portfolio return
``X @ weights_``; the implied risk-free position is ``1 - weights_.sum()``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import expit
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ._solvers import lasso_kkt, lasso_solve, nonneg_kkt, nonneg_solve
from .core import WeightVector, compute_moments
from .exceptions import (
    DegenerateMoments,
    NonConvergence,
    RankDeficient,
    SingularSubmodel,
)
from .validation import check_returns, freeze_array, labels_of, rng_from

#: Gram/covariance condition numbers at or above this are treated as singular.
COND_MAX = 1e12
#: Eigenvalues of X'X at or below this count as zero for rank purposes.
EIG_TOL = 1e-12
#: Largest admissible KKT violation for the iterative solvers.
KKT_TOL = 1e-8


def _gram_target(X: np.ndarray, r_bar: float):
    """Symmetrized gram matrix X'X and moment vector X'y for y = 1 * r_bar."""
    G = X.T @ X
    G = (G + G.T) / 2.0
    return G, r_bar * X.sum(axis=0)


def solve_gram(G: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve G theta = b for a PSD gram-like matrix with a conditioning guard.

    Raises DegenerateMoments when the condition number reaches 1e12; beyond
    that point we refuse rather than regularize silently.
    """
    d, V = np.linalg.eigh(G)
    if d[0] <= 0.0 or d[-1] <= 0.0 or d[-1] / d[0] >= COND_MAX:
        raise DegenerateMoments(
            "gram matrix is singular or ill-conditioned "
            f"(eigenvalue range [{d[0]:.3e}, {d[-1]:.3e}])"
        )
    return V @ ((V.T @ b) / d)


class BaseWeightEstimator(BaseEstimator):
    """Common plumbing: validation, fitted-state checks, prediction."""

    def _fit_weights(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def fit(self, X, y=None):
        """Learn asset positions from a returns panel.

        Parameters
        ----------
        X : ReturnsMatrix or array-like of shape (n_periods, n_assets)
            Excess returns, one row per period.
        y : ignored
            Present for scikit-learn API compatibility; the regression
            target is the constant ideal return.
        """
        arr = check_returns(X)
        weights = np.asarray(self._fit_weights(arr), dtype=float)
        self.weights_ = weights
        self.n_assets_ = arr.shape[1]
        self.labels_ = labels_of(X)
        return self

    def _require_fitted(self):
        if not hasattr(self, "weights_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet")

    def predict(self, X) -> np.ndarray:
        """Per-period portfolio excess return X @ weights_."""
        self._require_fitted()
        return check_returns(X) @ self.weights_

    def weight_vector(self) -> WeightVector:
        self._require_fitted()
        return WeightVector(self.weights_, self.labels_)


class OLSPortfolio(BaseWeightEstimator):
    """Unpenalized least squares of the ideal return on asset returns.

    This is the plug-in mean-variance portfolio: the solution
    (X'X)^-1 X'y with y = 1 * r_bar equals the closed-form optimal weights
    evaluated at the sample mean and maximum-likelihood covariance.
    """

    def __init__(self, r_bar: float = 1.0):
        self.r_bar = r_bar

    def _fit_weights(self, X):
        G, b = _gram_target(X, self.r_bar)
        return solve_gram(G, b)


class RidgePortfolio(BaseWeightEstimator):
    """L2-penalized positions: (X'X + penalty * I)^-1 X'y.

    Equivalent to the plug-in portfolio computed with the covariance
    inflated by penalty/n on the diagonal, so every asset looks noisier by
    the same amount.
    """

    def __init__(self, penalty: float = 1.0, r_bar: float = 1.0):
        self.penalty = penalty
        self.r_bar = r_bar

    def _fit_weights(self, X):
        lam = float(self.penalty)
        if lam < 0:
            raise ValueError("penalty must be nonnegative")
        G, b = _gram_target(X, self.r_bar)
        if lam == 0.0:
            return solve_gram(G, b)
        return np.linalg.solve(G + lam * np.eye(G.shape[0]), b)


class LassoPortfolio(BaseWeightEstimator):
    """L1-penalized positions via cyclic coordinate descent.

    Minimizes (1/n) sum_i (r_bar - x_i' theta)^2 + penalty * sum_j |theta_j|.
    Convergence is declared when the largest coefficient move in a sweep is
    below `tol`; the solution is then certified against the subgradient
    optimality conditions, and NonConvergence is raised if either check
    cannot be met within `max_iter` sweeps.
    """

    def __init__(
        self,
        penalty: float = 1.0,
        r_bar: float = 1.0,
        tol: float = 1e-10,
        max_iter: int = 100_000,
    ):
        self.penalty = penalty
        self.r_bar = r_bar
        self.tol = tol
        self.max_iter = max_iter

    def _fit_weights(self, X):
        lam = float(self.penalty)
        if lam < 0:
            raise ValueError("penalty must be nonnegative")
        n = X.shape[0]
        G, b = _gram_target(X, self.r_bar)
        H = (2.0 / n) * G
        c = (2.0 / n) * b
        theta = np.zeros(X.shape[1])
        sweeps, converged = lasso_solve(H, c, lam, theta, self.tol, self.max_iter, X=X, r_bar=self.r_bar)
        residual = lasso_kkt(H, c, theta, lam)
        if residual > KKT_TOL:
            detail = f"hit {self.max_iter} sweeps" if not converged else f"stopped after {sweeps} sweeps"
            raise NonConvergence(f"{detail} with KKT residual {residual:.3e} > {KKT_TOL}")
        self.n_sweeps_ = int(sweeps)
        return theta


def lasso_kkt_residual(returns, theta, penalty: float, r_bar: float = 1.0) -> float:
    """Largest violation of the L1 subgradient conditions at `theta`.

    For theta_j = 0 the condition is |(2/n)(X'y - X'X theta)_j| <= penalty;
    otherwise (2/n)(X'y - X'X theta)_j = sign(theta_j) * penalty.
    """
    X = check_returns(returns)
    n = X.shape[0]
    G, b = _gram_target(X, r_bar)
    return lasso_kkt((2.0 / n) * G, (2.0 / n) * b, np.asarray(theta, float), penalty)


def lasso_penalty_ceiling(returns, r_bar: float = 1.0) -> float:
    """Smallest penalty for which the all-zero solution is optimal.

    Equals max_j |(2/n) (X'y)_j| by the subgradient condition at zero.
    """
    X = check_returns(returns)
    n = X.shape[0]
    return float(np.max(np.abs((2.0 / n) * r_bar * X.sum(axis=0))))


class PrincipalComponentPortfolio(BaseWeightEstimator):
    """Positions restricted to the span of the top gram-matrix eigenvectors.

    The panel is projected on the leading `n_components` eigenvectors of
    X'X (descending eigenvalues); least squares runs in the reduced space
    and the coefficients are mapped back, so the solution is orthogonal to
    every discarded eigenvector.
    """

    def __init__(self, n_components: int = 1, r_bar: float = 1.0):
        self.n_components = n_components
        self.r_bar = r_bar

    def _fit_weights(self, X):
        k = int(self.n_components)
        m = X.shape[1]
        if not 1 <= k <= m:
            raise ValueError(f"n_components must be in 1..{m}")
        G, b = _gram_target(X, self.r_bar)
        d, V = np.linalg.eigh(G)
        d = d[::-1]
        V = V[:, ::-1]
        positive = int(np.sum(d > EIG_TOL))
        if k > positive:
            raise RankDeficient(
                f"requested {k} components but only {positive} positive eigenvalues"
            )
        Vk = V[:, :k]
        return Vk @ ((Vk.T @ b) / d[:k])


class EqualWeightPortfolio(BaseWeightEstimator):
    """Fixed gross exposure split equally across assets: theta_j = gross / m."""

    def __init__(self, gross: float = 1.0):
        self.gross = gross

    def _fit_weights(self, X):
        m = X.shape[1]
        return np.full(m, self.gross / m)


class MinVariancePortfolio(BaseWeightEstimator):
    """Relative weights of the global minimum variance portfolio.

    weights_ = cov^-1 1 / (1' cov^-1 1); the vector sums to one, so this is
    a relative allocation (means are deliberately ignored).
    """

    def _fit_weights(self, X):
        cov = compute_moments(X).cov
        w = solve_gram(cov, np.ones(X.shape[1]))
        return w / w.sum()


class NoShortPortfolio(BaseWeightEstimator):
    """Least-squares positions under theta >= 0, by projected coordinate descent.

    Each coordinate is minimized exactly and clamped at zero; the fitted
    point is certified against the nonnegativity KKT conditions.
    """

    def __init__(self, r_bar: float = 1.0, tol: float = 1e-10, max_iter: int = 100_000):
        self.r_bar = r_bar
        self.tol = tol
        self.max_iter = max_iter

    def _fit_weights(self, X):
        n = X.shape[0]
        G, b = _gram_target(X, self.r_bar)
        H = (2.0 / n) * G
        c = (2.0 / n) * b
        theta = np.zeros(X.shape[1])
        sweeps, converged = nonneg_solve(H, c, theta, self.tol, self.max_iter)
        # KKT: theta >= 0 (by construction), grad >= 0, complementary slackness
        residual = nonneg_kkt(H, c, theta)
        if residual > KKT_TOL:
            detail = f"hit {self.max_iter} sweeps" if not converged else f"stopped after {sweeps} sweeps"
            raise NonConvergence(f"{detail} with KKT residual {residual:.3e} > {KKT_TOL}")
        self.n_sweeps_ = int(sweeps)
        return theta


class EmpiricalBayesPortfolio(BaseWeightEstimator):
    """Plug-in weights after shrinking the mean toward the grand mean.

    The grand mean is the return of the minimum variance portfolio,
    mu_g = (1' cov^-1 mu) / (1' cov^-1 1). The shrinkage weight is
    v = (m+2) / ((m+2) + n * (mu - mu_g 1)' cov^-1 (mu - mu_g 1)), and the
    shrunk mean (1-v) mu + v mu_g 1 replaces mu in the plug-in formula.
    """

    def __init__(self, r_bar: float = 1.0):
        self.r_bar = r_bar

    def _fit_weights(self, X):
        n, m = X.shape
        if n <= m + 2:
            raise DegenerateMoments(f"empirical Bayes shrinkage needs n > m + 2 (n={n}, m={m})")
        mo = compute_moments(X)
        d, V = np.linalg.eigh(mo.cov)
        if d[0] <= 0.0 or d[-1] / d[0] >= COND_MAX:
            raise DegenerateMoments("sample covariance is singular or ill-conditioned")

        def cov_solve(v):
            return V @ ((V.T @ v) / d)

        ones = np.ones(m)
        si_mu = cov_solve(mo.mean)
        si_one = cov_solve(ones)
        mu_g = float(ones @ si_mu) / float(ones @ si_one)
        dev = mo.mean - mu_g
        v = (m + 2.0) / ((m + 2.0) + n * float(dev @ cov_solve(dev)))
        mu_bar = (1.0 - v) * mo.mean + v * mu_g * ones
        self.shrinkage_ = v
        self.grand_mean_ = mu_g
        self.shrunk_mean_ = freeze_array(mu_bar)
        A = mo.cov + np.outer(mu_bar, mu_bar)
        return np.linalg.solve(A, mu_bar) * self.r_bar


# ---------------------------------------------------------------------------
# Spike-and-slab Gibbs sampler
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpikeSlabPosterior:
    """Post-burn-in Gibbs output for the Bernoulli/Gaussian inclusion model.

    theta_draws holds one row per kept iteration with excluded assets
    recorded as exact zeros; point_estimate averages those rows.
    """

    inclusion_freq: np.ndarray
    theta_draws: np.ndarray
    sigma2_draws: np.ndarray
    eta_draws: np.ndarray
    point_estimate: WeightVector
    n_rejected_flips: int


class _SlabParts:
    """Conditional posterior pieces for one inclusion vector."""

    __slots__ = ("idx", "chol", "theta1", "b1", "logdet_v1", "logdet_v0")

    def __init__(self, idx, chol, theta1, b1, logdet_v1, logdet_v0):
        self.idx = idx
        self.chol = chol
        self.theta1 = theta1
        self.b1 = b1
        self.logdet_v1 = logdet_v1
        self.logdet_v0 = logdet_v0


def _slab_conditional(G, b, yy, idx, n, g, a0, b0):
    """Conditional posterior for the submodel `idx`, or None when singular.

    Under the scaled gram prior, (V1)^-1 = (1 + g/n) * G_sub, so a single
    Cholesky factorization yields the posterior mean, the scale update and
    both log-determinants.
    """
    k = idx.shape[0]
    if k == 0:
        return _SlabParts(idx, None, np.empty(0), b0 + 0.5 * yy, 0.0, 0.0)
    M = (1.0 + g / n) * G[np.ix_(idx, idx)]
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return None
    pivots = np.diag(L)
    if (pivots.max() / pivots.min()) ** 2 >= COND_MAX:
        return None  # numerically singular submodel
    bs = b[idx]
    theta1 = cho_solve((L, True), bs)
    b1 = b0 + 0.5 * (yy - float(theta1 @ bs))
    if not b1 > 0.0:
        return None
    logdet_m = 2.0 * float(np.sum(np.log(np.diag(L))))
    logdet_v1 = -logdet_m
    logdet_gram = logdet_m - k * math.log(1.0 + g / n)
    logdet_v0 = k * math.log(n / g) - logdet_gram
    return _SlabParts(idx, L, theta1, b1, logdet_v1, logdet_v0)


def spike_slab_conditional(returns, eta, *, r_bar=1.0, g=1.0, a0=0.1, b0=0.1):
    """Conditional posterior (mean, scale pair) given an inclusion vector.

    Returns (theta1, a1, b1) for the included assets, in asset order.
    Raises SingularSubmodel when the submodel gram matrix is singular.
    """
    X = check_returns(returns)
    n = X.shape[0]
    G, b = _gram_target(X, r_bar)
    idx = np.flatnonzero(np.asarray(eta, dtype=bool))
    parts = _slab_conditional(G, b, n * r_bar**2, idx, n, g, a0, b0)
    if parts is None:
        raise SingularSubmodel("submodel gram matrix is singular")
    return parts.theta1, a0 + 0.5 * n, parts.b1


class SpikeSlabPortfolio(BaseWeightEstimator):
    """Bayesian asset selection with a Bernoulli spike and Gaussian slab.

    A Gibbs sampler alternates between flipping asset-inclusion indicators
    (visited in a fresh random order each iteration, comparing the two
    marginal model posteriors in log space) and drawing the noise level and
    included positions from their conjugate conditionals. The slab prior is
    the scaled gram prior with mean zero and strength `g`; `a0`/`b0` shape
    the inverse-gamma noise prior and `inclusion_prior` may be a scalar or a
    per-asset vector of Bernoulli probabilities.

    weights_ is the posterior mean over kept draws with excluded assets
    contributing exact zeros.
    """

    def __init__(
        self,
        r_bar: float = 1.0,
        g: float = 1.0,
        a0: float = 0.1,
        b0: float = 0.1,
        inclusion_prior=0.5,
        n_iter: int = 10_000,
        n_burn: int = 5_000,
        seed: int = 0,
    ):
        self.r_bar = r_bar
        self.g = g
        self.a0 = a0
        self.b0 = b0
        self.inclusion_prior = inclusion_prior
        self.n_iter = n_iter
        self.n_burn = n_burn
        self.seed = seed

    def _fit_weights(self, X):
        n, m = X.shape
        if self.g <= 0 or self.a0 <= 0 or self.b0 <= 0:
            raise ValueError("g, a0 and b0 must be positive")
        if self.n_iter < 1 or self.n_burn < 0 or not self.n_burn < self.n_iter:
            raise ValueError("need n_iter >= 1 and 0 <= n_burn < n_iter")
        pi = np.broadcast_to(np.asarray(self.inclusion_prior, dtype=float), (m,)).copy()
        if np.any(pi < 0) or np.any(pi > 1):
            raise ValueError("inclusion probabilities must lie in [0, 1]")
        posterior = _run_gibbs(
            X,
            r_bar=self.r_bar,
            g=self.g,
            a0=self.a0,
            b0=self.b0,
            pi=pi,
            n_iter=int(self.n_iter),
            n_burn=int(self.n_burn),
            rng=rng_from(self.seed),
            labels=None,
        )
        self.posterior_ = posterior
        self.n_rejected_flips_ = posterior.n_rejected_flips
        return posterior.point_estimate.theta

    def fit(self, X, y=None):
        super().fit(X, y)
        # re-attach labels to the posterior's point estimate once known
        if self.labels_ is not None:
            post = self.posterior_
            self.posterior_ = SpikeSlabPosterior(
                inclusion_freq=post.inclusion_freq,
                theta_draws=post.theta_draws,
                sigma2_draws=post.sigma2_draws,
                eta_draws=post.eta_draws,
                point_estimate=WeightVector(post.point_estimate.theta, self.labels_),
                n_rejected_flips=post.n_rejected_flips,
            )
        return self


def _run_gibbs(X, *, r_bar, g, a0, b0, pi, n_iter, n_burn, rng, labels):
    n, m = X.shape
    G, b = _gram_target(X, r_bar)
    yy = n * r_bar**2
    a1 = a0 + 0.5 * n
    log_const = math.lgamma(a1) - math.lgamma(a0) + a0 * math.log(b0) - 0.5 * n * math.log(2 * math.pi)

    forced_off = pi <= 0.0
    forced_on = pi >= 1.0
    free = ~(forced_off | forced_on)
    with np.errstate(divide="ignore"):
        log_pi = np.log(pi)
        log_not_pi = np.log1p(-pi)

    def log_h(parts, eta):
        prior = float(np.where(eta, log_pi, log_not_pi).sum())
        return (
            log_const
            + 0.5 * (parts.logdet_v1 - parts.logdet_v0)
            - a1 * math.log(parts.b1)
            + prior
        )

    eta = ~forced_off  # all assets in, except those the prior forbids
    parts_cur = _slab_conditional(G, b, yy, np.flatnonzero(eta), n, g, a0, b0)
    log_h_cur = None if parts_cur is None else log_h(parts_cur, eta)

    total = n_burn + n_iter
    theta_draws = np.zeros((n_iter, m))
    sigma2_draws = np.empty(n_iter)
    eta_draws = np.zeros((n_iter, m), dtype=bool)
    rejected = 0

    for it in range(total):
        for j in rng.permutation(m):
            if not free[j]:
                continue
            cur = eta[j]
            eta[j] = not cur
            parts_prop = _slab_conditional(G, b, yy, np.flatnonzero(eta), n, g, a0, b0)
            if parts_prop is None:
                eta[j] = cur
                rejected += 1
                continue
            log_h_prop = log_h(parts_prop, eta)
            if log_h_cur is None:
                # current state is singular: move to any feasible neighbor
                parts_cur, log_h_cur = parts_prop, log_h_prop
                continue
            if eta[j]:
                p_include = expit(log_h_prop - log_h_cur)
            else:
                p_include = expit(log_h_cur - log_h_prop)
            include = rng.random() < p_include
            if include == eta[j]:
                parts_cur, log_h_cur = parts_prop, log_h_prop
            else:
                eta[j] = cur
        if log_h_cur is None:
            raise SingularSubmodel(
                "the all-assets starting model is singular and no single flip "
                "reaches a nonsingular model; the sampler cannot leave its start state"
            )
        phi2 = 1.0 / rng.gamma(a1, 1.0 / parts_cur.b1)
        if it >= n_burn:
            keep = it - n_burn
            sigma2_draws[keep] = phi2
            eta_draws[keep] = eta
        k = parts_cur.idx.shape[0]
        if k:
            z = rng.standard_normal(k)
            draw = parts_cur.theta1 + math.sqrt(phi2) * solve_triangular(
                parts_cur.chol.T, z, lower=False
            )
            if it >= n_burn:
                theta_draws[it - n_burn, parts_cur.idx] = draw

    inclusion_freq = eta_draws.mean(axis=0)
    point = theta_draws.mean(axis=0)
    return SpikeSlabPosterior(
        inclusion_freq=freeze_array(inclusion_freq),
        theta_draws=freeze_array(theta_draws),
        sigma2_draws=freeze_array(sigma2_draws),
        eta_draws=freeze_array(eta_draws, dtype=bool),
        point_estimate=WeightVector(point, labels),
        n_rejected_flips=rejected,
    )
