"""Domain types and the sample-moment algebra every estimator consumes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateNormalization, SingularPopulation
from .validation import check_returns, freeze_array

#: |1'theta| at or below this cannot be turned into relative weights.
SUM_TOL = 1e-12


@dataclass(frozen=True)
class ReturnsMatrix:
    """An n x m panel of per-period excess returns.

    Rows are periods in chronological order, columns are assets. Entries are
    unitless excess returns per period. Instances are immutable and safe to
    share across threads.
    """

    data: np.ndarray
    asset_labels: tuple = ()
    period_index: tuple = ()

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2:
            raise ValueError("returns must be a 2-d array of shape (n_periods, n_assets)")
        n, m = data.shape
        if n < 1 or m < 1:
            raise ValueError("returns need at least one period and one asset")
        if not np.all(np.isfinite(data)):
            raise ValueError("returns must be finite")
        labels = tuple(self.asset_labels) if len(self.asset_labels) else tuple(
            f"a{j + 1}" for j in range(m)
        )
        if len(labels) != m:
            raise ValueError(f"expected {m} asset labels, got {len(labels)}")
        if len(set(labels)) != m:
            raise ValueError("asset labels must be distinct")
        periods = tuple(self.period_index) if len(self.period_index) else tuple(range(n))
        if len(periods) != n:
            raise ValueError(f"expected {n} period labels, got {len(periods)}")
        if any(periods[i] >= periods[i + 1] for i in range(n - 1)):
            raise ValueError("period index must be strictly increasing")
        object.__setattr__(self, "data", freeze_array(data))
        object.__setattr__(self, "asset_labels", labels)
        object.__setattr__(self, "period_index", periods)

    @property
    def n_periods(self) -> int:
        return self.data.shape[0]

    @property
    def n_assets(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class SampleMoments:
    """Sample mean, maximum-likelihood covariance and gram matrix of a panel.

    The covariance uses the 1/n normalization so that
    ``gram == n * (cov + outer(mean, mean))`` holds to rounding error.
    """

    mean: np.ndarray
    cov: np.ndarray
    gram: np.ndarray
    n_obs: int

    @property
    def n_assets(self) -> int:
        return self.mean.shape[0]


def compute_moments(returns) -> SampleMoments:
    """Sample moments of a returns panel.

    mean_j = (1/n) sum_i x_ij, cov = (1/n) X'X - mean mean', gram = X'X.
    The gram matrix is symmetrized before the covariance is derived, so the
    stored cov is exactly symmetric.
    """
    X = check_returns(returns)
    n = X.shape[0]
    gram = X.T @ X
    gram = (gram + gram.T) / 2.0
    mean = X.mean(axis=0)
    cov = gram / n - np.outer(mean, mean)
    return SampleMoments(
        mean=freeze_array(mean), cov=freeze_array(cov), gram=freeze_array(gram), n_obs=n
    )


@dataclass(frozen=True)
class PopulationSpec:
    """Ground truth (mu, sigma, ideal return) defining a synthetic market.

    The ideal return acts as the constant regression target; when risk
    aversion `alpha` and risk-free return `r_f` are supplied it must equal
    (1 - alpha * r_f) / alpha exactly (use :meth:`from_risk_aversion`).
    """

    mu: np.ndarray
    sigma: np.ndarray
    r_bar: float = 1.0
    alpha: float | None = None
    r_f: float | None = None

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        if mu.ndim != 1:
            raise ValueError("mu must be a vector")
        m = mu.shape[0]
        if sigma.shape != (m, m):
            raise ValueError(f"sigma must be {m}x{m}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise ValueError("population moments must be finite")
        if not np.allclose(sigma, sigma.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(sigma).max())):
            raise ValueError("sigma must be symmetric")
        sigma = (sigma + sigma.T) / 2.0
        try:
            np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError:
            raise SingularPopulation("sigma is not positive definite") from None
        if not self.r_bar > 0:
            raise ValueError("r_bar must be positive")
        if self.alpha is not None and self.r_f is not None:
            implied = (1.0 - self.alpha * self.r_f) / self.alpha
            if implied != self.r_bar:
                raise ValueError(
                    f"r_bar={self.r_bar} inconsistent with alpha/r_f (implies {implied})"
                )
        object.__setattr__(self, "mu", freeze_array(mu))
        object.__setattr__(self, "sigma", freeze_array(sigma))
        object.__setattr__(self, "r_bar", float(self.r_bar))

    @classmethod
    def from_risk_aversion(cls, mu, sigma, alpha: float, r_f: float = 0.0) -> "PopulationSpec":
        """Build a spec with the ideal return implied by (alpha, r_f)."""
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        return cls(mu=mu, sigma=sigma, r_bar=(1.0 - alpha * r_f) / alpha, alpha=alpha, r_f=r_f)

    @property
    def n_assets(self) -> int:
        return self.mu.shape[0]


@dataclass(frozen=True)
class WeightVector:
    """Absolute positions in m risky assets.

    The position in the risk-free asset is implied: 1 - sum(theta).
    """

    theta: np.ndarray
    labels: tuple | None = None

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim != 1:
            raise ValueError("theta must be a vector")
        if not np.all(np.isfinite(theta)):
            raise ValueError("weights must be finite")
        if self.labels is not None:
            labels = tuple(self.labels)
            if len(labels) != theta.shape[0]:
                raise ValueError("labels must match theta length")
            object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "theta", freeze_array(theta))

    def __len__(self) -> int:
        return self.theta.shape[0]


def relative_weights(weights) -> np.ndarray:
    """Risky-asset weights rescaled to sum to one: theta / (1'theta).

    Raises DegenerateNormalization when |1'theta| <= 1e-12; a near-zero net
    position has no meaningful relative decomposition.
    """
    theta = weights.theta if isinstance(weights, WeightVector) else np.asarray(weights, dtype=float)
    total = float(theta.sum())
    if abs(total) <= SUM_TOL:
        raise DegenerateNormalization(
            f"net position 1'theta = {total:.3e} is too close to zero to normalize"
        )
    return theta / total
