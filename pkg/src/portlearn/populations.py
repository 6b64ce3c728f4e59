"""Synthetic market populations and the seeded multivariate normal sampler."""

from __future__ import annotations

import numpy as np

from .core import PopulationSpec, ReturnsMatrix
from .validation import rng_from


def sample_returns(pop: PopulationSpec, n: int, seed) -> ReturnsMatrix:
    """Draw n iid multivariate-normal excess return rows from `pop`.

    Sampling goes through a triangular (Cholesky) factor of sigma, so the
    output is a deterministic function of (pop, n, seed). `seed` may be an
    int or a sequence of ints (a derived seed path).
    """
    if n < 1:
        raise ValueError("need at least one period")
    chol = np.linalg.cholesky(pop.sigma)
    parts = seed if isinstance(seed, (tuple, list)) else (seed,)
    z = rng_from(*parts).standard_normal((n, pop.n_assets))
    return ReturnsMatrix(pop.mu + z @ chol.T)


def equicorrelated_population(
    m: int,
    *,
    rho: float = 0.95,
    vol: float = 0.05,
    means: tuple = (0.010, 0.008, 0.006),
    r_bar: float = 1.0,
) -> PopulationSpec:
    """Highly correlated market: common correlation `rho`, equal volatility.

    Only the first len(means) assets carry a risk premium; the rest are
    priced at zero, which makes their optimal positions small hedges that
    are hard to estimate in finite samples.
    """
    if m > 1 and not -1.0 / (m - 1) < rho < 1.0:
        raise ValueError("rho outside the positive-definite range")
    if len(means) > m:
        raise ValueError("more nonzero means than assets")
    sigma = vol**2 * ((1.0 - rho) * np.eye(m) + rho * np.ones((m, m)))
    if m == 1:
        sigma = np.array([[vol**2]])
    mu = np.zeros(m)
    mu[: len(means)] = means
    return PopulationSpec(mu=mu, sigma=sigma, r_bar=r_bar)


def decaying_population(
    m: int,
    *,
    n_strong: int = 3,
    mean_level: float = 0.055,
    vol: float = 0.05,
    decay: float = 0.75,
    floor: float = 0.02,
    seed: int = 7,
    r_bar: float = 1.0,
) -> PopulationSpec:
    """Market-like covariance with geometrically decaying eigenvalues and a
    sparse risk premium.

    The spectrum falls as decay^i down to a floor fraction of the leading
    eigenvalue, scaled so the average asset variance is vol^2. The leading
    eigenvector is an unpriced market direction; the second carries the
    whole premium and is localized on the first `n_strong` assets (a
    mildly staggered mean of scale `mean_level`), so the optimal portfolio
    concentrates there. Remaining eigenvectors are seeded random noise
    directions.
    """
    if not 1 <= n_strong <= m:
        raise ValueError("n_strong must be in 1..m")
    mu = np.zeros(m)
    mu[:n_strong] = mean_level * (1.0 - 0.15 * np.arange(n_strong) / max(1, n_strong - 1))
    if m == 1:
        return PopulationSpec(mu=mu, sigma=np.array([[vol**2]]), r_bar=r_bar)
    rng = rng_from(seed)
    priced = mu / np.linalg.norm(mu)
    market = np.ones(m) - (np.ones(m) @ priced) * priced
    market /= np.linalg.norm(market)
    basis = np.column_stack([market, priced, rng.standard_normal((m, m - 2))])
    q, _ = np.linalg.qr(basis)
    eigs = np.maximum(decay ** np.arange(m), floor)
    eigs *= m * vol**2 / eigs.sum()
    sigma = (q * eigs) @ q.T
    sigma = (sigma + sigma.T) / 2.0
    return PopulationSpec(mu=mu, sigma=sigma, r_bar=r_bar)
