"""Population-level quantities: optimal weights, generalisation error,
estimation risk and its bias/variance split, and the ridge dominance bound."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from .core import PopulationSpec, WeightVector
from .estimators import _gram_target, solve_gram
from .exceptions import DegenerateNormalization, InsufficientSamples, ZeroRiskPortfolio
from .populations import sample_returns
from .validation import freeze_array

#: Portfolio variances at or below this make the Sharpe ratio undefined.
VARIANCE_TOL = 1e-18


def _second_moment(pop: PopulationSpec) -> np.ndarray:
    return pop.sigma + np.outer(pop.mu, pop.mu)


def optimal_weights(pop: PopulationSpec) -> WeightVector:
    """Population-optimal positions (sigma + mu mu')^-1 mu r_bar."""
    return WeightVector(np.linalg.solve(_second_moment(pop), pop.mu) * pop.r_bar)


def tangency_weights(pop: PopulationSpec) -> np.ndarray:
    """Relative weights sigma^-1 mu / (1' sigma^-1 mu); they sum to one."""
    w = np.linalg.solve(pop.sigma, pop.mu)
    total = float(w.sum())
    if abs(total) <= 1e-12:
        raise DegenerateNormalization("1' sigma^-1 mu is numerically zero")
    return w / total


def _theta_of(weights) -> np.ndarray:
    return weights.theta if isinstance(weights, WeightVector) else np.asarray(weights, dtype=float)


def generalisation_error(weights, pop: PopulationSpec) -> float:
    """Expected squared deviation from the ideal return:
    (r_bar - mu' theta)^2 + theta' sigma theta."""
    theta = _theta_of(weights)
    return float((pop.r_bar - pop.mu @ theta) ** 2 + theta @ pop.sigma @ theta)


def minimum_generalisation_error(pop: PopulationSpec) -> float:
    """Error floor attained by the optimal weights: r_bar^2 - theta*' A theta*."""
    theta = optimal_weights(pop).theta
    return float(pop.r_bar**2 - theta @ _second_moment(pop) @ theta)


def population_sharpe(weights, pop: PopulationSpec) -> float:
    """mu' theta / sqrt(theta' sigma theta), evaluated at the true moments."""
    theta = _theta_of(weights)
    variance = float(theta @ pop.sigma @ theta)
    if variance <= VARIANCE_TOL:
        raise ZeroRiskPortfolio("portfolio variance is numerically zero")
    return float(pop.mu @ theta) / math.sqrt(variance)


@dataclass(frozen=True)
class RiskReport:
    """Monte-Carlo estimation risk and its exact bias/variance split."""

    risk: float
    bias_sq: float
    variance: float
    mean_weights: np.ndarray
    weight_cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean_weights", freeze_array(self.mean_weights))
        object.__setattr__(self, "weight_cov", freeze_array(self.weight_cov))


def estimation_risk(weight_samples, pop: PopulationSpec) -> RiskReport:
    """Plug-in estimation risk from repeated weight estimates.

    With sample mean theta_bar and covariance S (1/(K-1) normalization),
    risk = (theta* - theta_bar)' A (theta* - theta_bar) + tr(A S) where
    A = sigma + mu mu'. The two addends are the squared-bias and variance
    components and sum to `risk` exactly.
    """
    thetas = np.asarray([_theta_of(w) for w in weight_samples], dtype=float)
    if thetas.ndim != 2 or thetas.shape[0] < 2:
        raise InsufficientSamples("need at least two weight samples")
    A = _second_moment(pop)
    theta_star = optimal_weights(pop).theta
    mean = thetas.mean(axis=0)
    centered = thetas - mean
    S = centered.T @ centered / (thetas.shape[0] - 1)
    dev = theta_star - mean
    bias_sq = float(dev @ A @ dev)
    variance = float(np.sum(A * S))
    return RiskReport(
        risk=bias_sq + variance,
        bias_sq=bias_sq,
        variance=variance,
        mean_weights=mean,
        weight_cov=S,
    )


def ridge_dominance_bound(pop: PopulationSpec) -> float:
    """Penalty ceiling 2 F* / sum_j theta*_j^2 below which the L2 fit beats
    the plug-in weights in estimation risk (fixed-design argument).

    Returns +inf when the optimal portfolio is identically zero (mu = 0).
    """
    theta = optimal_weights(pop).theta
    ss = float(theta @ theta)
    if ss == 0.0:
        return math.inf
    return 2.0 * minimum_generalisation_error(pop) / ss


def _ridge_path_weights(X, r_bar, lambdas):
    G, b = _gram_target(X, r_bar)
    d, V = np.linalg.eigh(G)
    Vb = V.T @ b
    out = np.empty((len(lambdas), X.shape[1]))
    for i, lam in enumerate(lambdas):
        if lam == 0.0:
            out[i] = solve_gram(G, b)
        else:
            out[i] = V @ (Vb / (d + lam))
    return out


def bias_variance_curve(
    pop: PopulationSpec,
    n: int,
    lambdas,
    n_samples: int,
    seed: int = 0,
    n_jobs: int = 1,
) -> list[RiskReport]:
    """Estimation-risk reports of the fixed-penalty L2 fit along a grid.

    All grid points share the same `n_samples` training draws (seeds are
    derived per replication), so the lambda=0 entry reproduces the plug-in
    estimator's risk on identical data. Replications may run in parallel;
    results are reduced in replication order and do not depend on the
    schedule.
    """
    if n_samples < 2:
        raise InsufficientSamples("need at least two replications")
    lambdas = np.asarray(lambdas, dtype=float)

    def one(rep):
        X = sample_returns(pop, n, (seed, rep)).data
        return _ridge_path_weights(X, pop.r_bar, lambdas)

    if n_jobs == 1:
        stacked = [one(rep) for rep in range(n_samples)]
    else:
        stacked = Parallel(n_jobs=n_jobs)(delayed(one)(rep) for rep in range(n_samples))
    cube = np.stack(stacked)  # (K, L, m)
    return [estimation_risk(cube[:, i, :], pop) for i in range(lambdas.shape[0])]
