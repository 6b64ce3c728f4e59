"""Simulation study over synthetic populations and the rolling-sample backtest.

Replications and rolling windows derive their randomness from
(seed, domain, ...) paths, so results are identical for any execution
order or degree of parallelism.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from .core import PopulationSpec
from .estimators import (
    EmpiricalBayesPortfolio,
    EqualWeightPortfolio,
    LassoPortfolio,
    MinVariancePortfolio,
    NoShortPortfolio,
    OLSPortfolio,
    PrincipalComponentPortfolio,
    RidgePortfolio,
    SpikeSlabPortfolio,
)
from .exceptions import DegenerateSeries, PortfolioError, ZeroRiskPortfolio
from .model_selection import PenaltySearchCV
from .populations import sample_returns
from .risk import estimation_risk, optimal_weights, population_sharpe
from .validation import check_returns, derive_seed, label_key

# seed-path domains, so data draws, strategy fits and backtest windows
# never share a stream
_DOMAIN_DATA = 0
_DOMAIN_STRATEGY = 1
_DOMAIN_WINDOW = 2

CV_KINDS = ("ridge", "lasso", "pcr")
PLAIN_KINDS = ("mv", "equal", "min_variance", "mv_noshort", "empirical_bayes")
ALL_KINDS = CV_KINDS + PLAIN_KINDS + ("spike_slab", "population", "fixed_weights")


@dataclass(frozen=True)
class StrategySpec:
    """One strategy to evaluate: a kind plus its hyperparameter policy.

    policy is "cv" (penalty chosen per fit by cross-validation), "fixed"
    (penalty pinned to `value`) or "none" for strategies without a penalty.
    `options` holds extra keyword arguments for the underlying estimator as
    a tuple of (name, value) pairs.
    """

    kind: str
    policy: str = "none"
    value: float | None = None
    options: tuple = ()

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.kind in CV_KINDS:
            if self.policy not in ("cv", "fixed"):
                raise ValueError(f"{self.kind} needs policy 'cv' or 'fixed'")
            if self.policy == "fixed" and self.value is None:
                raise ValueError(f"{self.kind} with fixed policy needs a value")
        elif self.policy != "none":
            raise ValueError(f"{self.kind} takes no penalty policy")

    @classmethod
    def parse(cls, token: str) -> "StrategySpec":
        """Parse CLI tokens like "ridge", "ridge:0.5" or "pcr:3"."""
        name, _, raw = token.strip().partition(":")
        if raw:
            if name not in CV_KINDS:
                raise ValueError(f"{name!r} does not take a fixed penalty")
            value = int(raw) if name == "pcr" else float(raw)
            return cls(kind=name, policy="fixed", value=value)
        return cls(kind=name, policy="cv" if name in CV_KINDS else "none")

    @property
    def label(self) -> str:
        if self.policy == "fixed":
            return f"{self.kind}:{self.value:g}"
        return self.kind


def _fit_strategy_weights(spec, X, r_bar, cv_k, seed_path, theta_star=None):
    """Weights of one strategy on one panel; raises PortfolioError members."""
    kind = spec.kind
    opts = dict(spec.options)
    if kind == "population":
        if theta_star is None:
            raise ValueError("the population strategy needs a PopulationSpec")
        return np.asarray(theta_star, dtype=float)
    if kind == "fixed_weights":
        return np.asarray(opts["theta"], dtype=float)
    if kind == "mv":
        return OLSPortfolio(r_bar=r_bar).fit(X).weights_
    if kind == "equal":
        return EqualWeightPortfolio(gross=opts.get("gross", 1.0)).fit(X).weights_
    if kind == "min_variance":
        return MinVariancePortfolio().fit(X).weights_
    if kind == "mv_noshort":
        return NoShortPortfolio(r_bar=r_bar).fit(X).weights_
    if kind == "empirical_bayes":
        return EmpiricalBayesPortfolio(r_bar=r_bar).fit(X).weights_
    if kind == "spike_slab":
        est = SpikeSlabPortfolio(r_bar=r_bar, seed=derive_seed(*seed_path), **opts)
        return est.fit(X).weights_
    if spec.policy == "fixed":
        if kind == "ridge":
            est = RidgePortfolio(penalty=spec.value, r_bar=r_bar)
        elif kind == "lasso":
            est = LassoPortfolio(penalty=spec.value, r_bar=r_bar)
        else:
            est = PrincipalComponentPortfolio(n_components=int(spec.value), r_bar=r_bar)
        return est.fit(X).weights_
    search = PenaltySearchCV(kind=kind, r_bar=r_bar, cv=cv_k, seed=derive_seed(*seed_path))
    return search.fit(X).weights_


# ---------------------------------------------------------------------------
# Simulation study
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimulationConfig:
    """Monte-Carlo study: strategies x sample sizes over one population."""

    pop: PopulationSpec
    n_list: tuple
    strategies: tuple
    n_reps: int
    seed: int = 0
    cv_k: int = 5

    def __post_init__(self):
        if self.n_reps < 1:
            raise ValueError("need at least one replication")
        if any(n < 2 for n in self.n_list):
            raise ValueError("sample sizes must be at least 2")
        object.__setattr__(self, "n_list", tuple(int(n) for n in self.n_list))
        object.__setattr__(self, "strategies", tuple(self.strategies))


@dataclass(frozen=True)
class SimulationCell:
    """Aggregates for one (strategy, sample size) cell."""

    sharpe: float | None
    risk: float | None
    bias_sq: float | None
    variance: float | None
    n_ok: int
    n_failed: int
    message: str = ""


@dataclass(frozen=True)
class SimulationResult:
    labels: tuple
    n_list: tuple
    cells: dict
    population_sharpe: float | None
    theta_star: np.ndarray

    def cell(self, label: str, n: int) -> SimulationCell:
        return self.cells[(label, n)]


def _simulate_one(cfg: SimulationConfig, i_n: int, rep: int, theta_star):
    n = cfg.n_list[i_n]
    X = sample_returns(cfg.pop, n, (cfg.seed, _DOMAIN_DATA, i_n, rep)).data
    out = []
    for spec in cfg.strategies:
        path = (cfg.seed, _DOMAIN_STRATEGY, label_key(spec.label), i_n, rep)
        try:
            w = _fit_strategy_weights(
                spec, X, cfg.pop.r_bar, cfg.cv_k, path, theta_star=theta_star
            )
            out.append((True, w))
        except PortfolioError as exc:
            out.append((False, f"{type(exc).__name__}: {exc}"))
    return out


def run_simulation(cfg: SimulationConfig, n_jobs: int = 1) -> SimulationResult:
    """Estimate every strategy on repeated draws and score it out of sample.

    Per cell: the average population Sharpe ratio of the fitted weights
    (replications whose portfolio has numerically zero variance contribute
    a Sharpe of 0) and the Monte-Carlo estimation risk with its bias and
    variance parts. Cells where every replication failed carry None values;
    failures never abort the run.
    """
    theta_star = optimal_weights(cfg.pop).theta
    try:
        pop_sharpe = population_sharpe(theta_star, cfg.pop)
    except ZeroRiskPortfolio:
        pop_sharpe = None

    tasks = [(i_n, rep) for i_n in range(len(cfg.n_list)) for rep in range(cfg.n_reps)]
    if n_jobs == 1:
        raw = [_simulate_one(cfg, i_n, rep, theta_star) for i_n, rep in tasks]
    else:
        raw = Parallel(n_jobs=n_jobs)(
            delayed(_simulate_one)(cfg, i_n, rep, theta_star) for i_n, rep in tasks
        )
    by_cell = dict(zip(tasks, raw))

    cells = {}
    for i_n, n in enumerate(cfg.n_list):
        for s, spec in enumerate(cfg.strategies):
            weights, message = [], ""
            n_failed = 0
            for rep in range(cfg.n_reps):
                ok, payload = by_cell[(i_n, rep)][s]
                if ok:
                    weights.append(payload)
                else:
                    n_failed += 1
                    message = message or payload
            cells[(spec.label, n)] = _aggregate_cell(weights, n_failed, message, cfg.pop)
    return SimulationResult(
        labels=tuple(s.label for s in cfg.strategies),
        n_list=cfg.n_list,
        cells=cells,
        population_sharpe=pop_sharpe,
        theta_star=theta_star,
    )


def _aggregate_cell(weights, n_failed, message, pop) -> SimulationCell:
    if not weights:
        return SimulationCell(None, None, None, None, 0, n_failed, message)
    sharpes = []
    for w in weights:
        try:
            sharpes.append(population_sharpe(w, pop))
        except ZeroRiskPortfolio:
            sharpes.append(0.0)  # zero-investment replications score zero
    if len(weights) >= 2:
        report = estimation_risk(weights, pop)
        risk, bias_sq, variance = report.risk, report.bias_sq, report.variance
    else:
        # single success: no variance is observable, only the bias term
        theta_star = optimal_weights(pop).theta
        A = pop.sigma + np.outer(pop.mu, pop.mu)
        dev = theta_star - weights[0]
        bias_sq = float(dev @ A @ dev)
        risk, variance = bias_sq, 0.0
    return SimulationCell(
        sharpe=float(np.mean(sharpes)),
        risk=risk,
        bias_sq=bias_sq,
        variance=variance,
        n_ok=len(weights),
        n_failed=n_failed,
        message=message,
    )


# ---------------------------------------------------------------------------
# Rolling-sample backtest
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BacktestConfig:
    """Fixed-window re-estimation producing one-step out-of-sample returns."""

    window: int
    strategies: tuple
    cv_k: object = 5  # int, or "loo" for leave-one-out
    seed: int = 0

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("window must be at least 2")
        object.__setattr__(self, "strategies", tuple(self.strategies))


@dataclass(frozen=True)
class BacktestResult:
    labels: tuple
    periods: tuple
    oos_returns: np.ndarray  # (n_strategies, T - window)
    means: tuple
    stds: tuple
    sharpes: tuple  # None where the series is degenerate or the strategy failed
    jk_z: np.ndarray  # nan where either series is unusable; diagonal 0
    jk_p: np.ndarray
    n_window_failures: tuple
    failed: tuple


def _backtest_strategy(spec, X, window, r_bar, cv_k, seed):
    T = X.shape[0]
    series = np.zeros(T - window)
    failures = 0
    for t in range(window, T):
        path = (seed, _DOMAIN_WINDOW, label_key(spec.label), t)
        try:
            w = _fit_strategy_weights(spec, X[t - window : t], r_bar, cv_k, path)
            series[t - window] = X[t] @ w
        except PortfolioError:
            failures += 1  # zero-position window: return stays 0
    return series, failures


def run_backtest(returns, cfg: BacktestConfig, r_bar: float = 1.0, n_jobs: int = 1) -> BacktestResult:
    """Roll a fixed estimation window through the panel, one step at a time.

    For each t past the window, every strategy is re-estimated on the
    previous `window` rows (cross-validation re-runs inside every window)
    and realizes the return x_t' theta_hat. Estimator failures inside a
    window leave that window at a zero position; a strategy only fails
    outright when every window failed.
    """
    from .core import ReturnsMatrix

    X = check_returns(returns)
    T = X.shape[0]
    if not cfg.window < T:
        raise ValueError(f"window ({cfg.window}) must be smaller than the panel length ({T})")
    for spec in cfg.strategies:
        if spec.kind == "population":
            raise ValueError("the population strategy is only available in simulations")

    if n_jobs == 1:
        rows = [
            _backtest_strategy(spec, X, cfg.window, r_bar, cfg.cv_k, cfg.seed)
            for spec in cfg.strategies
        ]
    else:
        rows = Parallel(n_jobs=n_jobs)(
            delayed(_backtest_strategy)(spec, X, cfg.window, r_bar, cfg.cv_k, cfg.seed)
            for spec in cfg.strategies
        )

    n_oos = T - cfg.window
    oos = np.stack([series for series, _ in rows])
    failures = tuple(f for _, f in rows)
    failed = tuple(f == n_oos for f in failures)

    means, stds, sharpes = [], [], []
    for i in range(len(cfg.strategies)):
        if failed[i]:
            means.append(None)
            stds.append(None)
            sharpes.append(None)
            continue
        mu = float(oos[i].mean())
        sd = float(oos[i].std())
        means.append(mu)
        stds.append(sd)
        sharpes.append(mu / sd if sd > 0 else None)

    S = len(cfg.strategies)
    jk_z = np.full((S, S), np.nan)
    jk_p = np.full((S, S), np.nan)
    np.fill_diagonal(jk_z, 0.0)
    np.fill_diagonal(jk_p, 1.0)
    for q in range(S):
        for l in range(q + 1, S):
            if failed[q] or failed[l]:
                continue
            try:
                test = jobson_korkie_test(oos[q], oos[l])
            except DegenerateSeries:
                continue
            jk_z[q, l] = test.z
            jk_z[l, q] = -test.z
            jk_p[q, l] = jk_p[l, q] = test.p_value

    if isinstance(returns, ReturnsMatrix):
        periods = returns.period_index[cfg.window :]
    else:
        periods = tuple(range(cfg.window, T))
    return BacktestResult(
        labels=tuple(s.label for s in cfg.strategies),
        periods=periods,
        oos_returns=oos,
        means=tuple(means),
        stds=tuple(stds),
        sharpes=tuple(sharpes),
        jk_z=jk_z,
        jk_p=jk_p,
        n_window_failures=failures,
        failed=failed,
    )


# ---------------------------------------------------------------------------
# Sharpe-equality test
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SharpeEqualityTest:
    z: float
    p_value: float


def sharpe_ratio(series) -> float:
    """Sample Sharpe ratio mean/std with the 1/T variance normalization."""
    r = np.asarray(series, dtype=float)
    sd = float(r.std())
    if r.shape[0] < 2 or sd <= 0:
        raise DegenerateSeries("need at least two observations with positive variance")
    return float(r.mean()) / sd


def jobson_korkie_test(returns_q, returns_l) -> SharpeEqualityTest:
    """Asymptotic z-test of equal Sharpe ratios between two return series.

    The statistic is (sd_l mean_q - sd_q mean_l) / sqrt(psi) with the
    small-sample-corrected variance
    psi = (1/T) [2 sd_q^2 sd_l^2 - 2 sd_q sd_l cov_ql
          + mean_q^2 sd_l^2 / 2 + mean_l^2 sd_q^2 / 2
          - mean_q mean_l cov_ql^2 / (sd_q sd_l)].
    Moments use the 1/T normalization. Identical inputs give z = 0 exactly.
    """
    q = np.asarray(returns_q, dtype=float)
    l = np.asarray(returns_l, dtype=float)
    if q.shape != l.shape or q.ndim != 1 or q.shape[0] < 3:
        raise DegenerateSeries("need two equal-length series with at least 3 observations")
    T = q.shape[0]
    mq, ml = float(q.mean()), float(l.mean())
    sq, sl = float(q.std()), float(l.std())
    if sq <= 0 or sl <= 0:
        raise DegenerateSeries("both series need positive variance")
    sql = float(((q - mq) * (l - ml)).mean())
    numerator = sl * mq - sq * ml
    if numerator == 0.0:
        return SharpeEqualityTest(z=0.0, p_value=1.0)
    psi = (
        2.0 * sq**2 * sl**2
        - 2.0 * sq * sl * sql
        + 0.5 * mq**2 * sl**2
        + 0.5 * ml**2 * sq**2
        - (mq * ml / (sq * sl)) * sql**2
    ) / T
    if psi <= 0:
        raise DegenerateSeries(f"nonpositive variance estimate psi={psi:.3e}")
    z = numerator / math.sqrt(psi)
    return SharpeEqualityTest(z=z, p_value=math.erfc(abs(z) / math.sqrt(2.0)))
