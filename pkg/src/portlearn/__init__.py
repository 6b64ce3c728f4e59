"""portlearn: penalized-regression estimation of mean-variance portfolios.

Asset positions are learned by regressing a constant ideal return on excess
returns; penalties trade bias against sampling variance, and cross-validated
penalty selection targets the out-of-sample error directly. The package adds
Monte-Carlo estimation-risk measurement on synthetic populations and a
rolling-sample backtest with a Sharpe-equality test.
"""

__version__ = "0.1.0"

from .core import (
    PopulationSpec,
    ReturnsMatrix,
    SampleMoments,
    WeightVector,
    compute_moments,
    relative_weights,
)
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
    SpikeSlabPosterior,
    lasso_kkt_residual,
    lasso_penalty_ceiling,
    spike_slab_conditional,
)
from .experiments import (
    BacktestConfig,
    BacktestResult,
    SharpeEqualityTest,
    SimulationConfig,
    SimulationResult,
    StrategySpec,
    jobson_korkie_test,
    run_backtest,
    run_simulation,
    sharpe_ratio,
)
from .model_selection import (
    CvCurve,
    FoldPlan,
    PenaltySearchCV,
    cross_validate,
    default_penalty_grid,
    make_folds,
)
from .populations import decaying_population, equicorrelated_population, sample_returns
from .risk import (
    RiskReport,
    bias_variance_curve,
    estimation_risk,
    generalisation_error,
    minimum_generalisation_error,
    optimal_weights,
    population_sharpe,
    ridge_dominance_bound,
    tangency_weights,
)

__all__ = [name for name in dir() if not name.startswith("_")]
