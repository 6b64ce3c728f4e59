"""Exception hierarchy for portfolio estimation failures."""


class PortfolioError(Exception):
    """Base class for all portlearn errors."""


class DegenerateMoments(PortfolioError):
    """Sample gram/covariance matrix is singular or ill-conditioned."""


class DegenerateNormalization(PortfolioError):
    """Absolute positions sum to (numerically) zero; relative weights undefined."""


class NonConvergence(PortfolioError):
    """Iterative solver hit its iteration cap before the stated tolerance."""


class RankDeficient(PortfolioError):
    """Fewer strictly positive eigenvalues than requested components."""


class SingularSubmodel(PortfolioError):
    """A visited asset-inclusion submodel has a singular gram matrix."""


class SingularPopulation(PortfolioError):
    """Population covariance matrix is not positive definite."""


class ZeroRiskPortfolio(PortfolioError):
    """Portfolio variance is numerically zero; Sharpe ratio undefined."""


class InsufficientSamples(PortfolioError):
    """Too few weight samples for the requested statistic."""


class InvalidFoldCount(PortfolioError):
    """Fold count outside 2..n."""


class AllInfeasible(PortfolioError):
    """Every grid point of a cross-validation run was infeasible."""


class DegenerateSeries(PortfolioError):
    """Return series too short or with zero variance for the Sharpe test."""


class ParseError(PortfolioError):
    """Malformed CSV input. Carries 1-based row/column coordinates when known."""

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = ""
        if row is not None:
            where = f" (row {row}" + (f", column {column})" if column is not None else ")")
        super().__init__(message + where)


class MissingValue(ParseError):
    """Empty or NA cell in the input panel; values are never imputed."""


class DuplicateAssetLabel(ParseError):
    """Repeated asset name in the CSV header."""
