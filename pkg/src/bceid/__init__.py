"""Sharp identification and inference for auctions via Bayes-correlated-equilibrium LPs."""

__version__ = "0.1.0"

from .model import (DomainError, MetricFn, SupportGrid, UtilityKernel, FIRST_PRICE,
                    SECOND_PRICE, constant_metric, revenue_metric, welfare_metric)
from .lp import FEAS_TOL, SolverError, minimax_value, solve
from .sharp import (BidDistribution, IdentifiedSet, build_bce_cv, counterfactual_bounds,
                    membership_cv, moment_bounds_cv)
from .parametric import Family, ThetaGrid, density, parametric_identified_set
from .inference import BidSample, empirical_distribution, hoeffding_tolerances
from .montecarlo import generate_bce, sample_bids

__all__ = [
    "DomainError", "MetricFn", "SupportGrid", "UtilityKernel", "FIRST_PRICE", "SECOND_PRICE",
    "constant_metric", "revenue_metric", "welfare_metric", "FEAS_TOL", "SolverError",
    "minimax_value", "solve", "BidDistribution", "IdentifiedSet", "build_bce_cv",
    "counterfactual_bounds", "membership_cv", "moment_bounds_cv", "Family", "ThetaGrid",
    "density", "parametric_identified_set", "BidSample", "empirical_distribution",
    "hoeffding_tolerances", "generate_bce", "sample_bids",
]
