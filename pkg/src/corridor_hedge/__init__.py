"""Variance-optimal single-rebalance hedging of a perpetual American put."""

from .boundary import BoundarySolution, boundary_curves, solve_boundaries, value
from .errors import (AssumptionViolated, ConfigError, DivergentIntegral, DomainError, NoBracket, NumericalError,
                     VerificationFailed)
from .halfline import halfline_payoff, payoff_infinite, solve_boundary_infinite, superhedge_plan
from .holding import dV_dh, gamma_hat, optimal_initial_holding
from .market import Corridor, MarketParams, characteristic_roots, put_delta, put_price
from .payoff import classify_case, payoff_model, sign_function, stopping_payoff

__version__ = "0.1.0"
