"""Defaultable-bond term structures under multi-factor jump noise.

Simulates forward-curve families with credit-rating migration, synthesizes
the no-arbitrage drifts for the standard recovery conventions, and verifies
the martingale property of discounted prices statistically.
"""

__version__ = "0.1.0"

from .curves import (DriftSurface, ForwardSurface, TimeGrid,
                     VolatilitySurface)
from .levy_core import (IncrementPath, LevyDomainError, LevyModel,
                        ModelInvariantError, laplace_exponent,
                        laplace_exponent_gradient, laplace_tail,
                        simulate_increments)
from .migration import (SpreadCouplingError, IntensityMatrixProcess,
                        RatingPath, compensated_martingales, couple_default_intensities,
                        hazard_from_distribution, kolmogorov_forward,
                        simulate_chain)
from .pricing import (DefaultableBondPath, RecoveryScheme, SchemeTag,
                      ex_dividend_price, price_path, short_spread_limit,
                      update_loss_process)

__all__ = [
    "DriftSurface", "ForwardSurface", "TimeGrid", "VolatilitySurface",
    "IncrementPath", "LevyDomainError", "LevyModel", "ModelInvariantError",
    "laplace_exponent", "laplace_exponent_gradient", "laplace_tail",
    "simulate_increments",
    "SpreadCouplingError", "IntensityMatrixProcess", "RatingPath",
    "compensated_martingales", "couple_default_intensities", "hazard_from_distribution",
    "kolmogorov_forward", "simulate_chain",
    "DefaultableBondPath", "RecoveryScheme", "SchemeTag",
    "ex_dividend_price", "price_path", "short_spread_limit",
    "update_loss_process",
    "__version__",
]
