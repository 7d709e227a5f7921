"""Multinomial lattice prices for American options in the multidimensional Merton model."""

from .convergence import ConvergenceReport, fit_rate, richardson, run_study
from .lattice import (
    LatticeSpec,
    StateKey,
    XiTable,
    build_lattice,
    build_xi,
    discretize_jumps,
    prepare_jumps,
    state_price,
)
from .model import DiscreteLaw, MertonModel, Payoff, SamplerLaw, lipschitz_probe, make_model, payoff_eval, validate_model
from .montecarlo import (
    MCConfig,
    MCEstimate,
    black_scholes,
    lsmc_american,
    mc_european,
    poisson_mixture_european,
    simulate_grid_paths,
    simulate_terminal,
)
from .pricer import PricingResult, enumerate_stopping_oracle, price_american, price_european

__version__ = "0.1.0"
