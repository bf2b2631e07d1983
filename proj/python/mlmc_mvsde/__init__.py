"""Particle Euler-Maruyama and multilevel Monte Carlo for small-noise McKean-Vlasov SDEs."""

from ._core import (
    ConfigError,
    DivergenceError,
    DomainError,
    Error,
    Model,
    NumericError,
    ShapeError,
    __version__,
    builtin_model,
    builtin_model_names,
    coupled_variance_study,
    loglog_fit,
    mlmc_estimate,
    moment_w2,
    ode_limit,
    optimal_allocation,
    run,
    simulate_path,
    strong_error_curve,
    validate,
    wasserstein2,
)

__all__ = [name for name in dir() if not name.startswith("_")] + ["__version__"]
