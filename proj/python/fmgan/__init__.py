"""Feature-mover's distance text GAN: OT solvers, FMD and the command line."""

from ._core import (
    ConfigError,
    DimensionError,
    Error,
    InputError,
    NumericError,
    ParameterError,
    bleu,
    config_defaults,
    cosine_cost,
    exact_emd,
    fmd,
    fmd_grad,
    ipot,
    marginal_residual,
    run,
    self_bleu,
    sinkhorn,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "Error",
    "InputError",
    "NumericError",
    "ParameterError",
    "bleu",
    "config_defaults",
    "cosine_cost",
    "exact_emd",
    "fmd",
    "fmd_grad",
    "ipot",
    "marginal_residual",
    "run",
    "self_bleu",
    "sinkhorn",
]
