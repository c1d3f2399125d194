"""Python bindings for the cazsl library."""

from ._cazsl import (
    ConfigError,
    DataError,
    Error,
    NumericError,
    cholesky,
    gradcheck,
    load_push_dataset,
    rbf_kernel_matrix,
    rmse,
    rmse_to_mm,
    run_experiment,
    sample_gp_trajectory,
    simulate_gp_dataset,
    variants,
    write_synthetic_push_dataset,
)

__all__ = [
    "ConfigError",
    "DataError",
    "Error",
    "NumericError",
    "cholesky",
    "gradcheck",
    "load_push_dataset",
    "rbf_kernel_matrix",
    "rmse",
    "rmse_to_mm",
    "run_experiment",
    "sample_gp_trajectory",
    "simulate_gp_dataset",
    "variants",
    "write_synthetic_push_dataset",
]
