"""Synthetic control estimation from large donor pools."""

from ._core import (
    SynthctlError,
    __version__,
    aa_st_pass,
    ab_st_pass,
    bias,
    estimate,
    hard_threshold_rank,
    lasso_fit,
    relative_error,
    ridge_fit,
    set_threads,
    simulate,
)

__all__ = [
    "SynthctlError",
    "__version__",
    "aa_st_pass",
    "ab_st_pass",
    "bias",
    "estimate",
    "hard_threshold_rank",
    "lasso_fit",
    "relative_error",
    "ridge_fit",
    "set_threads",
    "simulate",
]
