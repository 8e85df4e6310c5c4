"""Residual-PRB forecasting with a multi-embedding transformer."""

from ._rupformer import (
    FEATURE_NAMES,
    NUM_FEATURES,
    Forecaster,
    Hyperparams,
    RupfError,
    abs_err_std,
    calendar_indices,
    cli,
    generate,
    hit_probability,
    load_csv,
    mae,
    param_count,
    pinball_loss,
    render_plot_svg,
    residual_ratio,
)

__all__ = [
    "FEATURE_NAMES",
    "NUM_FEATURES",
    "Forecaster",
    "Hyperparams",
    "RupfError",
    "abs_err_std",
    "calendar_indices",
    "cli",
    "generate",
    "hit_probability",
    "load_csv",
    "mae",
    "param_count",
    "pinball_loss",
    "render_plot_svg",
    "residual_ratio",
]
