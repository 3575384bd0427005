"""Latent flow-field forecasting of longitudinal images."""

from ._imageflow import (
    ConfigError,
    Error,
    IoError,
    ShapeError,
    cubic_spline_extrapolate,
    dice,
    evaluate,
    fit_pca,
    hausdorff,
    linear_extrapolate,
    mae,
    mse,
    predict,
    psnr,
    read_png,
    read_tensor_archive,
    resolve_config,
    ssim,
    synth,
    train,
    write_png,
)

__all__ = [
    "ConfigError",
    "Error",
    "IoError",
    "ShapeError",
    "cubic_spline_extrapolate",
    "dice",
    "evaluate",
    "fit_pca",
    "hausdorff",
    "linear_extrapolate",
    "mae",
    "mse",
    "predict",
    "psnr",
    "read_png",
    "read_tensor_archive",
    "resolve_config",
    "ssim",
    "synth",
    "train",
    "write_png",
]
