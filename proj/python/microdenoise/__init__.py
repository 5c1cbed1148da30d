"""Python bindings for the microdenoise library."""

from ._core import (
    METHODS,
    apply_poisson,
    denoise,
    denoise_tiled,
    kde_pdf,
    mae,
    mse,
    phantom,
    sample_dose,
    scaled_loss,
    ssim,
)

__all__ = [
    "METHODS",
    "apply_poisson",
    "denoise",
    "denoise_tiled",
    "kde_pdf",
    "mae",
    "mse",
    "phantom",
    "sample_dose",
    "scaled_loss",
    "ssim",
]
