"""Conditional flow matching for microscopy image restoration.

Images are 2-D float32 numpy arrays. See the README for the CLI and config.
"""

from ._core import (
    ArchConfig,
    ConfigError,
    DegenerateFitError,
    DegradationSpec,
    IoError,
    Model,
    NumericalError,
    degrade,
    euler_integrate,
    fit_calibration,
    fm_loss,
    gen_structure,
    interpolate,
    make_dataset,
    ms_ssim,
    parameter_count,
    plan_tiles,
    posterior_sample,
    predict,
    psnr,
    rmse,
    run,
    ssim,
    tiled_apply,
    train,
)

__version__ = "0.1.0"
