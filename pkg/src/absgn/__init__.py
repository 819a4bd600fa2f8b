"""Wavelet-based self-guided low-light enhancement network (ABSGN) with training and evaluation tools."""

from .checkpoint import load_checkpoint, save_checkpoint
from .loss import LossConfig, l1_loss, ssim_loss, total_loss
from .metrics import MetricReport, psnr, ssim_metric, uqi
from .network import ABSGN, NetworkConfig, build, count_params, enhance, finite_difference_check, make_variant
from .wavelet import dwt2, idwt2

__version__ = "0.1.0"

__all__ = [
    "ABSGN",
    "LossConfig",
    "MetricReport",
    "NetworkConfig",
    "build",
    "count_params",
    "dwt2",
    "enhance",
    "finite_difference_check",
    "idwt2",
    "l1_loss",
    "load_checkpoint",
    "make_variant",
    "psnr",
    "save_checkpoint",
    "ssim_loss",
    "ssim_metric",
    "total_loss",
    "uqi",
]
