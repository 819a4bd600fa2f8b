"""Training objective: gamma * (1 - SSIM) + (1 - gamma) * L1."""

from dataclasses import dataclass
from functools import lru_cache

import torch
import torch.nn.functional as F


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 0.16
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError(f"window must be a positive odd size, got {self.window}")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2


DEFAULT = LossConfig()


@lru_cache(maxsize=8)
def _gaussian_1d(size: int, sigma: float) -> torch.Tensor:
    x = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def gaussian_window(size: int = 11, sigma: float = 1.5) -> torch.Tensor:
    """Separable 2-D Gaussian, float64, sums to one."""
    g = _gaussian_1d(size, sigma)
    return torch.outer(g, g)


def _check_pair(pred, target):
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")


def l1_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    _check_pair(pred, target)
    return (pred - target).abs().mean()


def ssim_map(pred: torch.Tensor, target: torch.Tensor, cfg: LossConfig = DEFAULT) -> torch.Tensor:
    """Per-channel SSIM over every valid (unpadded) Gaussian window position."""
    _check_pair(pred, target)
    if pred.dim() != 4:
        raise ValueError(f"expected [B, C, H, W], got {tuple(pred.shape)}")
    h, w = pred.shape[-2:]
    if h < cfg.window or w < cfg.window:
        raise ValueError(f"images must be at least {cfg.window}x{cfg.window} for SSIM, got {h}x{w}")

    ch = pred.shape[1]
    win = gaussian_window(cfg.window, cfg.sigma).to(pred.dtype)
    win = win.expand(ch, 1, cfg.window, cfg.window)

    def blur(t):
        return F.conv2d(t, win, groups=ch)

    mu_x, mu_y = blur(pred), blur(target)
    mu_xx, mu_yy, mu_xy = mu_x * mu_x, mu_y * mu_y, mu_x * mu_y
    var_x = blur(pred * pred) - mu_xx
    var_y = blur(target * target) - mu_yy
    cov = blur(pred * target) - mu_xy

    num = (2 * mu_xy + cfg.c1) * (2 * cov + cfg.c2)
    den = (mu_xx + mu_yy + cfg.c1) * (var_x + var_y + cfg.c2)
    return num / den


def ssim_loss(pred: torch.Tensor, target: torch.Tensor, cfg: LossConfig = DEFAULT) -> torch.Tensor:
    return 1 - ssim_map(pred, target, cfg).mean()


def loss_terms(pred, target, cfg: LossConfig = DEFAULT):
    """(total, l1, ssim_loss) as tensors; total keeps the graph for backprop."""
    l1 = l1_loss(pred, target)
    s = ssim_loss(pred, target, cfg)
    return cfg.gamma * s + (1 - cfg.gamma) * l1, l1, s


def total_loss(pred: torch.Tensor, target: torch.Tensor, cfg: LossConfig = DEFAULT) -> torch.Tensor:
    return loss_terms(pred, target, cfg)[0]
