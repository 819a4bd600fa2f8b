"""Single-level orthonormal 2-D Haar transform.

Subbands are grouped by band, not interleaved per channel: for a C-channel
input the output holds C channels of LL, then C of LH, C of HL, C of HH.
"""

import torch


def _check_finite(x: torch.Tensor) -> None:
    if not torch.isfinite(x).all():
        raise ValueError("wavelet input contains non-finite values")


def dwt2(x: torch.Tensor) -> torch.Tensor:
    """[B, C, H, W] -> [B, 4C, H/2, W/2] Haar analysis on 2x2 blocks."""
    if x.dim() != 4:
        raise ValueError(f"expected a 4-D tensor, got shape {tuple(x.shape)}")
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ValueError(f"dwt2 needs even height and width, got {h}x{w}")
    _check_finite(x)

    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    ll = (a + b + c + d) / 2
    lh = (a + b - c - d) / 2
    hl = (a - b + c - d) / 2
    hh = (a - b - c + d) / 2
    return torch.cat([ll, lh, hl, hh], dim=1)


def idwt2(s: torch.Tensor) -> torch.Tensor:
    """[B, 4C, H, W] -> [B, C, 2H, 2W]; exact inverse (and adjoint) of dwt2."""
    if s.dim() != 4:
        raise ValueError(f"expected a 4-D tensor, got shape {tuple(s.shape)}")
    if s.shape[1] % 4:
        raise ValueError(f"idwt2 needs a channel count divisible by 4, got {s.shape[1]}")

    ll, lh, hl, hh = torch.chunk(s, 4, dim=1)
    a = (ll + lh + hl + hh) / 2
    b = (ll + lh - hl - hh) / 2
    c = (ll - lh + hl - hh) / 2
    d = (ll - lh - hl + hh) / 2

    n, ch, h, w = ll.shape
    # (B, C, H, 2, W, 2) -> (B, C, 2H, 2W)
    top = torch.stack([a, b], dim=-1)
    bottom = torch.stack([c, d], dim=-1)
    out = torch.stack([top, bottom], dim=3)
    return out.reshape(n, ch, 2 * h, 2 * w)
