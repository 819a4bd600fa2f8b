"""ABSGN topology, ablation variants and the finite-difference gradient checker."""

import dataclasses
import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import (
    DCR,
    GSA,
    MGDB,
    GSAConfig,
    MGDBConfig,
    SpatialAttention,
    conv1x1,
    conv_prelu,
    kaiming_init_,
)
from .wavelet import dwt2, idwt2

VARIANTS = ("full", "spa", "gia", "dcr", "no_dc")
LEVELS = 3
MULTIPLE = 2**LEVELS


def normalize_variant(name: str) -> str:
    key = name.strip().lower().replace("-", "_")
    if key not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; expected one of {', '.join(VARIANTS)}")
    return key


@dataclass(frozen=True)
class NetworkConfig:
    base_channels: int = 32
    levels: int = LEVELS
    # MGDB count per level, coarse to fine: level 2, level 1, level 0
    mgdb_per_level: tuple[int, int, int] = (1, 2, 2)
    variant: str = "full"
    gsa_shrink_ratio: float = 0.5
    mgdb_dilations: tuple[int, ...] = (4, 2, 1)
    mgdb_growth_ratio: float = 0.5
    attention_reduction: int = 8

    def __post_init__(self):
        object.__setattr__(self, "variant", normalize_variant(self.variant))
        object.__setattr__(self, "mgdb_per_level", tuple(int(n) for n in self.mgdb_per_level))
        object.__setattr__(self, "mgdb_dilations", tuple(int(d) for d in self.mgdb_dilations))
        if self.levels != LEVELS:
            raise ValueError(f"levels is fixed at {LEVELS}, got {self.levels}")
        if self.base_channels < 4 or self.base_channels % 4:
            raise ValueError(f"base_channels must be a positive multiple of 4, got {self.base_channels}")
        if self.base_channels % self.attention_reduction:
            raise ValueError(
                f"base_channels {self.base_channels} not divisible by attention_reduction "
                f"{self.attention_reduction}"
            )
        if len(self.mgdb_per_level) != 3:
            raise ValueError("mgdb_per_level needs three entries (level 2, level 1, level 0)")
        if self.mgdb_per_level[0] < 1 or self.mgdb_per_level[1] < 1:
            raise ValueError("middle levels need at least one MGDB")
        if self.mgdb_per_level[2] != 2:
            raise ValueError("the full-resolution level is a dense pair of exactly two MGDBs")
        if not 0 < self.gsa_shrink_ratio <= 1:
            raise ValueError(f"gsa_shrink_ratio must lie in (0, 1], got {self.gsa_shrink_ratio}")
        if not 0 < self.mgdb_growth_ratio:
            raise ValueError("mgdb_growth_ratio must be positive")
        # validates the dilation list
        self.mgdb_config(self.base_channels)

    @property
    def channels(self) -> tuple[int, int, int, int]:
        c = self.base_channels
        return (c, 2 * c, 4 * c, 8 * c)

    def mgdb_config(self, channels: int) -> MGDBConfig:
        dilations = self.mgdb_dilations
        if self.variant == "no_dc":
            dilations = (1,) * len(dilations)
        return MGDBConfig(
            channels,
            growth=max(1, int(round(channels * self.mgdb_growth_ratio))),
            dilations=dilations,
            reduction=self.attention_reduction,
        )

    def gsa_config(self, channels: int) -> GSAConfig:
        return GSAConfig(channels, max(1, int(round(channels * self.gsa_shrink_ratio))))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["mgdb_per_level"] = list(self.mgdb_per_level)
        d["mgdb_dilations"] = list(self.mgdb_dilations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown NetworkConfig keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def make_variant(cfg: NetworkConfig, variant: str) -> NetworkConfig:
    return dataclasses.replace(cfg, variant=normalize_variant(variant))


class ABSGN(nn.Module):
    """Top-down self-guided wavelet network.

    Encoder: conv+PReLU stem, then three DWT + conv+PReLU downsamplings
    (C -> 2C -> 4C -> 8C). The coarsest level runs GSA and the single
    batch-norm layer. Each decoder level upsamples with IDWT + conv+PReLU,
    merges with the encoder skip through a 1x1 conv and refines with MGDBs;
    full resolution uses a densely connected MGDB pair before the head.
    """

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        c0, c1, c2, c3 = cfg.channels
        n2, n1, _ = cfg.mgdb_per_level

        self.stem = conv_prelu(3, c0)
        self.down1 = conv_prelu(4 * c0, c1)
        self.down2 = conv_prelu(4 * c1, c2)
        self.down3 = conv_prelu(4 * c2, c3)

        if cfg.variant == "spa":
            self.gsa = SpatialAttention()
        else:
            self.gsa = GSA(cfg.gsa_config(c3), use_spa=cfg.variant != "gia")
        self.norm = nn.BatchNorm2d(c3)

        self.up3 = conv_prelu(c3 // 4, c2)
        self.merge2 = conv1x1(2 * c2, c2)
        self.mgdb2 = nn.Sequential(*(self._dense_block(c2) for _ in range(n2)))

        self.up2 = conv_prelu(c2 // 4, c1)
        self.merge1 = conv1x1(2 * c1, c1)
        self.mgdb1 = nn.Sequential(*(self._dense_block(c1) for _ in range(n1)))

        self.up1 = conv_prelu(c1 // 4, c0)
        self.merge0 = conv1x1(2 * c0, c0)
        self.mgdb0a = self._dense_block(c0)
        self.link0 = conv1x1(2 * c0, c0)
        self.mgdb0b = self._dense_block(c0)
        self.fuse0 = conv1x1(3 * c0, c0)

        self.head = nn.Sequential(conv_prelu(c0, c0), conv_prelu(c0, 3, has_prelu=False))

    def _dense_block(self, channels):
        mcfg = self.cfg.mgdb_config(channels)
        return DCR(mcfg) if self.cfg.variant == "dcr" else MGDB(mcfg)

    def forward(self, x):
        """Raw head output; spatial size must already be a multiple of 8."""
        f0 = self.stem(x)
        e1 = self.down1(dwt2(f0))
        e2 = self.down2(dwt2(e1))
        e3 = self.down3(dwt2(e2))

        g3 = self.norm(self.gsa(e3))

        d2 = self.mgdb2(self.merge2(torch.cat([e2, self.up3(idwt2(g3))], dim=1)))
        d1 = self.mgdb1(self.merge1(torch.cat([e1, self.up2(idwt2(d2))], dim=1)))

        m0 = self.merge0(torch.cat([f0, self.up1(idwt2(d1))], dim=1))
        x1 = self.mgdb0a(m0)
        x2 = self.mgdb0b(self.link0(torch.cat([m0, x1], dim=1)))
        y = self.fuse0(torch.cat([m0, x1, x2], dim=1))
        return self.head(y)


def build(cfg: NetworkConfig, seed: int = 0) -> ABSGN:
    model = ABSGN(cfg)
    gen = torch.Generator().manual_seed(int(seed))
    kaiming_init_(model, generator=gen)
    return model


def pad_to_multiple(x: torch.Tensor, multiple: int = MULTIPLE) -> tuple[torch.Tensor, tuple[int, int]]:
    h, w = x.shape[-2:]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph or pw:
        x = F.pad(x, (0, pw, 0, ph), mode="reflect")
    return x, (h, w)


def run_padded(model: nn.Module, image: torch.Tensor) -> torch.Tensor:
    """Reflection-pad to a multiple of 8, run the model, crop back. No clamping."""
    if image.dim() != 4 or image.shape[1] != 3:
        raise ValueError(f"expected an image batch [B, 3, H, W], got {tuple(image.shape)}")
    h, w = image.shape[-2:]
    if h < MULTIPLE or w < MULTIPLE:
        raise ValueError(f"images must be at least {MULTIPLE}x{MULTIPLE}, got {h}x{w}")
    if not torch.isfinite(image).all():
        raise ValueError("input image contains non-finite values")
    padded, _ = pad_to_multiple(image)
    return model(padded)[..., :h, :w]


@torch.no_grad()
def enhance(model: nn.Module, image: torch.Tensor) -> torch.Tensor:
    """Inference entry point: eval mode, pad-and-crop, output clamped to [0, 1]."""
    was_training = model.training
    model.eval()
    try:
        dtype = next(model.parameters()).dtype
        out = run_padded(model, image.to(dtype))
    finally:
        model.train(was_training)
    return out.clamp(0.0, 1.0)


def count_params(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


class _KinkMonitor:
    """Records which side of zero every rectifier input lies on during a forward pass."""

    def __init__(self, module: nn.Module):
        self.pattern: list[torch.Tensor] = []
        self.handles = [
            m.register_forward_hook(self._hook)
            for m in module.modules()
            if isinstance(m, (nn.PReLU, nn.ReLU))
        ]

    def _hook(self, module, inputs, output):
        self.pattern.append(inputs[0] > 0)

    def take(self) -> list[torch.Tensor]:
        pattern, self.pattern = self.pattern, []
        return pattern

    def close(self):
        for h in self.handles:
            h.remove()


def _same_pattern(a, b) -> bool:
    return len(a) == len(b) and all(torch.equal(x, y) for x, y in zip(a, b))


def _central_difference(flat, idx, eps, objective, shrink_steps=3):
    orig = flat[idx].item()
    try:
        for k in range(shrink_steps + 1):
            h = eps * 10.0**-k
            flat[idx] = orig + h
            plus, kinks_plus = objective()
            flat[idx] = orig - h
            minus, kinks_minus = objective()
            if _same_pattern(kinks_plus, kinks_minus):
                return (plus.item() - minus.item()) / (2 * h)
    finally:
        flat[idx] = orig
    return None


def finite_difference_check(
    model_or_fn: nn.Module | Callable,
    inputs: torch.Tensor | Sequence[torch.Tensor],
    eps: float = 1e-4,
    samples_per_tensor: int = 6,
    seed: int = 0,
    check_inputs: bool = True,
    details: list | None = None,
) -> float:
    """Max relative error between autograd and central differences.

    Runs in float64. The scalar objective is the output contracted with a
    fixed random weighting (a plain sum gives identically zero gradients
    through normalization layers). Random entries of every parameter, and
    of the first input, are perturbed by +-eps; the error of one entry is
    |analytic - numeric| / (|numeric| + 1e-12).

    An entry whose +-eps perturbation flips the sign of any PReLU/ReLU
    input straddles a kink, where the central difference is not a
    derivative estimate. Such an entry is retried with the step shrunk
    tenfold, down to eps * 1e-3; if it still straddles a kink it is
    skipped and another drawn. A tensor with no usable entry raises
    RuntimeError.
    """
    if isinstance(inputs, torch.Tensor):
        inputs = (inputs,)
    inputs = [t.detach().to(torch.float64).clone() for t in inputs]
    rng = np.random.default_rng(seed)

    if isinstance(model_or_fn, nn.Module):
        fn = model_or_fn.to(torch.float64)
        fn.eval()
        params = [(n, p) for n, p in fn.named_parameters() if p.requires_grad]
    else:
        fn = model_or_fn
        params = []
    monitor = _KinkMonitor(fn) if isinstance(fn, nn.Module) else None

    probe = inputs[0].requires_grad_(check_inputs)
    with torch.no_grad():
        out0 = fn(*inputs)
    weights = torch.from_numpy(rng.standard_normal(tuple(out0.shape))).to(torch.float64)

    def objective():
        value = (fn(*inputs) * weights).sum()
        return value, (monitor.take() if monitor else [])

    if isinstance(fn, nn.Module):
        fn.zero_grad(set_to_none=True)
    objective()[0].backward()

    targets = [(n, p, p.grad) for n, p in params]
    if check_inputs:
        targets.append(("input", probe, probe.grad))

    worst = 0.0
    try:
        with torch.no_grad():
            for name, tensor, grad in targets:
                if grad is None:
                    grad = torch.zeros_like(tensor)
                flat, gflat = tensor.view(-1), grad.reshape(-1)
                wanted = min(samples_per_tensor, flat.numel())
                checked = 0
                for idx in rng.permutation(flat.numel()):
                    numeric = _central_difference(flat, int(idx), eps, objective)
                    if numeric is None:
                        continue
                    analytic = gflat[idx].item()
                    err = abs(analytic - numeric) / (abs(numeric) + 1e-12)
                    if details is not None:
                        details.append((name, int(idx), analytic, numeric, err))
                    worst = max(worst, err)
                    checked += 1
                    if checked == wanted:
                        break
                if checked == 0:
                    raise RuntimeError(f"{name}: every entry straddles a kink at eps={eps}")
    finally:
        if monitor:
            monitor.close()
        probe.requires_grad_(False)
    return worst
