"""Full-reference quality metrics (PSNR, SSIM, UQI) and the evaluation report."""

import json
import statistics
from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F

from .loss import DEFAULT, LossConfig, ssim_loss

PSNR_CAP = 100.0
UQI_EPS = 1e-12


def _pair64(a, b):
    a, b = torch.as_tensor(a), torch.as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.dim() == 3:
        a, b = a.unsqueeze(0), b.unsqueeze(0)
    return a.detach().to(torch.float64), b.detach().to(torch.float64)


def psnr(a, b, peak: float = 1.0) -> float:
    """PSNR in dB; identical inputs return PSNR_CAP instead of infinity."""
    a, b = _pair64(a, b)
    mse = torch.mean((a - b) ** 2).item()
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * torch.log10(torch.tensor(peak**2 / mse, dtype=torch.float64)).item())


def ssim_metric(a, b, cfg: LossConfig = DEFAULT) -> float:
    a, b = _pair64(a, b)
    return 1.0 - ssim_loss(a, b, cfg).item()


def uqi_map(a: torch.Tensor, b: torch.Tensor, window: int = 8) -> torch.Tensor:
    """Universal quality index over every valid window x window block (uniform weights).

    Windows with no variance in either image fall back to the mean-only
    term 2*mx*my / (mx^2 + my^2); windows that are zero everywhere score 1.
    """
    h, w = a.shape[-2:]
    if h < window or w < window:
        raise ValueError(f"images must be at least {window}x{window} for UQI, got {h}x{w}")

    def mean(t):
        return F.avg_pool2d(t, window, stride=1)

    mx, my = mean(a), mean(b)
    vx = mean(a * a) - mx * mx
    vy = mean(b * b) - my * my
    cov = mean(a * b) - mx * my

    var_sum = vx + vy
    mean_sq = mx * mx + my * my
    q = torch.ones_like(mx)
    flat = (var_sum.abs() < UQI_EPS) & (mean_sq >= UQI_EPS)
    q = torch.where(flat, 2 * mx * my / mean_sq.clamp_min(UQI_EPS), q)
    regular = (var_sum.abs() >= UQI_EPS) & (mean_sq >= UQI_EPS)
    q = torch.where(regular, 4 * cov * mx * my / (var_sum * mean_sq).clamp_min(UQI_EPS**2), q)
    return q


def uqi(a, b, window: int = 8) -> float:
    a, b = _pair64(a, b)
    return uqi_map(a, b, window).mean().item()


@dataclass
class MetricRow:
    name: str
    psnr: float
    ssim: float
    uqi: float
    ms: float


@dataclass
class MetricReport:
    rows: list[MetricRow] = field(default_factory=list)

    def add(self, row: MetricRow) -> None:
        self.rows.append(row)

    def mean(self, key: str) -> float:
        if not self.rows:
            return float("nan")
        return sum(getattr(r, key) for r in self.rows) / len(self.rows)

    def timing(self) -> dict:
        ms = [r.ms for r in self.rows]
        if not ms:
            return {}
        return {
            "mean_ms": sum(ms) / len(ms),
            "median_ms": statistics.median(ms),
            "min_ms": min(ms),
            "max_ms": max(ms),
            "total_ms": sum(ms),
        }

    def aggregates(self) -> dict:
        return {
            "count": len(self.rows),
            "psnr": self.mean("psnr"),
            "ssim": self.mean("ssim"),
            "uqi": self.mean("uqi"),
            **self.timing(),
        }

    def to_dict(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows], "aggregate": self.aggregates()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls([MetricRow(**r) for r in d["rows"]])

    def to_text(self) -> str:
        width = max([len("name"), len("mean")] + [len(r.name) for r in self.rows])
        head = f"{'name':<{width}}  {'PSNR(dB)':>9}  {'SSIM':>7}  {'UQI':>7}  {'ms':>9}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            lines.append(f"{r.name:<{width}}  {r.psnr:9.3f}  {r.ssim:7.4f}  {r.uqi:7.4f}  {r.ms:9.2f}")
        lines.append("-" * len(head))
        lines.append(
            f"{'mean':<{width}}  {self.mean('psnr'):9.3f}  {self.mean('ssim'):7.4f}  "
            f"{self.mean('uqi'):7.4f}  {self.mean('ms'):9.2f}"
        )
        return "\n".join(lines) + "\n"
