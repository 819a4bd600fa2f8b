"""Training loop: piecewise-constant LR, Adam, seeded batching, checkpoints, evaluation."""

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn as nn

from .checkpoint import save_checkpoint
from .data import PairedDataset, SynthParams, augment_pair, random_crop_pair, synthetic_dataset
from .loss import LossConfig, loss_terms
from .metrics import MetricReport, MetricRow, psnr, ssim_metric, uqi
from .network import NetworkConfig, build, enhance, run_padded

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 300
    lr_boundaries: tuple[int, ...] = (200, 250, 300)
    lr_rates: tuple[float, ...] = (1e-4, 5e-5, 1e-5)
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 5
    crop: int = 256
    augment: bool = True
    seed: int = 0
    gamma: float = 0.16
    eval_every: int = 1
    checkpoint_every: int = 50
    network: NetworkConfig = field(default_factory=NetworkConfig)

    def __post_init__(self):
        if isinstance(self.network, dict):
            self.network = NetworkConfig.from_dict(self.network)
        self.lr_boundaries = tuple(int(b) for b in self.lr_boundaries)
        self.lr_rates = tuple(float(r) for r in self.lr_rates)
        if len(self.lr_boundaries) != len(self.lr_rates) or not self.lr_rates:
            raise ValueError("lr_boundaries and lr_rates must be non-empty and the same length")
        if any(a >= b for a, b in zip(self.lr_boundaries, self.lr_boundaries[1:])):
            raise ValueError(f"lr_boundaries must increase, got {self.lr_boundaries}")
        if any(r <= 0 for r in self.lr_rates) or any(
            a <= b for a, b in zip(self.lr_rates, self.lr_rates[1:])
        ):
            raise ValueError(f"lr_rates must be positive and decreasing, got {self.lr_rates}")
        if self.lr_boundaries[-1] < self.epochs:
            raise ValueError("last lr boundary must cover every epoch")
        if self.epochs < 1 or self.batch_size < 1 or self.crop < 1:
            raise ValueError("epochs, batch_size and crop must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lr_boundaries"] = list(self.lr_boundaries)
        d["lr_rates"] = list(self.lr_rates)
        d["network"] = self.network.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @property
    def loss(self) -> LossConfig:
        return LossConfig(gamma=self.gamma)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    for boundary, rate in zip(cfg.lr_boundaries, cfg.lr_rates):
        if epoch < boundary:
            return rate
    raise AssertionError("unreachable: boundaries cover all epochs")


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)


@torch.no_grad()
def adam_step(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor], state: AdamState,
              rate: float, beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """In-place bias-corrected Adam update of ``params``; returns the advanced state."""
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {tuple(g.shape)} != {tuple(params[name].shape)}")
        if not torch.isfinite(g).all():
            bad = (~torch.isfinite(g)).sum().item()
            raise FloatingPointError(f"{name}: {bad} non-finite gradient entries")

    state.step += 1
    bc1 = 1 - beta1**state.step
    bc2 = 1 - beta2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = torch.zeros_like(p)
        m = state.m.setdefault(name, torch.zeros_like(p))
        v = state.v.setdefault(name, torch.zeros_like(p))
        m.mul_(beta1).add_(g, alpha=1 - beta1)
        v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
        p.sub_(rate * (m / bc1) / ((v / bc2).sqrt() + eps))
    return state


def batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Seeded per-epoch shuffle; the final short batch is kept."""
    order = np.random.default_rng([seed, epoch]).permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _sample(dataset: PairedDataset, idx: int, cfg: TrainConfig, rng: np.random.Generator):
    low, high = dataset[idx]
    low, high = random_crop_pair(low, high, cfg.crop, seed=int(rng.integers(2**32)))
    if cfg.augment:
        low, high = augment_pair(low, high, seed=int(rng.integers(2**32)))
    return low, high


def evaluate(model: nn.Module | Callable, dataset: PairedDataset) -> MetricReport:
    """Per-image PSNR/SSIM/UQI of full (uncropped) images; rows in filename order."""
    report = MetricReport()
    infer = (lambda x: enhance(model, x)) if isinstance(model, nn.Module) else model
    order = sorted(range(len(dataset)), key=lambda i: dataset.records[i].name)
    for i in order:
        low, high = dataset[i]
        start = time.perf_counter()
        out = infer(low.unsqueeze(0)).clamp(0, 1)
        ms = (time.perf_counter() - start) * 1000.0
        ref = high.unsqueeze(0)
        report.add(
            MetricRow(dataset.records[i].name, psnr(out, ref), ssim_metric(out, ref), uqi(out, ref), ms)
        )
    return report


def train_psnr(model: nn.Module, dataset: PairedDataset) -> float:
    """Mean PSNR of the model's clamped output over a dataset."""
    return float(np.mean([r.psnr for r in evaluate(model, dataset).rows]))


def train(model: nn.Module, dataset: PairedDataset, cfg: TrainConfig, eval_dataset: PairedDataset | None = None,
          out_dir=None, history_path=None, step_callback: Callable[[int, float], None] | None = None):
    """Run the epoch loop; returns (model, history).

    ``history`` holds one dict per epoch. When ``out_dir`` is set, periodic
    and final checkpoints plus ``history.jsonl`` are written there.
    """
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    torch.manual_seed(cfg.seed)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        history_path = history_path or out_dir / "history.jsonl"
    if history_path is not None:
        Path(history_path).write_text("")

    params = {n: p for n, p in model.named_parameters() if p.requires_grad}
    state = AdamState()
    rng = np.random.default_rng([cfg.seed, 1])
    loss_cfg = cfg.loss
    history = []
    global_step = 0

    for epoch in range(cfg.epochs):
        rate = lr_at(epoch, cfg)
        model.train()
        sums = np.zeros(3)
        steps = 0
        for batch in batches(len(dataset), cfg.batch_size, cfg.seed, epoch):
            pairs = [_sample(dataset, int(i), cfg, rng) for i in batch]
            low = torch.stack([p[0] for p in pairs])
            high = torch.stack([p[1] for p in pairs])

            model.zero_grad(set_to_none=True)
            pred = run_padded(model, low)
            total, l1, s = loss_terms(pred, high, loss_cfg)
            if not torch.isfinite(total):
                _dump_divergence(model, out_dir, epoch, global_step, total, l1, s)
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {global_step}")
            total.backward()
            grads = {n: p.grad for n, p in params.items() if p.grad is not None}
            try:
                adam_step(params, grads, state, rate, cfg.beta1, cfg.beta2, cfg.eps)
            except FloatingPointError as exc:
                _dump_divergence(model, out_dir, epoch, global_step, total, l1, s)
                raise TrainingDiverged(f"epoch {epoch}, step {global_step}: {exc}") from exc

            sums += (total.item(), l1.item(), s.item())
            steps += 1
            global_step += 1
            if step_callback is not None:
                step_callback(global_step, total.item())

        record = {
            "epoch": epoch,
            "lr": rate,
            "steps": steps,
            "loss": sums[0] / steps,
            "l1": sums[1] / steps,
            "ssim_loss": sums[2] / steps,
        }
        last = epoch == cfg.epochs - 1
        if eval_dataset is not None and len(eval_dataset) and ((epoch + 1) % cfg.eval_every == 0 or last):
            report = evaluate(model, eval_dataset)
            record["eval_psnr"] = report.mean("psnr")
            record["eval_ssim"] = report.mean("ssim")
        history.append(record)
        log.info("epoch %d lr %.2e loss %.5f", epoch, rate, record["loss"])
        if history_path is not None:
            with open(history_path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        if out_dir is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0 and not last:
            save_checkpoint(model, out_dir / "checkpoints" / f"epoch_{epoch + 1:04d}.absg")

    if out_dir is not None:
        save_checkpoint(model, out_dir / "model.absg")
    model.eval()
    return model, history


def _dump_divergence(model, out_dir, epoch, step, total, l1, s):
    if out_dir is None:
        return
    save_checkpoint(model, out_dir / "diverged.absg")
    diag = {
        "epoch": epoch,
        "step": step,
        "loss": total.item(),
        "l1": l1.item(),
        "ssim_loss": s.item(),
        "nonfinite_params": [n for n, p in model.named_parameters() if not torch.isfinite(p).all()],
    }
    (out_dir / "diverged.json").write_text(json.dumps(diag, indent=2, default=str))
    log.error("training diverged at epoch %d step %d; state dumped to %s", epoch, step, out_dir)


def toy_config(**overrides) -> TrainConfig:
    """Desk-scale recipe: base width 8, full-batch steps at a constant 1e-4."""
    base = dict(
        epochs=500,
        lr_boundaries=(500,),
        lr_rates=(1e-4,),
        batch_size=4,
        crop=64,
        augment=False,
        eval_every=500,
        checkpoint_every=0,
        network=NetworkConfig(base_channels=8),
    )
    base.update(overrides)
    return TrainConfig(**base)


TOY_DEGRADATION = SynthParams(gamma=2.0, brightness=0.5, noise_sigma=0.01)


def toy_run(cfg: TrainConfig | None = None, n_pairs: int = 4, size: int = 64, data_seed: int = 0, **kw):
    """Overfit a fresh toy network on a few mildly degraded synthetic pairs."""
    cfg = cfg or toy_config()
    ds = synthetic_dataset(n_pairs, size=size, seed=data_seed, params=TOY_DEGRADATION)
    model = build(cfg.network, seed=cfg.seed)
    model, history = train(model, ds, cfg, **kw)
    return model, history, ds

