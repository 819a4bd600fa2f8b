"""Paired low/normal-light data: folder loading, crops, augmentation, synthetic pairs.

Images are float32 torch tensors shaped [3, H, W] with values in [0, 1].
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}
# LOL ships its splits under these names
SPLIT_ALIASES = {"train": ("train", "our485"), "eval": ("eval", "eval15", "test")}


class DatasetError(ValueError):
    pass


def read_image(path) -> torch.Tensor:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot read image {path}: {exc}") from exc
    return torch.from_numpy(arr.astype(np.float32) / 255.0).permute(2, 0, 1).contiguous()


def to_uint8(img: torch.Tensor) -> np.ndarray:
    """[3, H, W] in [0, 1] -> HxWx3 uint8 (clamped, rounded)."""
    arr = img.detach().to(torch.float64).clamp(0, 1).mul(255).round().to(torch.uint8)
    return arr.permute(1, 2, 0).cpu().numpy()


def write_image(path, img: torch.Tensor) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img)).save(path)
    return path


@dataclass(frozen=True)
class PairRecord:
    name: str
    low_path: Path | None = None
    high_path: Path | None = None


@dataclass
class PairedDataset:
    root: Path | None
    split: str
    records: list[PairRecord] = field(default_factory=list)
    # in-memory pairs (synthetic data) keyed by record name
    cache: dict[str, tuple[torch.Tensor, torch.Tensor]] = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.records)

    def names(self) -> list[str]:
        return [r.name for r in self.records]

    def __getitem__(self, i) -> tuple[torch.Tensor, torch.Tensor]:
        rec = self.records[i]
        if rec.name in self.cache:
            return self.cache[rec.name]
        low, high = read_image(rec.low_path), read_image(rec.high_path)
        if low.shape != high.shape:
            raise DatasetError(
                f"{rec.name}: low {tuple(low.shape[1:])} and high {tuple(high.shape[1:])} differ in size"
            )
        return low, high

    @classmethod
    def from_tensors(cls, names, lows, highs, split="train") -> "PairedDataset":
        records, cache = [], {}
        for name, low, high in sorted(zip(names, lows, highs), key=lambda t: t[0]):
            if low.shape != high.shape:
                raise DatasetError(f"{name}: paired images differ in shape")
            records.append(PairRecord(name))
            cache[name] = (low, high)
        return cls(None, split, records, cache)


def _split_dir(root: Path, split: str) -> Path | None:
    for name in SPLIT_ALIASES.get(split, (split,)):
        if (root / name).is_dir():
            return root / name
    return None


def load_paired_dataset(root, split: str = "train") -> PairedDataset:
    """Index ``root/<split>/low`` against ``root/<split>/high`` by filename.

    ``root`` may also point straight at a directory holding ``low/`` and
    ``high/``. A directory with no images gives an empty dataset.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    base = _split_dir(root, split)
    if base is None:
        base = root
    low_dir, high_dir = base / "low", base / "high"
    if not low_dir.is_dir():
        return PairedDataset(root, split)

    records = []
    for low in sorted(p for p in low_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES):
        high = high_dir / low.name
        if not high.is_file():
            raise DatasetError(f"missing pair: no reference image for {low.name} in {high_dir}")
        records.append(PairRecord(low.name, low, high))
    return PairedDataset(root, split, records)


def random_crop_pair(low, ref, size: int = 256, seed=None):
    """Cut the same size x size window out of both images."""
    if low.shape != ref.shape:
        raise DatasetError(f"shape mismatch: {tuple(low.shape)} vs {tuple(ref.shape)}")
    h, w = low.shape[-2:]
    if h < size or w < size:
        raise DatasetError(f"image {h}x{w} is smaller than the {size}x{size} crop")
    rng = np.random.default_rng(seed)
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    window = (..., slice(top, top + size), slice(left, left + size))
    return low[window], ref[window]


@dataclass(frozen=True)
class Transform:
    hflip: bool
    vflip: bool
    rot90: int

    @classmethod
    def sample(cls, seed=None) -> "Transform":
        rng = np.random.default_rng(seed)
        return cls(bool(rng.random() < 0.5), bool(rng.random() < 0.5), int(rng.integers(0, 4)))

    def __call__(self, img: torch.Tensor) -> torch.Tensor:
        if self.hflip:
            img = img.flip(-1)
        if self.vflip:
            img = img.flip(-2)
        if self.rot90:
            img = torch.rot90(img, self.rot90, dims=(-2, -1))
        return img.contiguous()


def augment_pair(low, ref, seed=None):
    """Apply one sampled flip/rotation to both images."""
    if low.shape != ref.shape:
        raise DatasetError(f"shape mismatch: {tuple(low.shape)} vs {tuple(ref.shape)}")
    t = Transform.sample(seed)
    return t(low), t(ref)


@dataclass(frozen=True)
class SynthParams:
    gamma: float = 2.0
    brightness: float = 0.3
    noise_sigma: float = 0.02
    seed: int = 0

    def validate(self) -> None:
        """Enforce the generator's nominal ranges (identity settings are allowed via direct use)."""
        if not 2.0 <= self.gamma <= 5.0:
            raise ValueError(f"gamma {self.gamma} outside [2, 5]")
        if not 0.1 <= self.brightness <= 0.5:
            raise ValueError(f"brightness {self.brightness} outside [0.1, 0.5]")
        if not 0.01 <= self.noise_sigma <= 0.05:
            raise ValueError(f"noise_sigma {self.noise_sigma} outside [0.01, 0.05]")

    @classmethod
    def sample(cls, seed: int) -> "SynthParams":
        rng = np.random.default_rng(seed)
        return cls(
            gamma=float(rng.uniform(2.0, 5.0)),
            brightness=float(rng.uniform(0.1, 0.5)),
            noise_sigma=float(rng.uniform(0.01, 0.05)),
            seed=seed,
        )


def synthesize_lowlight(clean: torch.Tensor, p: SynthParams) -> torch.Tensor:
    """clip(clean**gamma * brightness + N(0, sigma^2), 0, 1) with seeded noise."""
    gen = torch.Generator().manual_seed(int(p.seed))
    noise = torch.randn(clean.shape, generator=gen, dtype=torch.float64) * p.noise_sigma
    low = clean.to(torch.float64).clamp(0, 1) ** p.gamma * p.brightness + noise
    return low.clamp(0, 1).to(clean.dtype)


def synthetic_scene(size: int, seed: int, height: int | None = None) -> torch.Tensor:
    """Smooth colour scene: tinted gradients plus a few soft blobs, in [0, 1]."""
    rng = np.random.default_rng(seed)
    h, w = height or size, size
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    img = np.empty((3, h, w))
    for c in range(3):
        a, b, base = rng.uniform(-0.4, 0.4, size=3)
        img[c] = 0.5 + base * 0.5 + a * (xx - 0.5) + b * (yy - 0.5)
    for _ in range(3):
        cy, cx = rng.uniform(0.15, 0.85, size=2)
        r = rng.uniform(0.08, 0.25)
        amp = rng.uniform(-0.35, 0.35, size=3)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r**2))
        img += amp[:, None, None] * blob
    return torch.from_numpy(np.clip(img, 0.05, 0.95).astype(np.float32))


def synthetic_dataset(n: int, size: int = 64, seed: int = 0, params: SynthParams | None = None,
                      split: str = "train") -> PairedDataset:
    """n in-memory (low, clean) pairs; per-pair degradation drawn from the nominal ranges."""
    names, lows, highs = [], [], []
    for i in range(n):
        clean = synthetic_scene(size, seed * 1000 + i)
        p = params if params is not None else SynthParams.sample(seed * 1000 + i)
        if params is not None:
            p = SynthParams(p.gamma, p.brightness, p.noise_sigma, seed=p.seed * 1000 + i)
        names.append(f"synth_{i:04d}.png")
        lows.append(synthesize_lowlight(clean, p))
        highs.append(clean)
    return PairedDataset.from_tensors(names, lows, highs, split=split)


def write_dataset(ds: PairedDataset, root, split: str = "train") -> Path:
    """Write a dataset as 8-bit PNGs under root/<split>/{low,high}."""
    base = Path(root) / split
    for i, rec in enumerate(ds.records):
        low, high = ds[i]
        write_image(base / "low" / rec.name, low)
        write_image(base / "high" / rec.name, high)
    return base
