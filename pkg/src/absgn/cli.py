"""Command-line front end: train, enhance, eval, ablate, bench, synth.

Exit codes: 0 success, 2 usage error, 1 runtime failure.
"""

import argparse
import csv
import dataclasses
import json
import logging
import statistics
import sys
import time
from pathlib import Path

import torch

from .checkpoint import CheckpointError, load_checkpoint
from .data import DatasetError, load_paired_dataset, read_image, synthetic_dataset, write_dataset, write_image
from .metrics import MetricReport
from .network import VARIANTS, build, count_params, enhance, make_variant, normalize_variant
from .trainer import TrainConfig, evaluate, train

log = logging.getLogger("absgn")

PUBLISHED_RUNTIME_MS = 14.0
PUBLISHED_PARAMS = "33M"


def parse_size(text: str) -> tuple[int, int]:
    """'WxH' -> (height, width)."""
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid size {text!r}; expected WxH, e.g. 600x400") from None
    if w < 8 or h < 8:
        raise argparse.ArgumentTypeError(f"size {text!r} too small; both sides must be >= 8")
    return h, w


def parse_variants(text: str) -> list[str]:
    try:
        return [normalize_variant(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _load_config(path) -> TrainConfig:
    return TrainConfig.from_json(path) if path else TrainConfig()


def _eval_split(data_dir):
    ds = load_paired_dataset(data_dir, "eval")
    return ds if len(ds) else None


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    train_ds = load_paired_dataset(args.data_dir, "train")
    if not len(train_ds):
        raise DatasetError(f"no training pairs found under {args.data_dir}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    model = build(cfg.network, seed=cfg.seed)
    train(model, train_ds, cfg, eval_dataset=_eval_split(args.data_dir), out_dir=out)
    print(f"wrote {out / 'model.absg'} and {out / 'history.jsonl'}")
    return 0


def cmd_enhance(args) -> int:
    model = load_checkpoint(args.ckpt)
    image = read_image(args.input).unsqueeze(0)
    out = enhance(model, image)[0]
    write_image(args.output, out)
    print(f"wrote {args.output} ({out.shape[2]}x{out.shape[1]})")
    return 0


def _write_report(report: MetricReport, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_json() + "\n")
    path.with_suffix(".txt").write_text(report.to_text())


def cmd_eval(args) -> int:
    model = load_checkpoint(args.ckpt)
    ds = load_paired_dataset(args.data_dir, args.split)
    if not len(ds):
        raise DatasetError(f"no {args.split} pairs found under {args.data_dir}")
    report = evaluate(model, ds)
    _write_report(report, args.report)
    print(report.to_text(), end="")
    return 0


def ablation_table(rows: list[dict]) -> str:
    head = f"{'variant':<8}  {'PSNR(dB)':>9}  {'SSIM':>7}  {'params':>9}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r['variant']:<8}  {r['psnr']:9.3f}  {r['ssim']:7.4f}  {r['params']:9d}")
    return "\n".join(lines) + "\n"


def cmd_ablate(args) -> int:
    base = _load_config(args.config)
    train_ds = load_paired_dataset(args.data_dir, "train")
    if not len(train_ds):
        raise DatasetError(f"no training pairs found under {args.data_dir}")
    eval_ds = _eval_split(args.data_dir) or train_ds
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    for variant in args.variants:
        cfg = dataclasses.replace(base, network=make_variant(base.network, variant))
        model = build(cfg.network, seed=cfg.seed)
        train(model, train_ds, cfg, out_dir=out / variant)
        report = evaluate(model, eval_ds)
        _write_report(report, out / variant / "report.json")
        rows.append(
            {
                "variant": variant,
                "psnr": report.mean("psnr"),
                "ssim": report.mean("ssim"),
                "params": count_params(model),
            }
        )
        log.info("variant %s: %.3f dB / %.4f", variant, rows[-1]["psnr"], rows[-1]["ssim"])

    (out / "ablation.json").write_text(json.dumps(rows, indent=2) + "\n")
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["variant", "psnr", "ssim", "params"])
        writer.writeheader()
        writer.writerows(rows)
    table = ablation_table(rows)
    (out / "ablation.txt").write_text(table)
    print(table, end="")
    return 0


def timing_stats(samples_ms: list[float]) -> dict:
    return {
        "runs": len(samples_ms),
        "mean_ms": statistics.fmean(samples_ms),
        "median_ms": statistics.median(samples_ms),
        "min_ms": min(samples_ms),
        "max_ms": max(samples_ms),
    }


@torch.no_grad()
def cmd_bench(args) -> int:
    model = load_checkpoint(args.ckpt)
    h, w = args.size
    gen = torch.Generator().manual_seed(0)
    image = torch.rand(1, 3, h, w, generator=gen)
    for _ in range(args.warmup):
        enhance(model, image)
    samples = []
    for _ in range(args.runs):
        start = time.perf_counter()
        enhance(model, image)
        samples.append((time.perf_counter() - start) * 1000.0)

    record = {
        "size": f"{w}x{h}",
        "threads": torch.get_num_threads(),
        "params": count_params(model),
        "samples_ms": samples,
        **timing_stats(samples),
        "published_reference": {"ms": PUBLISHED_RUNTIME_MS, "params": PUBLISHED_PARAMS},
    }
    report = Path(args.report)
    report.parent.mkdir(parents=True, exist_ok=True)
    report.write_text(json.dumps(record, indent=2) + "\n")
    # one scatter point per model: x = runtime, y = SSIM (blank unless supplied)
    with open(report.with_suffix(".csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "time_ms", "ssim", "params"])
        writer.writerow(["absgn", f"{record['median_ms']:.4f}", "" if args.ssim is None else args.ssim,
                         record["params"]])
    if args.plot:
        _plot_scatter(record["median_ms"], args.ssim, report.with_suffix(".png"))
    print(
        f"{record['size']}: mean {record['mean_ms']:.2f} ms, median {record['median_ms']:.2f} ms, "
        f"min {record['min_ms']:.2f} ms over {args.runs} runs; {record['params']} parameters"
    )
    return 0


def _plot_scatter(ms, ssim, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4, 3))
    ax.scatter([ms], [ssim if ssim is not None else 0.0], label="absgn")
    ax.set_xlabel("runtime (ms)")
    ax.set_ylabel("SSIM")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def cmd_synth(args) -> int:
    for split, n, offset in (("train", args.count, 0), ("eval", args.eval_count, 1)):
        if n:
            ds = synthetic_dataset(n, size=args.size, seed=args.seed * 2 + offset, split=split)
            write_dataset(ds, args.out, split)
    print(f"wrote synthetic pairs under {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="absgn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network on a paired dataset")
    p.add_argument("--config", help="TrainConfig JSON (defaults to the full recipe)")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", help="PSNR/SSIM/UQI report over a split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--split", default="eval")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and evaluate network variants")
    p.add_argument("--config")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--variants", type=parse_variants, default=list(VARIANTS))
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("bench", help="time inference")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--size", type=parse_size, default=(400, 600), help="WxH (default 600x400)")
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--report", default="bench.json")
    p.add_argument("--ssim", type=float, help="SSIM to place on the runtime/SSIM scatter")
    p.add_argument("--plot", action="store_true", help="also render the scatter as PNG")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="write a synthetic paired dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--eval-count", type=int, default=2)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "runs", 1) < 1:
        parser.error("--runs must be >= 1")
    try:
        return args.func(args)
    except (CheckpointError, DatasetError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
