"""Desk-scale experiment: procedural clean images -> SHDD -> train -> evaluate.

    python3 scripts/desk_run.py --out runs/desk [--iters 500] [--base-lr 2e-3] [--lr-drops 200 350]

Prints the loss ratio (last 100 / first 100 iterations) and the restored vs
distorted-input PSNR on the held-out images.
"""
import argparse
import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from mepsnet.metrics import evaluate_dataset
from mepsnet.model import DESK_DEFAULT, MepsNet, init_parameters
from mepsnet.rng import Rng
from mepsnet.samples import write_clean_set
from mepsnet.shdd import generate_dataset
from mepsnet.train import DESK_TRAIN, load_pairs, model_restorer, train


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/desk")
    p.add_argument("--level", default="moderate")
    p.add_argument("--iters", type=int, default=DESK_TRAIN.iters)
    p.add_argument("--base-lr", type=float, default=DESK_TRAIN.base_lr)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr-drops", type=int, nargs="*",
                   help="drop iterations; default scales 200/350 to --iters; give none for a constant lr")
    args = p.parse_args()

    out = Path(args.out)
    write_clean_set(out / "clean_train", 8, 96, seed=1, prefix="tr")
    write_clean_set(out / "clean_test", 4, 96, seed=2, prefix="te")
    data = out / "shdd"
    if not data.exists():
        generate_dataset(data, args.level, 7, {"train": out / "clean_train", "test": out / "clean_test"})

    drops = args.lr_drops
    if drops is None:
        # keep the drop points proportional when the run length changes
        drops = [int(d * args.iters / DESK_TRAIN.iters) for d in DESK_TRAIN.lr_drops]
    cfg = replace(DESK_TRAIN, iters=args.iters, base_lr=args.base_lr, seed=args.seed, lr_drops=tuple(drops))
    model = MepsNet(DESK_DEFAULT)
    init_parameters(model, Rng(cfg.seed))
    result = train(model, load_pairs(data, "train"), cfg, out / "run")
    report = evaluate_dataset(model_restorer(model), data, "test")
    report.save(out / "run" / "eval.json")

    n = min(100, len(result.losses))
    summary = {
        "iters": cfg.iters, "base_lr": cfg.base_lr, "lr_drops": list(cfg.lr_drops),
        "loss_ratio": float(np.mean(result.losses[-n:]) / np.mean(result.losses[:n])) if n else None,
        "psnr": report.mean_psnr, "baseline_psnr": report.baseline_psnr,
        "ssim": report.mean_ssim, "baseline_ssim": report.baseline_ssim,
    }
    print(json.dumps(summary, indent=1))


if __name__ == "__main__":
    main()
