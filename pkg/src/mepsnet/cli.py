"""Command-line entry point: ``mepsnet {generate,train,eval,restore,inspect}``.

Experiment configs are JSON files with ``model`` and ``train`` sections
(see ``configs/``). ``--set section.key=value`` overrides a single field;
values are parsed as JSON when possible. The effective config is echoed to
``<out>/config.json``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import load_model
from .model import DESK_DEFAULT, MepsNet, MepsNetConfig, count_for, dump_expert_features, init_parameters
from .rng import Rng
from .train import DESK_TRAIN, TrainConfig, load_pairs, load_training_state, model_restorer, train

log = logging.getLogger("mepsnet")


# ---------------------------------------------------------------- config

def default_config() -> dict:
    return {"model": DESK_DEFAULT.to_dict(), "train": DESK_TRAIN.to_dict()}


def load_config(path: str | None, overrides: list[str] = (), seed: int | None = None) -> dict:
    cfg = default_config()
    if path:
        loaded = json.loads(Path(path).read_text(encoding="utf-8"))
        for section in ("model", "train"):
            cfg[section].update(loaded.get(section, {}))
    for item in overrides:
        key, sep, raw = item.partition("=")
        section, dot, field = key.partition(".")
        if not sep or not dot or section not in cfg:
            raise ValueError(f"bad override {item!r}; expected section.key=value with section in {sorted(cfg)}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        cfg[section][field] = value
    if seed is not None:
        cfg["train"]["seed"] = seed
    # validate both sections eagerly
    MepsNetConfig.from_dict(cfg["model"])
    TrainConfig.from_dict(cfg["train"])
    return cfg


def echo_config(cfg: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- commands

def cmd_generate(args) -> int:
    from .shdd import generate_dataset

    splits = {"train": args.clean}
    if args.val_clean:
        splits["val"] = args.val_clean
    if args.test_clean:
        splits["test"] = args.test_clean
    variants = {"train": args.variants} if args.variants else None
    report = generate_dataset(Path(args.out), args.level, args.seed, {k: Path(v) for k, v in splits.items()},
                              variants=variants, threads=args.threads)
    print(json.dumps({"counts": report.counts, "warnings": report.warnings,
                      "manifest_sha256": report.manifest_sha256}))
    return 0


def cmd_train(args) -> int:
    out = Path(args.out)
    cfg = load_config(args.config, args.set, args.seed)
    tcfg = TrainConfig.from_dict(cfg["train"])
    if args.resume:
        model, state, start = load_training_state(Path(args.resume))
    else:
        model = MepsNet(MepsNetConfig.from_dict(cfg["model"]))
        init_parameters(model, Rng(tcfg.seed))
        state, start = None, 0
    echo_config(cfg, out)
    result = train(model, load_pairs(Path(args.data), "train"), tcfg, out, state=state, start_iter=start)
    if result.losses:
        print(f"trained {len(result.losses)} iterations; last loss {result.losses[-1]:.6g}")
    print(f"checkpoint: {result.final_checkpoint}")
    return 0


def cmd_eval(args) -> int:
    from .metrics import evaluate_dataset

    if args.identity:
        restore = lambda img: img  # noqa: E731
    else:
        model, _ = load_model(Path(args.checkpoint))
        restore = model_restorer(model)
    report = evaluate_dataset(restore, Path(args.data), args.split, threads=args.threads)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        report.save(Path(args.out))
    print(f"{args.split}: n={report.n} psnr={report.mean_psnr:.4f} ssim={report.mean_ssim:.4f} "
          f"(input psnr={report.baseline_psnr:.4f} ssim={report.baseline_ssim:.4f}) skipped={report.skipped}")
    return 0


def cmd_restore(args) -> int:
    from .shdd import load_rgb, save_png

    model, _ = load_model(Path(args.checkpoint))
    restore = model_restorer(model)
    src = Path(args.input)
    files = sorted(src.glob("*.png")) if src.is_dir() else [src]
    if not files:
        raise FileNotFoundError(f"no PNG images at {src}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for f in files:
        save_png(restore(load_rgb(f)), out / f.name)
    print(f"restored {len(files)} image(s) into {out}")
    return 0


def cmd_inspect(args) -> int:
    if args.what == "grad-check":
        from .audit import grad_check
        from .model import DESK_TINY

        rows = grad_check(DESK_TINY, seed=args.seed, size=args.size)
        worst = max(r.rel_err for r in rows)
        for r in rows:
            print(f"{r.name:40s} n={r.size:5d} rel_err={r.rel_err:.3e} max_abs={r.max_abs_err:.3e}")
        ok = worst < args.tol
        print(f"{'PASS' if ok else 'FAIL'} worst rel_err={worst:.3e} (tol {args.tol:g})")
        return 0 if ok else 1

    if args.what == "param-count":
        cfg = MepsNetConfig.from_dict(load_config(args.config, args.set)["model"])
        base = count_for(cfg, n_experts=1)
        rows = [("N=1", base)]
        if cfg.n_experts != 1:
            rows.append((f"N={cfg.n_experts}", count_for(cfg)))
        rows.append(("N=1 no-sharing", count_for(cfg, n_experts=1, shared=False)))
        print(f"{'variant':16s} {'templates':>12s} {'coeffs':>8s} {'unshared':>12s} {'total':>12s} {'vs N=1':>7s}")
        for label, c in rows:
            print(f"{label:16s} {c['shared_templates']:12d} {c['coefficients']:8d} {c['unshared']:12d} "
                  f"{c['total']:12d} {c['total'] / base['total']:7.3f}")
        return 0

    if args.what == "features":
        from .shdd import load_rgb

        model, _ = load_model(Path(args.checkpoint))
        img = load_rgb(Path(args.image)).transpose(2, 0, 1)[None]
        for p in dump_expert_features(model, img, Path(args.out)):
            print(p)
        return 0

    if args.what == "spectrum":
        from .audit import pink_noise_slope

        slope = pink_noise_slope(args.size, args.seed)
        ok = abs(slope + 2.0) <= 0.4
        print(f"{'PASS' if ok else 'FAIL'} radial power slope {slope:.4f} (expected -2.0 +/- 0.4)")
        return 0 if ok else 1
    raise ValueError(f"unknown inspect target {args.what}")


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mepsnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthesize an SHDD dataset")
    g.add_argument("--clean", required=True, help="directory of clean training PNGs")
    g.add_argument("--val-clean")
    g.add_argument("--test-clean")
    g.add_argument("--level", choices=["easy", "moderate", "difficult"], default="moderate")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--variants", type=int, help="variants per training image (default 12)")
    g.add_argument("--threads", type=int, default=1)
    g.set_defaults(fn=cmd_generate)

    t = sub.add_parser("train", help="train MEPSNet on a generated dataset")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="PSNR/SSIM report for a dataset split")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--identity", action="store_true", help="score the distorted inputs unchanged")
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--out", help="report JSON path")
    e.add_argument("--threads", type=int, default=1)
    e.set_defaults(fn=cmd_eval)

    r = sub.add_parser("restore", help="restore an image or a directory of images")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--input", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_restore)

    i = sub.add_parser("inspect", help="verification and inspection tools")
    i.add_argument("what", choices=["grad-check", "param-count", "features", "spectrum"])
    i.add_argument("--config")
    i.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    i.add_argument("--checkpoint")
    i.add_argument("--image")
    i.add_argument("--out")
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--size", type=int, help="grad-check input side (8) or spectrum field side (256)")
    i.add_argument("--tol", type=float, default=1e-6)
    i.set_defaults(fn=cmd_inspect)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "inspect":
        if args.size is None:
            args.size = 8 if args.what == "grad-check" else 256
        needs = {"features": ("checkpoint", "image", "out")}.get(args.what, ())
        missing = [n for n in needs if getattr(args, n) is None]
        if missing:
            parser.error(f"inspect {args.what} requires --{' --'.join(missing)}")
    try:
        return args.fn(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
