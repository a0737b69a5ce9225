"""Parameter census across expert counts, with and without template sharing.

    python3 scripts/param_census.py [--config configs/paper.json]
"""
import argparse
import json
from pathlib import Path

from mepsnet.model import PAPER_DEFAULT, MepsNetConfig, count_for


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config")
    p.add_argument("--experts", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    args = p.parse_args()
    cfg = PAPER_DEFAULT
    if args.config:
        cfg = MepsNetConfig.from_dict(json.loads(Path(args.config).read_text())["model"])

    base = count_for(cfg, n_experts=1)["total"]
    print(f"{'N':>2s} {'shared':>12s} {'ratio':>6s} {'unshared':>12s} {'ratio':>6s}")
    for n in args.experts:
        s = count_for(cfg, n_experts=n)["total"]
        u = count_for(cfg, n_experts=n, shared=False)["total"]
        print(f"{n:2d} {s:12d} {s / base:6.3f} {u:12d} {u / base:6.3f}")


if __name__ == "__main__":
    main()
