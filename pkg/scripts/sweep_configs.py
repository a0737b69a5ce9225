"""Write config files for the block-count and template-count sweeps.

    python3 scripts/sweep_configs.py --base configs/paper.json --out configs/sweeps

Blocks: three SRIRs per expert holding 9 to 45 SResidual blocks in total.
Templates: 4 to 32 templates in the bank. Each file is a complete config that
``mepsnet train --config`` accepts; the parameter total is printed alongside.
"""
import argparse
import json
from pathlib import Path

from mepsnet.model import MepsNetConfig, count_for


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--base", default="configs/paper.json")
    p.add_argument("--out", default="configs/sweeps")
    args = p.parse_args()
    base = json.loads(Path(args.base).read_text())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    variants = [(f"blocks{3 * b}", {"n_srir_per_expert": 3, "n_sresidual_per_srir": b}) for b in (3, 6, 9, 12, 15)]
    variants += [(f"templates{k}", {"n_templates": k}) for k in (4, 8, 16, 32)]
    for name, change in variants:
        model = {**base["model"], **change}
        total = count_for(MepsNetConfig.from_dict(model))["total"]
        (out / f"{name}.json").write_text(json.dumps({**base, "model": model}, indent=2) + "\n")
        print(f"{name:12s} {total:12d} params -> {out / name}.json")


if __name__ == "__main__":
    main()
