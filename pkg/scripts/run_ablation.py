"""Run the full ablation grid on a config and print the comparison table.

    python3 scripts/run_ablation.py configs/multipath_ref.cfg --out runs/ablation
"""

import argparse
import logging

from vcrd.config import load_config, parse_overrides
from vcrd.experiment import ablate, format_table


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--variants", help="comma-separated subset")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    cfg = load_config(args.config, parse_overrides(args.set))
    variants = args.variants.split(",") if args.variants else None
    print(format_table(ablate(cfg, variants, out_dir=args.out)))


if __name__ == "__main__":
    main()
