"""Reward-ratio distribution for a teacher and a capacity-gapped student.

Writes ratio_hist.csv and ratio_summary.json, and prints a text histogram.
"""

import argparse
import csv
from pathlib import Path

from vcrd.config import load_config, parse_overrides
from vcrd.experiment import build_setup, run_analyze


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--out", default="runs/ratios")
    ap.add_argument("--untrained-student", action="store_true",
                    help="compare against the distillation init instead of the gold-fitted student")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()
    cfg = load_config(args.config, parse_overrides(args.set))
    setup = build_setup(cfg)
    student = setup.student if args.untrained_student else None
    summary = run_analyze(cfg, setup, out_dir=args.out, student=student)
    with open(Path(args.out) / "ratio_hist.csv") as fh:
        rows = [r for r in csv.DictReader(fh) if r["prefix"] == "teacher"]
    peak = max(int(r["count"]) for r in rows) or 1
    for r in rows:
        c = int(r["count"])
        if c:
            print(f"[{float(r['bin_lo']):9.3g}, {float(r['bin_hi']):9.3g})  {'#' * max(1, 50 * c // peak)} {c}")
    for k, v in summary.items():
        print(f"{k}: {v}")


if __name__ == "__main__":
    main()
