"""Measure the seed-0 reference numbers and write tests/fixtures/reference_seed0.json.

Run only when a deliberate behaviour change moves the reference values.
"""

import json
import time
from pathlib import Path

from vcrd.config import load_config
from vcrd.experiment import ablate, build_setup, run_analyze

ROOT = Path(__file__).resolve().parents[1]


def main():
    t0 = time.time()
    mp = load_config(ROOT / "configs/multipath_ref.cfg")
    ratios_mp = run_analyze(mp, build_setup(mp))
    ch = load_config(ROOT / "configs/chain_ref.cfg")
    ch_setup = build_setup(ch)
    ratios_ch = run_analyze(ch, ch_setup, student=ch_setup.student)
    report = ablate(mp, ["vcrd", "clamp", "uniform"])
    means = {r["variant"]: r["mean"] for r in report["rows"]}
    out = {
        "multipath_ratio": ratios_mp,
        "chain_ratio_untrained_student": ratios_ch,
        "ablation_means": means,
        "ablation_margins": report["margins"],
        "ablation_seeds": report["seeds"],
    }
    path = ROOT / "tests/fixtures/reference_seed0.json"
    path.write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    print(json.dumps(out, indent=2, sort_keys=True))
    print(f"wrote {path} in {time.time() - t0:.1f}s")


if __name__ == "__main__":
    main()
