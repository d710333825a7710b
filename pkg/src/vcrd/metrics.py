"""Per-iteration metric records, append-only CSV writer and run summaries."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

METRICS_HEADER = ("iteration,lv_skl,lv_srkl,total,mean_w_teacher,mean_w_student,"
                  "f_parity,f_atten,f_amp,eval_acc,ms")


@dataclass
class MetricRecord:
    iteration: int
    lv_skl: float
    lv_srkl: float
    total: float
    mean_w_teacher: float
    mean_w_student: float
    f_parity: float
    f_atten: float
    f_amp: float
    eval_acc: float | None = None
    ms: float = 0.0

    def __post_init__(self):
        s = self.f_parity + self.f_atten + self.f_amp
        if abs(s - 1.0) > 1e-9:
            raise ValueError(f"regime fractions sum to {s}, not 1")

    def to_row(self) -> str:
        vals = []
        for f in fields(self):
            v = getattr(self, f.name)
            vals.append("" if v is None else repr(v) if isinstance(v, float) else str(v))
        return ",".join(vals)


class MetricsWriter:
    """Appends one flushed CSV row per record; a crash leaves only whole rows."""

    def __init__(self, path):
        self.path = Path(path)
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w", encoding="utf-8", newline="")
        except OSError as exc:
            raise OSError(f"cannot write metrics to {self.path}: {exc}") from exc
        self._fh.write(METRICS_HEADER + "\n")
        self._fh.flush()

    def append(self, rec: MetricRecord):
        self._fh.write(rec.to_row() + "\n")
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path) -> list[dict]:
    import csv
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def run_id(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True).encode()
    return hashlib.sha1(b"run " + blob).hexdigest()[:12]


def write_metrics(stream, out_dir, config: dict, extra: dict | None = None) -> dict:
    """Write ``metrics.csv`` and ``summary.json`` for a finished metric stream."""
    out_dir = Path(out_dir)
    records = list(stream)
    with MetricsWriter(out_dir / "metrics.csv") as w:
        for rec in records:
            w.append(rec)
    return write_summary(out_dir, config, records, extra)


def write_summary(out_dir, config: dict, records, extra: dict | None = None) -> dict:
    out_dir = Path(out_dir)
    last_eval = next((r.eval_acc for r in reversed(records) if r.eval_acc is not None), None)
    summary = {
        "run_id": run_id(config),
        "config": config,
        "units": {"divergence": "nats"},
        "iterations": len(records),
        "terminal": asdict(records[-1]) if records else None,
        "final_eval_acc": last_eval,
    }
    if extra:
        summary.update(extra)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write summary to {out_dir}: {exc}") from exc
    return summary
