"""Run orchestration: policy setup, distillation runs, ratio analysis, ablations."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import statistics
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import RunConfig
from .judge import JudgeConfig, make_judge
from .metrics import MetricsWriter, write_summary
from .objective import RolloutPair, TrainConfig, validity_weights
from .policy import TabularPolicy, load_checkpoint, sample_rollout, save_checkpoint
from .tasks import TaskInstance, TaskSpec, final_answer_accuracy, fit_teacher, generate
from .trainer import PromptResult, distill

log = logging.getLogger(__name__)

EVAL_OFFSET = 1_000_000


@dataclass
class Setup:
    spec: TaskSpec
    train: list
    eval: list
    teacher: TabularPolicy
    student: TabularPolicy
    teacher_acc: float
    sft_acc: float | None
    sft_reference: TabularPolicy | None = None


def datasets(cfg: RunConfig) -> tuple[list, list]:
    spec = cfg.task_spec()
    # eval draws use a disjoint index range of the same generator
    return generate(spec, cfg.n_train, cfg.seed), generate(spec, cfg.n_eval, cfg.seed, EVAL_OFFSET)


def load_policy(path) -> TabularPolicy:
    return load_checkpoint(Path(path).read_text())


def build_setup(cfg: RunConfig) -> Setup:
    spec = cfg.task_spec()
    train, ev = datasets(cfg)
    if cfg.teacher_ckpt:
        teacher = load_policy(cfg.teacher_ckpt)
    else:
        teacher, _ = fit_teacher(spec, train, cfg.teacher_epochs, cfg.teacher_lr,
                                 cfg.teacher_window, seed=cfg.seed)
    if cfg.student_ckpt:
        student = load_policy(cfg.student_ckpt)
    else:
        student, _ = fit_teacher(spec, train, cfg.sft_epochs, cfg.sft_lr,
                                 cfg.student_window, seed=cfg.seed + 1)
    if student.vocab != teacher.vocab:
        raise ValueError("teacher and student vocabularies differ")
    teacher_acc = final_answer_accuracy(teacher, ev, spec.horizon) if ev else float("nan")
    sft_acc, sft_ref = None, None
    if cfg.check_teacher_gap:
        # reference: the student architecture fitted on gold with the teacher's budget
        sft_ref, _ = fit_teacher(spec, train, cfg.teacher_epochs, cfg.teacher_lr,
                                 cfg.student_window, seed=cfg.seed + 1)
        sft_acc = final_answer_accuracy(sft_ref, ev, spec.horizon)
        if not teacher_acc > sft_acc:
            raise RuntimeError(
                f"teacher accuracy {teacher_acc:.3f} does not exceed the SFT-only student's "
                f"{sft_acc:.3f}; distillation would be meaningless (set check_teacher_gap = false "
                f"to override)")
    return Setup(spec, train, ev, teacher, student, teacher_acc, sft_acc, sft_ref)


WEIGHT_LOG_HEADER = "iteration,prompt,prefix,t,r_student,r_teacher,weight"


def _weight_rows(it: int, res: PromptResult):
    ws = res.weights
    for name, w, sc in (("teacher", ws.w_teacher, ws.scores_teacher),
                        ("student", ws.w_student, ws.scores_student)):
        for t, wt in enumerate(w):
            r_s, r_t = sc[t] if t < len(sc) else (math.nan, math.nan)
            yield f"{it},{res.index},{name},{t},{r_s!r},{r_t!r},{float(wt)!r}"


def run_distill(cfg: RunConfig, setup: Setup | None = None, out_dir=None,
                write: bool = True) -> dict:
    """Distil per ``cfg``; writes metrics.csv, summary.json and student.ckpt when ``write``."""
    setup = setup or build_setup(cfg)
    student = setup.student.copy()
    judge_cfg = cfg.judge_config()
    judge = make_judge(judge_cfg, setup.train)
    tcfg = cfg.train_config()
    out = Path(out_dir or cfg.out_dir)

    if write:
        out.mkdir(parents=True, exist_ok=True)
    writer = MetricsWriter(out / "metrics.csv") if write else None
    wlog = None
    if write and cfg.log_weights:
        wlog = open(out / "weights.csv", "w", encoding="utf-8", newline="")
        wlog.write(WEIGHT_LOG_HEADER + "\n")
    try:
        student, records = distill(
            setup.teacher, student, setup.train, judge, tcfg, judge_cfg=judge_cfg,
            eval_instances=setup.eval,
            on_record=writer.append if writer else None,
            on_prompt=(lambda it, r: wlog.write("\n".join(_weight_rows(it, r)) + "\n")) if wlog else None,
            timing=cfg.timing)
    finally:
        if writer:
            writer.close()
        if wlog:
            wlog.close()
    final_acc = next((r.eval_acc for r in reversed(records) if r.eval_acc is not None), None)
    extra = {"teacher_eval_acc": setup.teacher_acc, "sft_reference_acc": setup.sft_acc,
             "student_init_eval_acc": final_answer_accuracy(setup.student, setup.eval, setup.spec.horizon)
             if setup.eval else None}
    if write:
        (out / "student.ckpt").write_text(save_checkpoint(student))
        summary = write_summary(out, cfg.to_dict(), records, extra)
    else:
        summary = {"config": cfg.to_dict(), "final_eval_acc": final_acc, **extra}
    summary["records"] = records
    summary["student"] = student
    return summary


# ---------------------------------------------------------------- ratio analysis

@dataclass
class RatioAnalysis:
    ratios_teacher: np.ndarray
    ratios_student: np.ndarray
    edges: np.ndarray
    counts_teacher: np.ndarray
    counts_student: np.ndarray

    @property
    def n_positions(self) -> int:
        return len(self.ratios_teacher) + len(self.ratios_student)

    def frac_ge_1(self, which: str = "both") -> float:
        r = {"teacher": self.ratios_teacher, "student": self.ratios_student,
             "both": np.concatenate([self.ratios_teacher, self.ratios_student])}[which]
        return float(np.mean(r >= 1.0)) if len(r) else float("nan")

    def summary(self) -> dict:
        return {
            "positions": self.n_positions,
            "frac_ge_1": self.frac_ge_1("both"),
            "frac_ge_1_teacher_prefix": self.frac_ge_1("teacher"),
            "frac_ge_1_student_prefix": self.frac_ge_1("student"),
            "frac_gt_1": float(np.mean(np.concatenate([self.ratios_teacher, self.ratios_student]) > 1.0)),
            "median_ratio": float(np.median(np.concatenate([self.ratios_teacher, self.ratios_student]))),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("prefix,bin_lo,bin_hi,count\n")
        for name, counts in (("teacher", self.counts_teacher), ("student", self.counts_student)):
            for lo, hi, c in zip(self.edges[:-1], self.edges[1:], counts):
                buf.write(f"{name},{lo!r},{hi!r},{int(c)}\n")
        return buf.getvalue()


def ratio_histogram(ratios, bins: int = 40, lo: float = 1e-2, hi: float = 1e2):
    """Log-spaced bins over [lo, hi]; values outside fall into the end bins."""
    edges = np.logspace(math.log10(lo), math.log10(hi), bins + 1)
    r = np.clip(np.asarray(ratios, dtype=float), lo, hi)
    idx = np.clip(np.searchsorted(edges, r, side="right") - 1, 0, bins - 1)
    return edges, np.bincount(idx, minlength=bins)


def analyze_ratios(teacher: TabularPolicy, student: TabularPolicy,
                   instances: Sequence[TaskInstance], judge, cfg: TrainConfig, seed: int = 0,
                   bins: int = 40, lo: float = 1e-2, hi: float = 1e2,
                   horizon: int | None = None) -> RatioAnalysis:
    """Raw r_s / r_t at every position, under teacher and student prefixes.

    Both rollouts of an instance share one seeded stream, and resampled
    proposals share one uniform, so identical policies give ratio 1 everywhere.
    """
    if not instances:
        raise ValueError("no instances to analyse")
    cfg = replace(cfg, weight_rule="ratio", clamp_amplification=False)
    rt, rs = [], []
    for i, inst in enumerate(instances):
        T = horizon or len(inst.gold_trajectories[0])
        y_t = sample_rollout(teacher, inst.prompt, T, np.random.default_rng([seed, i, 7]))
        y_s = sample_rollout(student, inst.prompt, T, np.random.default_rng([seed, i, 7]))
        ws = validity_weights(judge, RolloutPair(y_t, y_s), cfg, np.random.default_rng([seed, i, 8]),
                              teacher=teacher, student=student, coupled=True)
        for scores, out in ((ws.scores_teacher, rt), (ws.scores_student, rs)):
            for r_s, r_t in scores:
                out.append(r_s / r_t if r_t > 0 else r_s / (r_t + cfg.epsilon))
    edges, ct = ratio_histogram(rt, bins, lo, hi)
    _, cs = ratio_histogram(rs, bins, lo, hi)
    return RatioAnalysis(np.array(rt), np.array(rs), edges, ct, cs)


def run_analyze(cfg: RunConfig, setup: Setup | None = None, out_dir=None, student=None) -> dict:
    """Ratio analysis of the teacher against ``student``, else the gold-fitted
    student-window reference, else the distillation init."""
    setup = setup or build_setup(cfg)
    student = student or setup.sft_reference or setup.student
    judge = make_judge(cfg.judge_config(), list(setup.train) + list(setup.eval))
    if judge is None:
        raise ValueError("ratio analysis needs a scoring judge (oracle or noisy_oracle)")
    instances = setup.eval or setup.train
    res = analyze_ratios(setup.teacher, student, instances, judge,
                         cfg.train_config(), seed=cfg.seed, bins=cfg.hist_bins,
                         lo=cfg.hist_lo, hi=cfg.hist_hi, horizon=setup.spec.horizon)
    summary = res.summary()
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ratio_hist.csv").write_text(res.to_csv())
        (out / "ratio_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


# ---------------------------------------------------------------- ablation grid

ABLATION_VARIANTS = {
    "vcrd": {},
    "uniform": {"weight_rule": "uniform"},
    "clamp": {"clamp_amplification": True},
    "rs_only": {"weight_rule": "rs_only"},
    "rs_minus_rt": {"weight_rule": "rs_minus_rt"},
    "prm_free": {"weight_rule": "prm_free"},
    "skl_only": {"weight_rule": "uniform", "lambda_student": 0.0},
    "srkl_only": {"weight_rule": "uniform", "lambda_teacher": 0.0},
}


def ablate(cfg: RunConfig, variants: Sequence[str] | None = None, out_dir=None) -> dict:
    """Final eval accuracy for every variant over ``cfg.ablate_seeds`` seeds."""
    names = list(variants or ABLATION_VARIANTS)
    for n in names:
        if n not in ABLATION_VARIANTS:
            raise ValueError(f"unknown ablation variant {n!r}")
    per_variant: dict[str, list[float]] = {n: [] for n in names}
    seeds = [cfg.seed + s for s in range(cfg.ablate_seeds)]
    for seed in seeds:
        base = cfg.replace(seed=seed)
        setup = build_setup(base)
        for n in names:
            run_cfg = base.replace(**ABLATION_VARIANTS[n])
            res = run_distill(run_cfg, setup=setup, write=False)
            per_variant[n].append(res["final_eval_acc"])
            log.info("seed %d %-12s acc=%.4f", seed, n, res["final_eval_acc"])
    rows = []
    for n in names:
        accs = per_variant[n]
        rows.append({"variant": n, "mean": statistics.fmean(accs),
                     "std": statistics.stdev(accs) if len(accs) > 1 else 0.0,
                     "accs": accs})
    means = {r["variant"]: r["mean"] for r in rows}
    margins = {}
    if "vcrd" in means:
        for other in ("clamp", "uniform"):
            if other in means:
                margins[f"vcrd_minus_{other}"] = means["vcrd"] - means[other]
    report = {"seeds": seeds, "rows": rows, "margins": margins,
              "config": cfg.to_dict()}
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["variant", "mean_acc", "std_acc"] + [f"seed_{s}" for s in seeds])
            for r in rows:
                w.writerow([r["variant"], repr(r["mean"]), repr(r["std"])] + [repr(a) for a in r["accs"]])
        (out / "ablation.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def format_table(report: dict) -> str:
    lines = [f"{'variant':<12} {'mean':>8} {'std':>8}"]
    for r in report["rows"]:
        lines.append(f"{r['variant']:<12} {r['mean']:>8.4f} {r['std']:>8.4f}")
    for k, v in report["margins"].items():
        lines.append(f"{k}: {v:+.4f}")
    return "\n".join(lines)
