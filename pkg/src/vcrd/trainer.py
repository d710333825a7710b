"""Validity-calibrated distillation training loop.

Every iteration samples a minibatch of prompts. For each prompt, the teacher
and student are each rolled out once, the pair is weighted by the judge, both
weighted skew-KL losses are formed, and the mean over prompts takes one
optimizer step. RNG streams are keyed by (seed, iteration, prompt index, role),
so any worker count gives the same result.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .judge import JudgeConfig
from .metrics import MetricRecord
from .objective import (AMPLIFICATION, ATTENUATION, PARITY, LossBreakdown, RolloutPair,
                        TrainConfig, WeightSeries, clamp_weights, pair_objective,
                        reduce_breakdowns, validity_weights)
from .policy import OptimizerState, TabularPolicy, apply_update, sample_rollout
from .tasks import TaskInstance, final_answer_accuracy

log = logging.getLogger(__name__)

ROLE_TEACHER, ROLE_STUDENT, ROLE_WEIGHTS = 0, 1, 2


@dataclass
class PromptResult:
    index: int
    pair: RolloutPair
    weights: WeightSeries
    breakdown: LossBreakdown


def stream(seed: int, iteration: int, prompt_index: int, role: int) -> np.random.Generator:
    return np.random.default_rng([seed, iteration, prompt_index, role])


def minibatch(n: int, batch_size: int, seed: int, iteration: int) -> list[int]:
    rng = np.random.default_rng([seed, iteration, 0xBA7C])
    return [int(i) for i in rng.choice(n, size=batch_size, replace=batch_size > n)]


def process_prompt(teacher, student, inst: TaskInstance, judge, cfg: TrainConfig,
                   judge_cfg, horizon: int, seed: int, iteration: int, slot: int) -> PromptResult:
    y_t = sample_rollout(teacher, inst.prompt, horizon, stream(seed, iteration, slot, ROLE_TEACHER))
    y_s = sample_rollout(student, inst.prompt, horizon, stream(seed, iteration, slot, ROLE_STUDENT))
    pair = RolloutPair(y_t, y_s)
    ws = validity_weights(judge, pair, cfg, stream(seed, iteration, slot, ROLE_WEIGHTS),
                          teacher=teacher, student=student, judge_cfg=judge_cfg)
    if cfg.clamp_amplification:
        ws = clamp_weights(ws, cfg.parity_band)
    return PromptResult(slot, pair, ws, pair_objective(teacher, student, pair, ws, cfg))


def _fractions(weights: Sequence[WeightSeries]) -> tuple[float, float, float]:
    counts = {PARITY: 0, ATTENUATION: 0, AMPLIFICATION: 0}
    for ws in weights:
        for k, v in ws.regime_counts().items():
            counts[k] += v
    n = sum(counts.values())
    if n == 0:
        return 1.0, 0.0, 0.0
    fa, fm = counts[ATTENUATION] / n, counts[AMPLIFICATION] / n
    return 1.0 - fa - fm, fa, fm


def distill(teacher: TabularPolicy, student: TabularPolicy, tasks: Sequence[TaskInstance],
            judge, cfg: TrainConfig, judge_cfg: JudgeConfig | None = None,
            eval_instances: Sequence[TaskInstance] | None = None,
            on_record: Callable[[MetricRecord], None] | None = None,
            on_prompt: Callable[[int, PromptResult], None] | None = None,
            timing: bool = False) -> tuple[TabularPolicy, list[MetricRecord]]:
    """Distil ``teacher`` into ``student`` (updated in place) and return the metric stream.

    ``on_prompt`` sees every per-prompt result in prompt order, which is how
    weight logs are produced. ``ms`` is recorded only when ``timing`` is set,
    so metric files stay byte-identical across repeated runs.
    """
    if not tasks:
        raise ValueError("no training instances")
    horizon = cfg.horizon or len(tasks[0].gold_trajectories[0])
    opt = OptimizerState(kind=cfg.optimizer, learning_rate=cfg.lr)
    records: list[MetricRecord] = []
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for it in range(cfg.iterations):
            t0 = time.perf_counter()
            idx = minibatch(len(tasks), cfg.batch_size, cfg.seed, it)
            jobs = [(teacher, student, tasks[i], judge, cfg, judge_cfg, horizon, cfg.seed, it, slot)
                    for slot, i in enumerate(idx)]
            if pool is None:
                results = [process_prompt(*j) for j in jobs]
            else:
                results = list(pool.map(lambda j: process_prompt(*j), jobs))
            batch = reduce_breakdowns([r.breakdown for r in results])
            if not np.isfinite(batch.total):
                raise FloatingPointError(
                    f"non-finite loss at iteration {it}: lv_skl={batch.lv_skl} "
                    f"lv_srkl={batch.lv_srkl} prompts={idx}")
            if on_prompt is not None:
                for r in results:
                    on_prompt(it, r)
            apply_update(student, batch.grads, opt)

            weights = [r.weights for r in results]
            f_par, f_att, f_amp = _fractions(weights)
            acc = None
            last = it == cfg.iterations - 1
            if eval_instances is not None and cfg.eval_every > 0 and ((it + 1) % cfg.eval_every == 0 or last):
                acc = final_answer_accuracy(student, eval_instances, horizon)
            rec = MetricRecord(
                iteration=it,
                lv_skl=batch.lv_skl,
                lv_srkl=batch.lv_srkl,
                total=batch.total,
                mean_w_teacher=float(np.mean(np.concatenate([w.w_teacher for w in weights]))),
                mean_w_student=float(np.mean(np.concatenate([w.w_student for w in weights]))),
                f_parity=f_par, f_atten=f_att, f_amp=f_amp,
                eval_acc=acc,
                ms=round((time.perf_counter() - t0) * 1e3, 3) if timing else 0.0,
            )
            records.append(rec)
            if on_record is not None:
                on_record(rec)
            if acc is not None:
                log.info("iter %d total=%.5f acc=%.3f", it, rec.total, acc)
    finally:
        if pool is not None:
            pool.shutdown()
    return student, records
