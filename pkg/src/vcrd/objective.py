"""Validity-ratio weights and the weighted skew-KL distillation objective.

Per rollout pair, with teacher prefixes c^T and student prefixes c^S:

    w_t^T = r(c^T, a^S_t) / (r(c^T, a^T_t) + eps)
    w_t^S = r(c^S, a^S_t) / (r(c^S, a^T_t) + eps)

    lv_skl  = 1/T sum_t w_t^T * SKL_alpha (p(.|c^T) || q(.|c^T))
    lv_srkl = 1/T sum_t w_t^S * SRKL_alpha(p(.|c^S) || q(.|c^S))
    total   = lambda_T * lv_skl + lambda_S * lv_srkl

Weights are constants with respect to the student parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from . import divergence as dv
from .judge import JudgeConfig, prm_free_weight
from .policy import Prefix, TabularPolicy, Trajectory, _draw

WEIGHT_RULES = ("ratio", "rs_only", "rs_minus_rt", "prm_free", "uniform")
TOKEN_SOURCES = ("rollout", "resample")
PARITY, ATTENUATION, AMPLIFICATION = "parity", "attenuation", "amplification"


@dataclass(frozen=True)
class TrainConfig:
    lambda_teacher: float = 1.0
    lambda_student: float = 1.0
    alpha: float = 0.1
    epsilon: float = 1e-8
    weight_rule: str = "ratio"
    clamp_amplification: bool = False
    weight_token_source: str = "rollout"
    horizon: int = 0  # 0: take from the task
    batch_size: int = 16
    iterations: int = 500
    seed: int = 0
    optimizer: str = "sgd"
    lr: float = 0.1
    eval_every: int = 50
    workers: int = 1
    parity_band: float = 0.05

    def __post_init__(self):
        if self.lambda_teacher < 0 or self.lambda_student < 0:
            raise ValueError("loss weights lambda_teacher, lambda_student must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.weight_rule not in WEIGHT_RULES:
            raise ValueError(f"unknown weight rule {self.weight_rule!r}")
        if self.weight_token_source not in TOKEN_SOURCES:
            raise ValueError(f"unknown weight_token_source {self.weight_token_source!r}")
        if self.batch_size < 1 or self.iterations < 0 or self.workers < 1:
            raise ValueError("batch_size and workers must be >= 1, iterations >= 0")
        if self.parity_band < 0:
            raise ValueError("parity_band must be >= 0")


@dataclass(frozen=True)
class RolloutPair:
    teacher_traj: Trajectory
    student_traj: Trajectory

    def __post_init__(self):
        if self.teacher_traj.prompt != self.student_traj.prompt:
            raise ValueError("teacher and student rollouts must share the prompt")

    @property
    def prompt(self):
        return self.teacher_traj.prompt

    @property
    def horizon(self) -> int:
        return min(len(self.teacher_traj), len(self.student_traj))


@dataclass(frozen=True)
class WeightSeries:
    w_teacher: np.ndarray
    w_student: np.ndarray
    regimes_teacher: tuple[str, ...] = ()
    regimes_student: tuple[str, ...] = ()
    # (r_student_token, r_teacher_token) per position; NaN where no judge is used
    scores_teacher: tuple[tuple[float, float], ...] = ()
    scores_student: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        for w in (self.w_teacher, self.w_student):
            if not (np.all(np.isfinite(w)) and np.all(w >= 0)):
                raise ValueError("weights must be finite and non-negative")

    def regime_counts(self) -> dict[str, int]:
        labels = self.regimes_teacher + self.regimes_student
        return {r: labels.count(r) for r in (PARITY, ATTENUATION, AMPLIFICATION)}


def classify_regime(w: float, parity_band: float = 0.05) -> str:
    if abs(w - 1.0) <= parity_band:
        return PARITY
    return ATTENUATION if w < 1.0 else AMPLIFICATION


def apply_weight_rule(r_s: float, r_t: float, cfg: TrainConfig) -> float:
    rule = cfg.weight_rule
    if rule == "ratio":
        return r_s / (r_t + cfg.epsilon)
    if rule == "rs_only":
        return r_s
    if rule == "rs_minus_rt":
        return math.exp(r_s - r_t)
    if rule == "uniform":
        return 1.0
    if rule == "prm_free":
        raise ValueError("prm_free weights come from the teacher distribution; "
                         "use judge.prm_free_weight")
    raise ValueError(f"unknown weight rule {rule!r}")


def with_regimes(series: WeightSeries, parity_band: float) -> WeightSeries:
    return replace(series,
                   regimes_teacher=tuple(classify_regime(w, parity_band) for w in series.w_teacher),
                   regimes_student=tuple(classify_regime(w, parity_band) for w in series.w_student))


def clamp_weights(series: WeightSeries, parity_band: float = 0.05) -> WeightSeries:
    """Cap every weight at 1, removing the amplification regime."""
    return with_regimes(replace(series, w_teacher=np.minimum(series.w_teacher, 1.0),
                                w_student=np.minimum(series.w_student, 1.0)), parity_band)


def uniform_weights(T: int) -> WeightSeries:
    ones = np.ones(T)
    return with_regimes(WeightSeries(ones, ones.copy()), 0.0)


def _proposals(prefix: Prefix, t: int, pair: RolloutPair, cfg: TrainConfig, rng,
               teacher: TabularPolicy | None, student: TabularPolicy | None, coupled: bool):
    """(student token, teacher token) whose validity is compared at ``prefix``."""
    if cfg.weight_token_source == "rollout":
        return pair.student_traj.actions[t], pair.teacher_traj.actions[t]
    if teacher is None or student is None:
        raise ValueError("resampled weight tokens need both policies")
    u_t = rng.random()
    u_s = u_t if coupled else rng.random()
    return _draw(student.next_dist(prefix), u_s), _draw(teacher.next_dist(prefix), u_t)


def validity_weights(judge, pair: RolloutPair, cfg: TrainConfig, rng=None,
                     teacher: TabularPolicy | None = None, student: TabularPolicy | None = None,
                     judge_cfg: JudgeConfig | None = None, coupled: bool = False) -> WeightSeries:
    """Weights for one rollout pair, under teacher and student prefixes.

    ``rollout`` reuses the rollout tokens at position t for both prefixes;
    ``resample`` draws fresh proposals from each policy at the scored prefix.
    The prm_free rule ignores the judge and uses the student's greedy token.
    """
    T = pair.horizon
    w_T, w_S, sc_T, sc_S = [], [], [], []
    if cfg.weight_rule == "uniform":
        return replace(uniform_weights(T), scores_teacher=((math.nan, math.nan),) * T,
                       scores_student=((math.nan, math.nan),) * T)
    for t in range(T):
        for traj, ws, sc in ((pair.teacher_traj, w_T, sc_T), (pair.student_traj, w_S, sc_S)):
            prefix = traj.prefix(t)
            if cfg.weight_rule == "prm_free":
                if teacher is None or student is None:
                    raise ValueError("prm_free weights need both policies")
                a_s = int(np.argmax(student.next_dist(prefix)))
                ws.append(prm_free_weight(teacher.next_dist(prefix), a_s, judge_cfg))
                sc.append((math.nan, math.nan))
                continue
            a_s, a_t = _proposals(prefix, t, pair, cfg, rng, teacher, student, coupled)
            r_s, r_t = judge.score(prefix, a_s), judge.score(prefix, a_t)
            ws.append(apply_weight_rule(r_s, r_t, cfg))
            sc.append((r_s, r_t))
    series = WeightSeries(np.array(w_T, dtype=float), np.array(w_S, dtype=float),
                          scores_teacher=tuple(sc_T), scores_student=tuple(sc_S))
    return with_regimes(series, cfg.parity_band)


class LossTerm(NamedTuple):
    value: float
    grads: dict
    per_position: np.ndarray


def _weighted_loss(teacher, student, traj, weights, alpha, rows_fn) -> LossTerm:
    weights = np.asarray(weights, dtype=float)
    T = min(len(traj), len(weights))
    if T == 0:
        return LossTerm(0.0, {}, np.zeros(0))
    if teacher.V != student.V:
        raise ValueError("teacher and student vocabularies differ in size")
    prefixes = [traj.prefix(t) for t in range(T)]
    keys = [student.state_key(c) for c in prefixes]
    P = np.array([teacher.next_dist(c) for c in prefixes])
    Z = np.array([student.state_logits(k) for k in keys])
    vals, G = rows_fn(P, Z, alpha)
    w = weights[:T] / T
    per_pos = w * vals
    G = G * w[:, None]
    grads: dict[tuple, np.ndarray] = {}
    for key, g in zip(keys, G):
        grads[key] = grads[key] + g if key in grads else g
    return LossTerm(float(per_pos.sum()), grads, per_pos)


def lv_skl_loss(teacher: TabularPolicy, student: TabularPolicy, teacher_traj: Trajectory,
                weights, alpha: float) -> LossTerm:
    """Weighted skew KL on teacher-prefix contexts, averaged over positions."""
    return _weighted_loss(teacher, student, teacher_traj, weights, alpha, dv.skl_rows)


def lv_srkl_loss(teacher: TabularPolicy, student: TabularPolicy, student_traj: Trajectory,
                 weights, alpha: float) -> LossTerm:
    """Weighted skew reverse KL on student-prefix contexts, averaged over positions."""
    return _weighted_loss(teacher, student, student_traj, weights, alpha, dv.srkl_rows)


@dataclass
class LossBreakdown:
    lv_skl: float
    lv_srkl: float
    total: float
    per_position_skl: list = field(default_factory=list)
    per_position_srkl: list = field(default_factory=list)
    grads: dict = field(default_factory=dict, repr=False)


def combine_grads(parts: Sequence[tuple[float, dict]]) -> dict:
    out: dict[tuple, np.ndarray] = {}
    for coef, grads in parts:
        if coef == 0:
            continue
        for key, g in grads.items():
            out[key] = out[key] + coef * g if key in out else coef * g
    return out


def total_loss(lv_skl: LossTerm, lv_srkl: LossTerm, cfg: TrainConfig) -> LossBreakdown:
    lt, ls = cfg.lambda_teacher, cfg.lambda_student
    if lt < 0 or ls < 0:
        raise ValueError("negative loss weight")
    return LossBreakdown(
        lv_skl=lv_skl.value,
        lv_srkl=lv_srkl.value,
        total=lt * lv_skl.value + ls * lv_srkl.value,
        per_position_skl=[lv_skl.per_position],
        per_position_srkl=[lv_srkl.per_position],
        grads=combine_grads([(lt, lv_skl.grads), (ls, lv_srkl.grads)]),
    )


def pair_objective(teacher, student, pair: RolloutPair, weights: WeightSeries,
                   cfg: TrainConfig) -> LossBreakdown:
    skl_term = lv_skl_loss(teacher, student, pair.teacher_traj, weights.w_teacher, cfg.alpha)
    srkl_term = lv_srkl_loss(teacher, student, pair.student_traj, weights.w_student, cfg.alpha)
    return total_loss(skl_term, srkl_term, cfg)


def batch_objective(teacher, student, pairs: Sequence[RolloutPair],
                    weights: Sequence[WeightSeries], cfg: TrainConfig) -> LossBreakdown:
    """Mean over prompts, reduced in prompt order."""
    parts = [pair_objective(teacher, student, pr, ws, cfg) for pr, ws in zip(pairs, weights)]
    return reduce_breakdowns(parts)


def reduce_breakdowns(parts: Sequence[LossBreakdown]) -> LossBreakdown:
    B = len(parts)
    if B == 0:
        return LossBreakdown(0.0, 0.0, 0.0)
    return LossBreakdown(
        lv_skl=sum(b.lv_skl for b in parts) / B,
        lv_srkl=sum(b.lv_srkl for b in parts) / B,
        total=sum(b.total for b in parts) / B,
        per_position_skl=[b.per_position_skl[0] for b in parts],
        per_position_srkl=[b.per_position_srkl[0] for b in parts],
        grads=combine_grads([(1.0 / B, b.grads) for b in parts]),
    )
