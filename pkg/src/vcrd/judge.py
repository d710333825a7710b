"""Local validity judges r(c, a) in [0, 1] and the PRM-free teacher-likelihood weight."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .policy import Prefix
from .tasks import TaskInstance, valid_next


class JudgeError(RuntimeError):
    pass


@dataclass(frozen=True)
class JudgeConfig:
    kind: str = "oracle"
    r_floor: float = 0.1
    noise_scale: float = 0.0
    seed: int = 0
    k: int = 128
    gamma: float = 0.5
    eps: float = 1e-8
    clamp_lo: float = 0.5
    clamp_hi: float = 2.0

    def __post_init__(self):
        if self.kind not in ("oracle", "noisy_oracle", "prm_free"):
            raise ValueError(f"unknown judge kind {self.kind!r}")
        if not 0.0 < self.r_floor < 1.0:
            raise ValueError("r_floor must lie in (0, 1)")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if not self.eps > 0:
            raise ValueError("eps must be > 0")
        if not 0.0 < self.clamp_lo <= 1.0 <= self.clamp_hi:
            raise ValueError("clamp bounds must satisfy 0 < lo <= 1 <= hi")


def oracle_score(instance: TaskInstance, prefix: Prefix, token: int, r_floor: float = 0.1) -> float:
    return 1.0 if token in valid_next(instance, prefix) else r_floor


def _noise_stream(seed: int, prefix: Prefix, token: int) -> np.random.Generator:
    # stable across processes, unlike hash()
    payload = f"{seed}|{','.join(map(str, prefix.prompt))}|{','.join(map(str, prefix.generated))}|{token}"
    digest = hashlib.blake2b(payload.encode(), digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


def noisy_score(base: float, noise_scale: float, rng: np.random.Generator) -> float:
    """Multiplicative uniform noise in [1 - s, 1 + s], clipped to [0, 1]."""
    if noise_scale == 0:
        return float(base)
    factor = rng.uniform(1.0 - noise_scale, 1.0 + noise_scale)
    return float(min(max(base * factor, 0.0), 1.0))


class OracleJudge:
    """Scores tokens against the gold trajectories of the bound task instances."""

    def __init__(self, cfg: JudgeConfig | None = None, instances: Iterable[TaskInstance] = ()):
        self.cfg = cfg or JudgeConfig()
        if self.cfg.kind == "prm_free":
            raise ValueError("prm_free is a weight rule, not a token scorer")
        self._by_prompt: dict[tuple, TaskInstance] = {}
        self.bind(instances)

    def bind(self, instances: Iterable[TaskInstance]) -> "OracleJudge":
        for inst in instances:
            self._by_prompt[inst.prompt] = inst
        return self

    def score(self, prefix: Prefix, token: int) -> float:
        inst = self._by_prompt.get(tuple(prefix.prompt))
        if inst is None:
            raise JudgeError("judge is not bound to a task instance with this prompt")
        base = oracle_score(inst, prefix, token, self.cfg.r_floor)
        if self.cfg.kind == "noisy_oracle" and self.cfg.noise_scale > 0:
            return noisy_score(base, self.cfg.noise_scale,
                               _noise_stream(self.cfg.seed, prefix, token))
        return base


def make_judge(cfg: JudgeConfig, instances: Iterable[TaskInstance] = ()) -> OracleJudge | None:
    if cfg.kind == "prm_free":
        return None
    return OracleJudge(cfg, instances)


def prm_free_weight(teacher_dist, student_token: int, cfg: JudgeConfig | None = None) -> float:
    """Teacher-likelihood weight: p(a_s) over the top-k collision sum, log-smoothed and clamped."""
    cfg = cfg or JudgeConfig(kind="prm_free")
    p = np.asarray(teacher_dist, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("empty teacher distribution")
    k = min(cfg.k, p.size)
    top = np.sort(p)[::-1][:k]
    raw = p[student_token] / (float(np.sum(top * top)) + cfg.eps)
    lo, hi = math.log(cfg.clamp_lo), math.log(cfg.clamp_hi)
    if raw <= 0:
        return cfg.clamp_lo
    s = cfg.gamma * math.log(raw)
    if s <= lo:
        return cfg.clamp_lo
    if s >= hi:
        return cfg.clamp_hi
    return math.exp(s)
