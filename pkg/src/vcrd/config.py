"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored. Every key must be a field of
:class:`RunConfig`; unknown keys are rejected so typos cannot silently fall
back to defaults.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .judge import JudgeConfig
from .objective import TrainConfig
from .tasks import TaskSpec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"

    # task
    task_kind: str = "multipath"
    modulus: int = 7
    chain_length: int = 2
    operand_count: int = 2
    max_step: int = 3
    n_train: int = 1000
    n_eval: int = 300

    # policies
    teacher_window: int = 5
    student_window: int = 4
    teacher_epochs: int = 200
    teacher_lr: float = 0.1
    sft_epochs: int = 0
    sft_lr: float = 0.1
    teacher_ckpt: str = ""
    student_ckpt: str = ""
    check_teacher_gap: bool = True

    # judge
    judge_kind: str = "oracle"
    r_floor: float = 0.1
    noise_scale: float = 0.0
    prm_k: int = 128
    prm_gamma: float = 0.5
    prm_eps: float = 1e-8
    clamp_lo: float = 0.5
    clamp_hi: float = 2.0

    # distillation
    lambda_teacher: float = 1.0
    lambda_student: float = 1.0
    alpha: float = 0.1
    epsilon: float = 1e-8
    weight_rule: str = "ratio"
    clamp_amplification: bool = False
    weight_token_source: str = "rollout"
    batch_size: int = 16
    iterations: int = 300
    optimizer: str = "sgd"
    lr: float = 1.0
    eval_every: int = 50
    workers: int = 1
    parity_band: float = 0.05
    timing: bool = False
    log_weights: bool = False

    # analysis / ablation
    hist_bins: int = 40
    hist_lo: float = 1e-2
    hist_hi: float = 1e2
    ablate_seeds: int = 5

    def __post_init__(self):
        # build the component configs once so every field is validated up front
        self.task_spec()
        self.judge_config()
        self.train_config()
        if self.teacher_window < 1 or self.student_window < 1:
            raise ConfigError("windows must be >= 1")
        if self.n_train < 1 or self.n_eval < 0:
            raise ConfigError("n_train must be >= 1 and n_eval >= 0")
        if self.hist_bins < 1 or not 0 < self.hist_lo < self.hist_hi:
            raise ConfigError("histogram needs hist_bins >= 1 and 0 < hist_lo < hist_hi")
        if self.ablate_seeds < 1:
            raise ConfigError("ablate_seeds must be >= 1")

    def task_spec(self) -> TaskSpec:
        return TaskSpec(kind=self.task_kind, modulus=self.modulus, chain_length=self.chain_length,
                        operand_count=self.operand_count, max_step=self.max_step)

    def judge_config(self) -> JudgeConfig:
        return JudgeConfig(kind=self.judge_kind, r_floor=self.r_floor, noise_scale=self.noise_scale,
                           seed=self.seed, k=self.prm_k, gamma=self.prm_gamma, eps=self.prm_eps,
                           clamp_lo=self.clamp_lo, clamp_hi=self.clamp_hi)

    def train_config(self) -> TrainConfig:
        if self.judge_kind == "prm_free" and self.weight_rule != "prm_free":
            raise ConfigError("judge_kind = prm_free requires weight_rule = prm_free")
        return TrainConfig(
            lambda_teacher=self.lambda_teacher, lambda_student=self.lambda_student,
            alpha=self.alpha, epsilon=self.epsilon, weight_rule=self.weight_rule,
            clamp_amplification=self.clamp_amplification,
            weight_token_source=self.weight_token_source, horizon=0,
            batch_size=self.batch_size, iterations=self.iterations, seed=self.seed,
            optimizer=self.optimizer, lr=self.lr, eval_every=self.eval_every,
            workers=self.workers, parity_band=self.parity_band)

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_HINTS = typing.get_type_hints(RunConfig)


def _coerce(key: str, raw: str):
    typ = _HINTS[key]
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_overrides(pairs) -> dict:
    out = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        key, value = item.split("=", 1)
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = _coerce(key, value)
    return out


def parse_config(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = _coerce(key, value)
    return values


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    values = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        values = parse_config(p.read_text(), str(p))
    values.update(overrides or {})
    try:
        return RunConfig(**values)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"
