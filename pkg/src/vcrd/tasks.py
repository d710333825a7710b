"""Synthetic multi-step modular arithmetic tasks with checkable step validity.

Chain tasks (one gold trajectory)::

    prompt  = start op_1 ... op_L          e.g.  3 +2 +4
    actions = v_1 ... v_L answer           e.g.  5 2 2      (mod 7)

Multipath tasks (every consumption order is gold)::

    prompt  = a_1 ... a_n                  e.g.  2 5
    actions = P_i s_1 P_j s_2 ... answer   e.g.  P1 2 P2 0 0  or  P2 5 P1 0 0

Slot tokens ``P1..Pn`` name operand positions, not values, so repeated values
still give distinct orders.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .policy import (OptimizerState, Prefix, TabularPolicy, Vocab, apply_update,
                     greedy_rollout)
from .divergence import softmax

PAD = "<pad>"
MAX_OPERANDS = 4


@dataclass(frozen=True)
class TaskSpec:
    kind: str = "chain"
    modulus: int = 7
    chain_length: int = 2
    operand_count: int = 2
    max_step: int = 3
    vocab: Vocab | None = None

    def __post_init__(self):
        if self.kind not in ("chain", "multipath"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.modulus < 2:
            raise ValueError("modulus must be >= 2")
        if self.chain_length < 1:
            raise ValueError("chain_length must be >= 1")
        if self.operand_count < 2:
            raise ValueError("operand_count must be >= 2")
        if self.kind == "multipath" and self.operand_count > MAX_OPERANDS:
            raise ValueError(f"operand_count > {MAX_OPERANDS} exceeds the order enumeration bound")
        if not 1 <= self.max_step < self.modulus:
            raise ValueError("max_step must satisfy 1 <= max_step < modulus")
        if self.vocab is not None:
            missing = [s for s in self.required_symbols() if s not in self.vocab.tokens]
            if missing:
                raise ValueError(f"vocabulary too small for modulus {self.modulus}: "
                                 f"missing {missing[:5]}")
            if self.vocab.tokens[0] != PAD:
                raise ValueError("vocabulary must start with the pad symbol")

    def required_symbols(self) -> list[str]:
        syms = [PAD] + [str(v) for v in range(self.modulus)]
        if self.kind == "chain":
            syms += [f"+{k}" for k in range(1, self.max_step + 1)]
            syms += [f"-{k}" for k in range(1, self.max_step + 1)]
        else:
            syms += [f"P{i}" for i in range(1, self.operand_count + 1)]
        return syms

    def build_vocab(self) -> Vocab:
        return self.vocab if self.vocab is not None else Vocab(tuple(self.required_symbols()))

    @property
    def horizon(self) -> int:
        if self.kind == "chain":
            return self.chain_length + 1
        return 2 * self.operand_count + 1


@dataclass(frozen=True)
class TaskInstance:
    kind: str
    prompt: tuple[int, ...]
    gold_trajectories: tuple[tuple[int, ...], ...]
    answer: tuple[int, ...]

    def check(self, actions: Sequence[int]) -> bool:
        n = len(self.answer)
        return len(actions) >= n and tuple(actions[-n:]) == self.answer


def chain_instance(spec: TaskSpec, start: int, ops: Sequence[int]) -> TaskInstance:
    """Build a chain instance from a start value and signed step sizes."""
    vocab = spec.build_vocab()
    m = spec.modulus
    prompt = [vocab.index(str(start % m))]
    values, v = [], start % m
    for k in ops:
        if k == 0 or abs(k) > spec.max_step:
            raise ValueError(f"step {k} outside +-[1, {spec.max_step}]")
        prompt.append(vocab.index(f"{'+' if k > 0 else '-'}{abs(k)}"))
        v = (v + k) % m
        values.append(vocab.index(str(v)))
    gold = tuple(values) + (values[-1],)
    return TaskInstance("chain", tuple(prompt), (gold,), (values[-1],))


def multipath_instance(spec: TaskSpec, operands: Sequence[int]) -> TaskInstance:
    vocab = spec.build_vocab()
    m = spec.modulus
    n = len(operands)
    if n > MAX_OPERANDS:
        raise ValueError(f"operand_count > {MAX_OPERANDS} exceeds the order enumeration bound")
    prompt = tuple(vocab.index(str(a % m)) for a in operands)
    golds = []
    for order in itertools.permutations(range(n)):
        acts, s = [], 0
        for i in order:
            s = (s + operands[i]) % m
            acts += [vocab.index(f"P{i + 1}"), vocab.index(str(s))]
        acts.append(vocab.index(str(s)))
        golds.append(tuple(acts))
    answer = (vocab.index(str(sum(operands) % m)),)
    return TaskInstance("multipath", prompt, tuple(golds), answer)


def _instance_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def gen_chain(spec: TaskSpec, count: int, seed: int, offset: int = 0) -> list[TaskInstance]:
    if spec.kind != "chain":
        raise ValueError("gen_chain needs a chain spec")
    out = []
    for idx in range(offset, offset + count):
        rng = _instance_rng(seed, idx)
        start = int(rng.integers(spec.modulus))
        mags = rng.integers(1, spec.max_step + 1, size=spec.chain_length)
        signs = rng.choice([-1, 1], size=spec.chain_length)
        out.append(chain_instance(spec, start, [int(a * s) for a, s in zip(mags, signs)]))
    return out


def gen_multipath(spec: TaskSpec, count: int, seed: int, offset: int = 0) -> list[TaskInstance]:
    if spec.kind != "multipath":
        raise ValueError("gen_multipath needs a multipath spec")
    out = []
    for idx in range(offset, offset + count):
        rng = _instance_rng(seed, idx)
        ops = [int(x) for x in rng.integers(spec.modulus, size=spec.operand_count)]
        out.append(multipath_instance(spec, ops))
    return out


def generate(spec: TaskSpec, count: int, seed: int, offset: int = 0) -> list[TaskInstance]:
    gen = gen_chain if spec.kind == "chain" else gen_multipath
    return gen(spec, count, seed, offset)


def instance_from_prompt(spec: TaskSpec, prompt: Sequence[int]) -> TaskInstance:
    """Regenerate an instance (and all its gold trajectories) from its prompt."""
    vocab = spec.build_vocab()
    syms = vocab.decode(prompt)
    if spec.kind == "chain":
        ops = [int(s) for s in syms[1:]]
        if len(ops) != spec.chain_length:
            raise ValueError("prompt length does not match chain_length")
        return chain_instance(spec, int(syms[0]), ops)
    if len(syms) != spec.operand_count:
        raise ValueError("prompt length does not match operand_count")
    return multipath_instance(spec, [int(s) for s in syms])


def valid_next(instance: TaskInstance, prefix: Prefix) -> set[int]:
    if tuple(prefix.prompt) != instance.prompt:
        raise ValueError("prefix prompt does not belong to this instance")
    done = tuple(prefix.generated)
    n = len(done)
    return {g[n] for g in instance.gold_trajectories if len(g) > n and g[:n] == done}


def final_answer_accuracy(policy: TabularPolicy, instances: Sequence[TaskInstance],
                          horizon: int | None = None) -> float:
    if not instances:
        warnings.warn("accuracy over an empty instance list is vacuously 1.0")
        return 1.0
    hits = 0
    for inst in instances:
        T = horizon or len(inst.gold_trajectories[0])
        traj = greedy_rollout(policy, inst.prompt, T)
        hits += inst.check(traj.actions)
    return hits / len(instances)


def fit_teacher(spec: TaskSpec, train_instances: Sequence[TaskInstance], epochs: int,
                lr: float = 0.1, window: int = 4, seed: int = 0,
                optimizer: str = "adam") -> tuple[TabularPolicy, float]:
    """Cross-entropy fit of a tabular policy on gold trajectories.

    Each epoch is one full-batch step; multipath instances contribute one
    uniformly sampled gold order per epoch. The per-state gradient is the mean
    over that state's occurrences (q - empirical target frequencies), so rare
    and common states move alike.
    """
    vocab = spec.build_vocab()
    policy = TabularPolicy(vocab, window, pad_token=vocab.index(PAD))
    opt = OptimizerState(kind=optimizer, learning_rate=lr)
    rng = np.random.default_rng([seed, 0x5F7])
    V = len(vocab)

    # teacher forcing: every (state, target) pair is fixed per gold trajectory
    key_ids: dict[tuple, int] = {}
    per_inst = []
    for inst in train_instances:
        options = []
        for gold in inst.gold_trajectories:
            prefix, rows = Prefix(inst.prompt), []
            for a in gold:
                key = policy.state_key(prefix)
                rows.append((key_ids.setdefault(key, len(key_ids)), a))
                prefix = prefix.extend(a)
            options.append(rows)
        per_inst.append(options)
    keys = list(key_ids)
    fixed = all(len(o) == 1 for o in per_inst)
    freq = None
    for epoch in range(epochs):
        if freq is None or not fixed:
            targets = np.zeros((len(keys), V))
            for options in per_inst:
                rows = options[int(rng.integers(len(options)))] if len(options) > 1 else options[0]
                for k, a in rows:
                    targets[k, a] += 1.0
            counts = targets.sum(axis=1)
            freq = targets / np.maximum(counts, 1.0)[:, None]
            active = [(i, key) for i, key in enumerate(keys) if counts[i] > 0]
        grads = {}
        for i, key in active:
            z = policy.state_logits(key)
            if not np.all(np.isfinite(z)):
                raise FloatingPointError(f"fit diverged at epoch {epoch}, state {vocab.decode(key)}")
            grads[key] = softmax(z) - freq[i]
        apply_update(policy, grads, opt)
    acc = final_answer_accuracy(policy, train_instances, spec.horizon)
    return policy, acc


def write_dataset(spec: TaskSpec, instances: Sequence[TaskInstance]) -> str:
    vocab = spec.build_vocab()
    lines = []
    for inst in instances:
        lines.append(" ".join(vocab.decode(inst.prompt)) + f" | {len(inst.gold_trajectories)} | "
                     + " ".join(vocab.decode(inst.answer)))
    return "\n".join(lines) + ("\n" if lines else "")


def read_dataset(spec: TaskSpec, text: str) -> list[TaskInstance]:
    vocab = spec.build_vocab()
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = [p.strip() for p in line.split("|")]
        if len(parts) != 3:
            raise ValueError(f"dataset line {lineno}: expected 3 '|'-separated fields")
        try:
            inst = instance_from_prompt(spec, vocab.encode(parts[0].split()))
            n_gold = int(parts[1])
            answer = vocab.encode(parts[2].split())
        except (KeyError, ValueError) as exc:
            raise ValueError(f"dataset line {lineno}: {exc}") from None
        if n_gold != len(inst.gold_trajectories) or answer != inst.answer:
            raise ValueError(f"dataset line {lineno}: gold count or answer inconsistent with prompt")
        out.append(inst)
    return out
