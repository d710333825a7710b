"""Truncated-window tabular softmax policies.

A policy stores one logit vector per window state, where the state is the
last ``window`` token indices of (prompt + generated), left-padded with the
pad token. States are created lazily; an unseen state has zero logits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .divergence import softmax

CKPT_MAGIC = "VCRD-CKPT v1"


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if len(self.tokens) < 2:
            raise ValueError("vocabulary needs at least 2 symbols")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate symbols in vocabulary")
        for tok in self.tokens:
            if not tok or any(c in tok for c in ", |\n"):
                raise ValueError(f"invalid symbol {tok!r}")

    def __len__(self) -> int:
        return len(self.tokens)

    def index(self, symbol: str) -> int:
        try:
            return self.tokens.index(symbol)
        except ValueError:
            raise KeyError(f"unknown symbol {symbol!r}") from None

    def encode(self, symbols: Iterable[str]) -> tuple[int, ...]:
        return tuple(self.index(s) for s in symbols)

    def decode(self, indices: Iterable[int]) -> tuple[str, ...]:
        return tuple(self.tokens[i] for i in indices)


@dataclass(frozen=True)
class Prefix:
    prompt: tuple[int, ...]
    generated: tuple[int, ...] = ()

    @property
    def tokens(self) -> tuple[int, ...]:
        return self.prompt + self.generated

    def extend(self, token: int) -> "Prefix":
        return Prefix(self.prompt, self.generated + (int(token),))


@dataclass(frozen=True)
class Trajectory:
    prompt: tuple[int, ...]
    actions: tuple[int, ...]
    logprobs: tuple[float, ...]

    def __post_init__(self):
        if len(self.actions) != len(self.logprobs):
            raise ValueError("actions and logprobs differ in length")

    def __len__(self) -> int:
        return len(self.actions)

    def prefix(self, t: int) -> Prefix:
        """Context before action ``t`` (0-based)."""
        return Prefix(self.prompt, self.actions[:t])


class TabularPolicy:
    """Autoregressive policy with one logit vector per window state."""

    def __init__(self, vocab: Vocab, window: int, pad_token: int = 0, logits=None):
        if window < 1:
            raise ValueError("window must be >= 1")
        if not 0 <= pad_token < len(vocab):
            raise ValueError("pad token outside vocabulary")
        self.vocab = vocab
        self.V = len(vocab)
        self.window = int(window)
        self.pad_token = int(pad_token)
        self.logits: dict[tuple[int, ...], np.ndarray] = {}
        for key, vec in (logits or {}).items():
            self.logits[tuple(key)] = np.array(vec, dtype=float)
        # key -> (logit array it was computed from, probabilities)
        self._probs: dict[tuple[int, ...], tuple[np.ndarray, np.ndarray]] = {}
        self._uniform = np.full(self.V, 1.0 / self.V)

    def state_key(self, prefix: Prefix | Sequence[int]) -> tuple[int, ...]:
        toks = prefix.tokens if isinstance(prefix, Prefix) else tuple(prefix)
        tail = tuple(toks[-self.window:]) if toks else ()
        if tail and (min(tail) < 0 or max(tail) >= self.V):
            bad = next(t for t in tail if not 0 <= t < self.V)
            raise IndexError(f"token index {bad} outside vocabulary of size {self.V}")
        return (self.pad_token,) * (self.window - len(tail)) + tail

    def state_logits(self, key: tuple[int, ...]) -> np.ndarray:
        vec = self.logits.get(key)
        return np.zeros(self.V) if vec is None else vec

    def state_dist(self, key: tuple[int, ...]) -> np.ndarray:
        vec = self.logits.get(key)
        if vec is None:
            return self._uniform.copy()
        hit = self._probs.get(key)
        if hit is not None and hit[0] is vec:
            return hit[1].copy()
        p = softmax(vec)
        self._probs[key] = (vec, p)
        return p.copy()

    def next_dist(self, prefix) -> np.ndarray:
        return self.state_dist(self.state_key(prefix))

    def copy(self) -> "TabularPolicy":
        return TabularPolicy(self.vocab, self.window, self.pad_token,
                             {k: v.copy() for k, v in self.logits.items()})

    def __eq__(self, other):
        if not isinstance(other, TabularPolicy):
            return NotImplemented
        return (self.vocab == other.vocab and self.window == other.window
                and self.pad_token == other.pad_token
                and self.logits.keys() == other.logits.keys()
                and all(np.array_equal(v, other.logits[k]) for k, v in self.logits.items()))


def _draw(p: np.ndarray, u: float) -> int:
    # inverse-CDF draw; one uniform per step keeps coupled rollouts aligned
    idx = int(np.searchsorted(np.cumsum(p), u * p.sum(), side="right"))
    return min(idx, len(p) - 1)


def sample_rollout(policy: TabularPolicy, prompt: Sequence[int], horizon: int,
                   rng: np.random.Generator) -> Trajectory:
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    prefix = Prefix(tuple(int(t) for t in prompt))
    policy.state_key(prefix)
    actions, logprobs = [], []
    for _ in range(horizon):
        p = policy.next_dist(prefix)
        a = _draw(p, rng.random())
        actions.append(a)
        logprobs.append(math.log(p[a]) if p[a] > 0 else -math.inf)
        prefix = prefix.extend(a)
    return Trajectory(prefix.prompt, tuple(actions), tuple(logprobs))


def greedy_rollout(policy: TabularPolicy, prompt: Sequence[int], horizon: int) -> Trajectory:
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    prefix = Prefix(tuple(int(t) for t in prompt))
    actions, logprobs = [], []
    for _ in range(horizon):
        p = policy.next_dist(prefix)
        a = int(np.argmax(p))  # first maximum: lowest index wins ties
        actions.append(a)
        logprobs.append(math.log(p[a]))
        prefix = prefix.extend(a)
    return Trajectory(prefix.prompt, tuple(actions), tuple(logprobs))


@dataclass
class OptimizerState:
    kind: str = "sgd"
    learning_rate: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")


def apply_update(policy: TabularPolicy, grads: dict, opt: OptimizerState):
    """One descent step on the states in ``grads``; mutates and returns both.

    Adam is applied lazily: states absent from ``grads`` keep their logits and
    moments, so untouched states are never moved.
    """
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(
                f"non-finite gradient at state {policy.vocab.decode(key)}")
    opt.step += 1
    lr = opt.learning_rate
    for key in sorted(grads):
        g = np.asarray(grads[key], dtype=float)
        if len(key) != policy.window or g.shape != (policy.V,):
            raise ValueError(f"gradient for state {key} has wrong shape")
        cur = policy.state_logits(key)
        if opt.kind == "sgd":
            policy.logits[key] = cur - lr * g
            continue
        m = opt.beta1 * opt.m.get(key, 0.0) + (1 - opt.beta1) * g
        v = opt.beta2 * opt.v.get(key, 0.0) + (1 - opt.beta2) * g * g
        opt.m[key], opt.v[key] = m, v
        m_hat = m / (1 - opt.beta1 ** opt.step)
        v_hat = v / (1 - opt.beta2 ** opt.step)
        policy.logits[key] = cur - lr * m_hat / (np.sqrt(v_hat) + opt.eps)
    return policy, opt


def save_checkpoint(policy: TabularPolicy) -> str:
    lines = [
        CKPT_MAGIC,
        "vocab=" + ",".join(policy.vocab.tokens),
        f"window={policy.window} pad={policy.pad_token}",
    ]
    for key in sorted(policy.logits):
        vec = policy.logits[key]
        lines.append(" ".join(map(str, key)) + " | " + " ".join(repr(float(x)) for x in vec))
    return "\n".join(lines) + "\n"


def load_checkpoint(text: str) -> TabularPolicy:
    lines = text.splitlines()
    if not lines or lines[0].strip() != CKPT_MAGIC:
        found = lines[0].strip() if lines else "<empty>"
        raise CheckpointError(f"unsupported checkpoint version: {found!r} (expected {CKPT_MAGIC!r})")
    if len(lines) < 3 or not lines[1].startswith("vocab="):
        raise CheckpointError("malformed checkpoint header: missing vocab line")
    vocab = Vocab(tuple(lines[1][len("vocab="):].split(",")))
    try:
        w_part, pad_part = lines[2].split()
        if not (w_part.startswith("window=") and pad_part.startswith("pad=")):
            raise ValueError
        window = int(w_part[len("window="):])
        pad = int(pad_part[len("pad="):])
    except ValueError:
        raise CheckpointError(f"malformed checkpoint header line 3: {lines[2]!r}") from None
    policy = TabularPolicy(vocab, window, pad)
    for lineno, line in enumerate(lines[3:], start=4):
        if not line.strip():
            continue
        try:
            left, right = line.split("|")
            key = tuple(int(x) for x in left.split())
            vec = np.array([float(x) for x in right.split()])
        except ValueError:
            raise CheckpointError(f"malformed row at line {lineno}") from None
        if len(key) != window or vec.shape != (len(vocab),) or not np.all(np.isfinite(vec)):
            raise CheckpointError(f"malformed row at line {lineno}")
        if any(not 0 <= t < len(vocab) for t in key):
            raise CheckpointError(f"token index out of range at line {lineno}")
        if key in policy.logits:
            raise CheckpointError(f"duplicate state key {key} at line {lineno}")
        policy.logits[key] = vec
    return policy
