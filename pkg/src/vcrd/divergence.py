"""Exact categorical divergences and their gradients with respect to logits.

All quantities are in nats. Probabilities are floored at ``PROB_FLOOR`` only
inside logarithms; stored distributions are never modified.
"""

from __future__ import annotations

import math

import numpy as np

PROB_FLOOR = 1e-12


def _as_pair(p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape or p.ndim != 1:
        raise ValueError(f"dimension mismatch: {p.shape} vs {q.shape}")
    return p, q


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha


def _log(x):
    return np.log(np.maximum(x, PROB_FLOOR))


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    zmax, zmin = z.max(), z.min()
    if not (math.isfinite(zmax) and math.isfinite(zmin)):
        raise ValueError("non-finite logits")
    e = np.exp(z - zmax)
    return e / e.sum()


def is_categorical(p, tol: float = 1e-12) -> bool:
    p = np.asarray(p, dtype=float)
    return p.ndim == 1 and bool(np.all(p >= 0)) and abs(p.sum() - 1.0) <= tol


def kl(p, q) -> float:
    """KL(p || q) with 0 log 0 = 0."""
    p, q = _as_pair(p, q)
    mask = p > 0
    val = float(np.sum(p[mask] * (_log(p[mask]) - _log(q[mask]))))
    return max(val, 0.0)


def skew_mixture(p, q, alpha: float) -> np.ndarray:
    """alpha * p + (1 - alpha) * q."""
    p, q = _as_pair(p, q)
    alpha = _check_alpha(alpha)
    return alpha * p + (1.0 - alpha) * q


def skl(p, q, alpha: float) -> float:
    """Skew KL: KL(p || alpha p + (1 - alpha) q)."""
    alpha = _check_alpha(alpha)
    if alpha == 1.0:
        _as_pair(p, q)
        return 0.0
    return kl(p, skew_mixture(p, q, alpha))


def srkl(p, q, alpha: float) -> float:
    """Skew reverse KL: KL(q || (1 - alpha) p + alpha q)."""
    alpha = _check_alpha(alpha)
    if alpha == 1.0:
        _as_pair(p, q)
        return 0.0
    return kl(q, skew_mixture(q, p, alpha))


def _softmax_backward(q: np.ndarray, g: np.ndarray) -> np.ndarray:
    # d/dz_k of f(softmax(z)) = q_k (g_k - <q, g>)
    return q * (g - np.dot(q, g))


def skl_grad_logits(p, student_logits, alpha: float) -> np.ndarray:
    """Gradient of ``skl(p, softmax(logits), alpha)`` w.r.t. the logits."""
    alpha = _check_alpha(alpha)
    q = softmax(student_logits)
    p, q = _as_pair(p, q)
    if alpha == 1.0:
        return np.zeros_like(q)
    m = alpha * p + (1.0 - alpha) * q
    g = -(1.0 - alpha) * p / np.maximum(m, PROB_FLOOR)
    return _softmax_backward(q, g)


def srkl_grad_logits(p, student_logits, alpha: float) -> np.ndarray:
    """Gradient of ``srkl(p, softmax(logits), alpha)`` w.r.t. the logits.

    q enters both the outer expectation and the mixture, so
    dL/dq_j = log q_j + 1 - log n_j - alpha q_j / n_j with n = (1-alpha) p + alpha q.
    """
    alpha = _check_alpha(alpha)
    q = softmax(student_logits)
    p, q = _as_pair(p, q)
    if alpha == 1.0:
        return np.zeros_like(q)
    n = (1.0 - alpha) * p + alpha * q
    g = _log(q) + 1.0 - _log(n) - alpha * q / np.maximum(n, PROB_FLOOR)
    return _softmax_backward(q, g)


def kl_grad_logits(p, student_logits) -> np.ndarray:
    """Gradient of forward KL(p || softmax(logits)): softmax(logits) - p."""
    q = softmax(student_logits)
    p, q = _as_pair(p, q)
    return q - p


def _rows_softmax(Z: np.ndarray) -> np.ndarray:
    E = np.exp(Z - Z.max(axis=1, keepdims=True))
    return E / E.sum(axis=1, keepdims=True)


def skl_rows(P: np.ndarray, Z: np.ndarray, alpha: float):
    """Row-wise ``skl`` and ``skl_grad_logits`` for stacked teacher rows P and student logits Z."""
    Q = _rows_softmax(Z)
    if alpha == 1.0:
        return np.zeros(len(P)), np.zeros_like(Q)
    M = alpha * P + (1.0 - alpha) * Q
    logM = _log(M)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(P > 0, P * (_log(P) - logM), 0.0)
    vals = np.maximum(terms.sum(axis=1), 0.0)
    G = -(1.0 - alpha) * P / np.maximum(M, PROB_FLOOR)
    return vals, Q * (G - np.sum(Q * G, axis=1, keepdims=True))


def srkl_rows(P: np.ndarray, Z: np.ndarray, alpha: float):
    """Row-wise ``srkl`` and ``srkl_grad_logits``."""
    Q = _rows_softmax(Z)
    if alpha == 1.0:
        return np.zeros(len(P)), np.zeros_like(Q)
    N = (1.0 - alpha) * P + alpha * Q
    logQ, logN = _log(Q), _log(N)
    terms = np.where(Q > 0, Q * (logQ - logN), 0.0)
    vals = np.maximum(terms.sum(axis=1), 0.0)
    G = logQ + 1.0 - logN - alpha * Q / np.maximum(N, PROB_FLOOR)
    return vals, Q * (G - np.sum(Q * G, axis=1, keepdims=True))
