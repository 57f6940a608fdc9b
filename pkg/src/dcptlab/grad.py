"""Scalar losses with hand-derived gradients, AdamW, and a finite-difference checker.

Every loss accepts either one sample (1-D inputs) or a batch (2-D, one row
per sample). Batched losses are per-sample means, so the returned gradients
carry the ``1 / batch`` factor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericError, ParameterError

PROB_FLOOR = 1e-12
NORM_EPS = 1e-12


def _as_batch(x, name: str) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite values")
    if arr.ndim == 1:
        return arr[None, :], True
    if arr.ndim != 2:
        raise ContractError(f"{name} must be 1-D or 2-D, got shape {arr.shape}")
    return arr, False


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def softmax_ce(logits, label):
    """Cross-entropy of softmax(logits) against an integer label.

    Returns:
        ``(loss, dloss_dlogits)``; the gradient is ``softmax - onehot``
        (divided by the batch size for batched input).
    """
    z, single = _as_batch(logits, "logits")
    y = np.atleast_1d(np.asarray(label))
    if y.shape != (z.shape[0],):
        raise ContractError(f"{y.shape[0]} labels for {z.shape[0]} logit rows")
    if np.any((y < 0) | (y >= z.shape[1])):
        raise ParameterError(f"labels must be in 0..{z.shape[1] - 1}")
    n = z.shape[0]
    rows = np.arange(n)
    loss = -log_softmax(z)[rows, y]
    grad = softmax(z)
    grad[rows, y] -= 1.0
    grad /= n
    if single:
        return float(loss[0]), grad[0]
    return float(loss.mean()), grad


def cosine_distance_loss(a, b):
    """``1 - cos(a, b)``, bounded in [0, 2], with gradients for both inputs.

    Raises:
        NumericError: if any row of ``a`` or ``b`` has norm at most 1e-12. The
            message names the offending sample index.
    """
    a2, single = _as_batch(a, "a")
    b2, _ = _as_batch(b, "b")
    if a2.shape != b2.shape:
        raise ContractError(f"shape mismatch {a2.shape} vs {b2.shape}")
    na = np.sqrt(np.einsum("ij,ij->i", a2, a2))
    nb = np.sqrt(np.einsum("ij,ij->i", b2, b2))
    bad = np.flatnonzero((na <= NORM_EPS) | (nb <= NORM_EPS))
    if bad.size:
        raise NumericError(f"near-zero vector norm at sample {int(bad[0])}")
    ua = a2 / na[:, None]
    ub = b2 / nb[:, None]
    cos = np.einsum("ij,ij->i", ua, ub)
    # rounding can push |cos| a few ulps past 1; the gradient uses the raw value
    loss = 1.0 - np.clip(cos, -1.0, 1.0)
    n = a2.shape[0]
    ga = -(ub - cos[:, None] * ua) / (na[:, None] * n)
    gb = -(ua - cos[:, None] * ub) / (nb[:, None] * n)
    if single:
        return float(loss[0]), ga[0], gb[0]
    return float(loss.mean()), ga, gb


def symmetric_kl_loss(logits_clean, logits_deg):
    """``KL(sg[p_c] || p_d) + KL(p_d || sg[p_c])`` on softmax outputs.

    The clean distribution is a constant (stop-gradient), so only the gradient
    with respect to the degraded logits is returned. Probabilities are floored
    at 1e-12 before use; the floor blocks gradient where it is active.
    """
    zc, single = _as_batch(logits_clean, "logits_clean")
    zd, _ = _as_batch(logits_deg, "logits_deg")
    if zc.shape != zd.shape:
        raise ContractError(f"shape mismatch {zc.shape} vs {zd.shape}")
    pc = np.maximum(softmax(zc), PROB_FLOOR)
    raw_d = softmax(zd)
    pd = np.maximum(raw_d, PROB_FLOOR)
    log_ratio = np.log(pd) - np.log(pc)
    per_sample = np.sum((pd - pc) * log_ratio, axis=1)
    n = zc.shape[0]
    # d/dp_d of sum_k (p_d - p_c)(log p_d - log p_c)
    dp = (log_ratio + 1.0 - pc / pd) * (raw_d > PROB_FLOOR)
    grad = raw_d * (dp - np.sum(raw_d * dp, axis=1, keepdims=True)) / n
    if single:
        return float(per_sample[0]), grad[0]
    return float(per_sample.mean()), grad


@dataclass
class AdamWState:
    """First/second moments keyed by parameter name, plus the step counter."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamWState":
        return cls(
            m={k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()},
            v={k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()},
            t=0,
        )


def adamw_step(
    params: dict,
    grads: dict,
    state: AdamWState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> tuple[dict, AdamWState]:
    """One AdamW update with decoupled weight decay.

    Inputs are left untouched; new parameter and state objects are returned.
    """
    if set(params) != set(grads):
        raise ContractError(f"parameter names {sorted(params)} != gradient names {sorted(grads)}")
    if state.t < 0:
        raise ContractError(f"step counter must be >= 0, got {state.t}")
    if not state.m:
        state = AdamWState.zeros_like(params)
    t = state.t + 1
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        p = np.asarray(p, dtype=np.float64)
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise ContractError(f"{name}: shape mismatch {p.shape} vs {g.shape}")
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        decayed = p - lr * weight_decay * p
        new_params[name] = decayed - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamWState(new_m, new_v, t)


def finite_diff_check(f, x, analytic_grad, h: float = 1e-6) -> float:
    """Largest relative error between ``analytic_grad`` and central differences.

    The relative error of coordinate ``i`` uses the denominator
    ``max(|analytic_i|, |numeric_i|, 1e-8)``.
    """
    if not h > 0:
        raise ParameterError(f"step h must be positive, got {h}")
    x = np.array(x, dtype=np.float64)
    g = np.asarray(analytic_grad, dtype=np.float64).reshape(x.shape)
    flat = x.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        numeric = (fp - fm) / (2.0 * h)
        analytic = g.reshape(-1)[i]
        denom = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst
