"""Cross-entropy, soft-target KL, Frobenius alignment and their weighted sum."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor, ops


@dataclass(frozen=True)
class DistillWeights:
    alpha_k: float
    temp_k: float
    beta_k: float = 0.0

    def __post_init__(self):
        if self.alpha_k < 0 or self.beta_k < 0:
            raise ValueError("loss weights must be non-negative")
        if self.alpha_k + self.beta_k > 1.0 + 1e-12:
            raise ValueError(f"alpha_k + beta_k = {self.alpha_k + self.beta_k} exceeds 1")
        if not self.temp_k > 0:
            raise ValueError("temperature must be positive")


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of ``targets`` over every position."""
    targets = np.asarray(targets, dtype=np.int64)
    logp = ops.log_softmax_rows(logits)
    return ops.scale(ops.mean(ops.pick_last(logp, targets)), -1.0)


def kd_loss(logits_t, logits_s: Tensor, temperature: float) -> Tensor:
    """Mean over positions of ``KL(softmax(z_t/T) || softmax(z_s/T))``.

    The teacher side is treated as a constant.  The ``T**2`` factor is left to
    the caller.
    """
    zt = logits_t.data if isinstance(logits_t, Tensor) else np.asarray(logits_t, dtype=np.float64)
    if zt.shape != logits_s.shape:
        raise ValueError(f"teacher logits {list(zt.shape)} vs student {list(logits_s.shape)}")
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    log_pt = ops.log_softmax_np(zt, temperature)
    pt = np.exp(log_pt)
    log_ps = ops.log_softmax_rows(logits_s, temperature)
    n_pos = math.prod(zt.shape[:-1])
    # sum p_t log p_t is a constant; only the cross term carries gradient
    neg_entropy = float(np.sum(pt * log_pt)) / n_pos
    cross = ops.sum(ops.mul(Tensor(pt), log_ps))
    return ops.add(ops.scale(cross, -1.0 / n_pos), neg_entropy)


def frobenius_loss(h_teacher_mean, h_s: Tensor) -> Tensor:
    """``(1/B) sum_i ||h_t_mean[i] - h_s[i]||_F`` over ``[S, D]`` slices (un-normalised)."""
    ht = h_teacher_mean.data if isinstance(h_teacher_mean, Tensor) else np.asarray(h_teacher_mean, dtype=np.float64)
    if ht.shape != h_s.shape:
        raise ValueError(f"teacher state {list(ht.shape)} vs student {list(h_s.shape)}")
    diff = ops.sub(Tensor(ht), h_s)
    per_sample = ops.frobenius_norm(diff, axis=tuple(range(1, diff.ndim)))
    return ops.mean(per_sample)


def combined_loss(ce: Tensor, kd: Tensor, frob: Tensor | None, weights: DistillWeights, h_s_numel: int,
                  t_squared: bool = True) -> Tensor:
    """``(1-a-b) CE + a T^2 KD + b frob / sqrt(numel)``.

    With ``b = 0`` this is the two-term time-varying loss; ``t_squared=False``
    drops the ``T^2`` factor from the soft-target term.
    """
    a, b, t = weights.alpha_k, weights.beta_k, weights.temp_k
    kd_scale = a * t * t if t_squared else a
    total = ops.add(ops.scale(ce, 1.0 - a - b), ops.scale(kd, kd_scale))
    if b > 0:
        if frob is None:
            raise ValueError("beta_k > 0 needs a Frobenius term")
        total = ops.add(total, ops.scale(frob, b / math.sqrt(h_s_numel)))
    return total


def combine_values(ce: float, kd: float, frob: float, alpha_k: float, temp_k: float, beta_k: float,
                   h_s_numel: int, t_squared: bool = True) -> float:
    """Plain-float version of :func:`combined_loss` for reconstructing logged totals."""
    kd_scale = alpha_k * temp_k * temp_k if t_squared else alpha_k
    out = (1.0 - alpha_k - beta_k) * ce + kd_scale * kd
    if beta_k > 0:
        out += beta_k * frob / math.sqrt(h_s_numel)
    return out
