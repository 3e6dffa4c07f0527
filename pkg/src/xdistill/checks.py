"""Gradient-oracle runner and the sequence-length scaling benchmark."""
from __future__ import annotations

import math
import time

import numpy as np

from .autodiff import Tensor, finite_difference_check, no_grad, ops
from .distill.losses import DistillWeights, combined_loss, cross_entropy, frobenius_loss, kd_loss
from .distill.student import StudentConfig, init_student_from_teacher
from .teacher import AttentionBlock, TeacherConfig, TeacherModel, causal_attention, layerwise_mean_hidden
from .xlstm import (
    MLSTMParams,
    MLSTMState,
    SLSTMParams,
    SLSTMState,
    VanillaLSTMParams,
    build_stack,
    mlstm_step,
    slstm_step,
    vanilla_lstm_step,
)

GRADCHECK_COMPONENTS = ("vanilla_lstm", "slstm", "mlstm", "attention", "combined_loss")


def _probe(rng, shape) -> Tensor:
    # random read-out weights keep the scalar loss from having symmetric cancellations
    return Tensor(rng.normal(size=shape))


def _check_vanilla(rng, tol):
    d_in, d_h, bsz, steps = 5, 4, 2, 3
    p = VanillaLSTMParams.init(d_in, d_h, rng)
    xs = [Tensor(rng.normal(size=(bsz, d_in))) for _ in range(steps)]
    w = _probe(rng, (bsz, d_h))

    def f():
        c = h = Tensor(np.zeros((bsz, d_h)))
        for x in xs:
            c, h = vanilla_lstm_step(p, x, (c, h))
        return ops.sum(h * w)

    return finite_difference_check(f, p.tensors() + xs, tol=tol)


def _check_slstm(rng, tol):
    d, heads, bsz, steps = 8, 2, 2, 4
    p = SLSTMParams.init(d, heads, rng, forget_bias=0.0)
    xs = [Tensor(rng.normal(size=(bsz, d))) for _ in range(steps)]
    w = _probe(rng, (bsz, d))

    def f():
        s = SLSTMState.zeros(bsz, d)
        for x in xs:
            s = slstm_step(p, x, s)
        return ops.sum(s.h * w)

    return finite_difference_check(f, p.tensors() + xs, tol=tol)


def _check_mlstm(rng, tol):
    d, heads, bsz, steps = 8, 2, 2, 3
    p = MLSTMParams.init(d, heads, rng)
    xs = [Tensor(rng.normal(size=(bsz, d))) for _ in range(steps)]
    w = _probe(rng, (bsz, d))

    def f():
        s = MLSTMState.zeros(bsz, heads, d // heads)
        out = None
        for x in xs:
            s, h = mlstm_step(p, x, s)
            out = h
        return ops.sum(out * w)

    return finite_difference_check(f, p.tensors() + xs, tol=tol)


def _check_attention(rng, tol):
    cfg = TeacherConfig(vocab=5, d_model=16, n_layers=1, n_heads=2, max_seq=4)
    layer = AttentionBlock(cfg, rng)
    x = Tensor(rng.normal(size=(2, 4, 16)))
    w = _probe(rng, (2, 4, 16))
    params = [layer.W_q, layer.W_k, layer.W_v, layer.W_o, x]
    return finite_difference_check(lambda: ops.sum(causal_attention(x, layer) * w), params, tol=tol)


def _check_combined(rng, tol):
    vocab, d = 7, 8
    teacher = TeacherModel(TeacherConfig(vocab=vocab, d_model=d, n_layers=2, n_heads=2, max_seq=4),
                           seed=int(rng.integers(1 << 31)))
    teacher.freeze()
    student, _ = init_student_from_teacher(teacher, StudentConfig(2, 2, d, vocab), seed=int(rng.integers(1 << 31)))
    tokens = rng.integers(1, vocab, size=(2, 4))
    targets = rng.integers(1, vocab, size=(2, 4))
    weights = DistillWeights(alpha_k=0.3, temp_k=1.7, beta_k=0.1)
    with no_grad():
        t_logits, capture = teacher.forward(tokens)
        h_bar = layerwise_mean_hidden(capture)

    def f():
        s_logits, h_s = student.forward(tokens)
        return combined_loss(
            cross_entropy(s_logits, targets),
            kd_loss(t_logits, s_logits, weights.temp_k),
            frobenius_loss(h_bar, h_s),
            weights,
            h_s.size,
        )

    return finite_difference_check(f, student.trainable_parameters(), tol=tol)


_RUNNERS = {
    "vanilla_lstm": _check_vanilla,
    "slstm": _check_slstm,
    "mlstm": _check_mlstm,
    "attention": _check_attention,
    "combined_loss": _check_combined,
}


def run_gradchecks(seed: int = 0, tol: float = 1e-4) -> dict[str, float]:
    """Max relative error per component on tiny randomized configurations."""
    out = {}
    for name in GRADCHECK_COMPONENTS:
        rng = np.random.default_rng([seed, GRADCHECK_COMPONENTS.index(name)])
        out[name] = _RUNNERS[name](rng, tol).worst
    return out


def _best_time(fn, repeats: int, budget: float = 0.25) -> float:
    """Minimum wall time over at least ``repeats`` calls, continuing until ``budget`` seconds are spent."""
    best = math.inf
    spent = 0.0
    n = 0
    while n < repeats or spent < budget:
        t0 = time.perf_counter()
        fn()
        dt = time.perf_counter() - t0
        best = min(best, dt)
        spent += dt
        n += 1
    return best


def loglog_slope(lengths, times) -> float:
    return float(np.polyfit(np.log(lengths), np.log(times), 1)[0])


def scaling_benchmark(lengths, d_model: int = 64, n_heads_teacher: int = 6, n_blocks: int = 2,
                      n_heads_student: int = 8, repeats: int = 3, seed: int = 0) -> dict:
    """Forward wall time of one causal attention layer and of the xLSTM stack per length.

    Returns ``{"rows": [...], "attention_slope": s_a, "stack_slope": s_x}`` where
    slopes are least-squares fits of log time against log length.
    """
    lengths = [int(s) for s in lengths]
    rng = np.random.default_rng(seed)
    cfg = TeacherConfig(vocab=2, d_model=d_model, n_layers=1, n_heads=n_heads_teacher, max_seq=max(lengths))
    layer = AttentionBlock(cfg, rng)
    stack = build_stack(d_model, n_blocks, n_heads_student, seed)
    rows = []
    with no_grad():
        for s in lengths:
            x = Tensor(rng.normal(size=(1, s, d_model)))
            causal_attention(x, layer)
            t_att = _best_time(lambda: causal_attention(x, layer), repeats)
            t_stack = _best_time(lambda: stack.forward(x), max(1, repeats - 1))
            rows.append({"seq_len": s, "attention_ms": t_att * 1e3, "stack_ms": t_stack * 1e3})
    return {
        "rows": rows,
        "attention_slope": loglog_slope(lengths, [r["attention_ms"] for r in rows]),
        "stack_slope": loglog_slope(lengths, [r["stack_ms"] for r in rows]),
    }
