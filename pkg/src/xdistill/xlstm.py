"""LSTM, sLSTM and mLSTM cells and the alternating xLSTM block stack.

Cells are pure functions of ``(params, input, state)``.  Inputs carry a
leading batch axis (``[B, D]``); a bare ``[D]`` vector is treated as ``B = 1``
and the returned hidden state is squeezed back.

Gate pre-activations that only depend on the input are computed for the whole
sequence up front inside :class:`XLSTMBlock`; only the recurrent part runs
step by step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Iterator

import numpy as np

from .autodiff import Tensor, ops

FORGET_KINDS = ("sigmoid", "exp")


def _param(rng: np.random.Generator, shape, std: float) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def _const(shape, value: float = 0.0) -> Tensor:
    return Tensor(np.full(shape, value))


def _as_batch(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 1:
        return ops.reshape(x, (1, x.shape[0])), True
    return x, False


class _ParamBag:
    """Mixin: iterate the tensor fields of a params dataclass by name."""

    def named(self) -> Iterator[tuple[str, Tensor]]:
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, Tensor):
                yield f.name, v

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named()]


# ---------------------------------------------------------------------------
# vanilla LSTM
# ---------------------------------------------------------------------------

@dataclass
class VanillaLSTMParams(_ParamBag):
    w_z: Tensor
    w_i: Tensor
    w_f: Tensor
    w_o: Tensor
    r_z: Tensor
    r_i: Tensor
    r_f: Tensor
    r_o: Tensor
    b_z: Tensor
    b_i: Tensor
    b_f: Tensor
    b_o: Tensor

    @classmethod
    def init(cls, d_in: int, d_h: int, rng: np.random.Generator) -> "VanillaLSTMParams":
        w = {f"w_{g}": _param(rng, (d_in, d_h), 1.0 / math.sqrt(d_in)) for g in "zifo"}
        r = {f"r_{g}": _param(rng, (d_h, d_h), 1.0 / math.sqrt(d_h)) for g in "zifo"}
        b = {f"b_{g}": _param(rng, (d_h,), 0.1) for g in "zifo"}
        return cls(**w, **r, **b)


def vanilla_lstm_step(params: VanillaLSTMParams, x_t: Tensor, state: tuple[Tensor, Tensor]):
    """One step of the classic LSTM: ``c' = f*c + i*z``, ``h' = o*tanh(c')``."""
    c, h = state
    p = params
    if x_t.shape[-1] != p.w_z.shape[0] or h.shape[-1] != p.r_z.shape[0]:
        raise ValueError("vanilla_lstm_step: input/state width does not match params")
    z = ops.tanh(ops.linear(x_t, p.w_z, p.b_z) + ops.linear(h, p.r_z))
    i = ops.sigmoid(ops.linear(x_t, p.w_i, p.b_i) + ops.linear(h, p.r_i))
    f = ops.sigmoid(ops.linear(x_t, p.w_f, p.b_f) + ops.linear(h, p.r_f))
    o = ops.sigmoid(ops.linear(x_t, p.w_o, p.b_o) + ops.linear(h, p.r_o))
    c_new = f * c + i * z
    h_new = o * ops.tanh(c_new)
    return c_new, h_new


# ---------------------------------------------------------------------------
# sLSTM
# ---------------------------------------------------------------------------

@dataclass
class SLSTMParams(_ParamBag):
    """Input weights ``w_* [D, D]``, per-head recurrent weights ``r_* [H, d, d]``."""

    w_z: Tensor
    w_i: Tensor
    w_f: Tensor
    w_o: Tensor
    r_z: Tensor
    r_i: Tensor
    r_f: Tensor
    r_o: Tensor
    b_z: Tensor
    b_i: Tensor
    b_f: Tensor
    b_o: Tensor

    @property
    def n_heads(self) -> int:
        return self.r_z.shape[0]

    @classmethod
    def init(cls, d: int, n_heads: int, rng: np.random.Generator, forget_bias: float = 2.0) -> "SLSTMParams":
        if d % n_heads:
            raise ValueError(f"width {d} is not divisible by {n_heads} heads")
        dh = d // n_heads
        w = {f"w_{g}": _param(rng, (d, d), 1.0 / math.sqrt(d)) for g in "zifo"}
        r = {f"r_{g}": _param(rng, (n_heads, dh, dh), 0.5 / math.sqrt(dh)) for g in "zifo"}
        b = {f"b_{g}": _param(rng, (d,), 0.1) for g in "zio"}
        b["b_f"] = Tensor(forget_bias + rng.normal(0.0, 0.1, size=d), requires_grad=True)
        return cls(**w, **r, b_z=b["b_z"], b_i=b["b_i"], b_f=b["b_f"], b_o=b["b_o"])


@dataclass
class SLSTMState:
    """Cell ``c``, normalizer ``n``, hidden ``h``; stabilizer ``m`` is ``None`` before step 1."""

    c: Tensor
    n: Tensor
    h: Tensor
    m: Tensor | None = None

    @classmethod
    def zeros(cls, batch: int, d: int) -> "SLSTMState":
        return cls(_const((batch, d)), _const((batch, d)), _const((batch, d)), None)


def log_forget(f_pre: Tensor, kind: str) -> Tensor:
    """``log f`` for a sigmoid or exponential forget gate, computed without overflow."""
    if kind == "sigmoid":
        return ops.log_sigmoid(f_pre)
    if kind == "exp":
        return f_pre
    raise ValueError(f"forget gate kind must be one of {FORGET_KINDS}, got {kind!r}")


def stabilized_gates(i_pre: Tensor, log_f: Tensor, m_prev: Tensor | None):
    """Return ``(m_t, i'_t, f'_t)``.

    ``m_t = max(log f + m_{t-1}, i~)``; ``i' = exp(i~ - m_t)``;
    ``f' = exp(log f + m_{t-1} - m_t)``.  With no previous stabilizer the
    forget path is treated as ``-inf`` so ``m_1 = i~_1`` and ``f'_1 = 0``.
    """
    if m_prev is None:
        m = i_pre
        return m, ops.exp(ops.sub(i_pre, m)), None
    lf_m = ops.add(log_f, m_prev)
    m = ops.maximum(lf_m, i_pre)
    return m, ops.exp(ops.sub(i_pre, m)), ops.exp(ops.sub(lf_m, m))


def _slstm_update(z_x, i_x, f_x, o_x, p: SLSTMParams, state: SLSTMState, forget: str) -> SLSTMState:
    h = state.h
    z = ops.tanh(z_x + ops.head_matmul(h, p.r_z))
    i_pre = i_x + ops.head_matmul(h, p.r_i)
    f_pre = f_x + ops.head_matmul(h, p.r_f)
    o = ops.sigmoid(o_x + ops.head_matmul(h, p.r_o))
    m, i_s, f_s = stabilized_gates(i_pre, log_forget(f_pre, forget), state.m)
    if f_s is None:
        c = i_s * z
        n = i_s
    else:
        c = f_s * state.c + i_s * z
        n = f_s * state.n + i_s
    if np.any(n.data <= 0):
        raise FloatingPointError("sLSTM normalizer reached zero")
    h_new = o * (c / n)
    return SLSTMState(c, n, h_new, m)


def slstm_step(params: SLSTMParams, x_t: Tensor, state: SLSTMState, forget: str = "sigmoid") -> SLSTMState:
    """One stabilized sLSTM step with block-diagonal (per-head) memory mixing.

    The returned ``c`` and ``n`` are scaled by ``exp(-m)`` relative to the
    unstabilized recursion; ``h = o * c / n`` is unaffected by that scaling.
    """
    x, squeeze = _as_batch(x_t)
    p = params
    if x.shape[-1] != p.w_z.shape[0]:
        raise ValueError(f"slstm_step: input width {x.shape[-1]} != {p.w_z.shape[0]}")
    new = _slstm_update(
        ops.linear(x, p.w_z, p.b_z),
        ops.linear(x, p.w_i, p.b_i),
        ops.linear(x, p.w_f, p.b_f),
        ops.linear(x, p.w_o, p.b_o),
        p,
        state,
        forget,
    )
    if squeeze:
        d = x.shape[-1]
        new = SLSTMState(*(ops.reshape(t, (d,)) if t is not None else None for t in (new.c, new.n, new.h, new.m)))
    return new


@dataclass
class NaiveSLSTMState:
    c: Tensor
    n: Tensor
    h: Tensor


def slstm_step_naive(params: SLSTMParams, x_t: Tensor, state: NaiveSLSTMState, forget: str = "sigmoid"):
    """Unstabilized reference recursion with raw ``exp`` gates (may overflow)."""
    x, _ = _as_batch(x_t)
    p = params
    h = state.h
    z = ops.tanh(ops.linear(x, p.w_z, p.b_z) + ops.head_matmul(h, p.r_z))
    i = ops.exp(ops.linear(x, p.w_i, p.b_i) + ops.head_matmul(h, p.r_i))
    f_pre = ops.linear(x, p.w_f, p.b_f) + ops.head_matmul(h, p.r_f)
    f = ops.sigmoid(f_pre) if forget == "sigmoid" else ops.exp(f_pre)
    o = ops.sigmoid(ops.linear(x, p.w_o, p.b_o) + ops.head_matmul(h, p.r_o))
    with np.errstate(invalid="ignore", over="ignore"):
        c = f * state.c + i * z
        n = f * state.n + i
        h_new = o * (c / n)
    return NaiveSLSTMState(c, n, h_new)


# ---------------------------------------------------------------------------
# mLSTM
# ---------------------------------------------------------------------------

@dataclass
class MLSTMParams(_ParamBag):
    """Per-head projections packed along the output axis (``[D, H*d]``)."""

    W_q: Tensor
    W_k: Tensor
    W_v: Tensor
    b_q: Tensor
    b_k: Tensor
    b_v: Tensor
    w_i: Tensor
    b_i: Tensor
    w_f: Tensor
    b_f: Tensor
    W_o: Tensor
    b_o: Tensor

    @property
    def n_heads(self) -> int:
        return self.w_i.shape[1]

    @property
    def head_dim(self) -> int:
        return self.W_q.shape[1] // self.n_heads

    @classmethod
    def init(cls, d: int, n_heads: int, rng: np.random.Generator, forget_bias: float = 2.0) -> "MLSTMParams":
        if d % n_heads:
            raise ValueError(f"width {d} is not divisible by {n_heads} heads")
        std = 1.0 / math.sqrt(d)
        return cls(
            W_q=_param(rng, (d, d), std),
            W_k=_param(rng, (d, d), std),
            W_v=_param(rng, (d, d), std),
            b_q=_param(rng, (d,), 0.02),
            b_k=_param(rng, (d,), 0.02),
            b_v=_param(rng, (d,), 0.02),
            w_i=_param(rng, (d, n_heads), 0.1 * std),
            b_i=_param(rng, (n_heads,), 0.1),
            w_f=_param(rng, (d, n_heads), 0.1 * std),
            b_f=Tensor(forget_bias + rng.normal(0.0, 0.1, size=n_heads), requires_grad=True),
            W_o=_param(rng, (d, d), std),
            b_o=_param(rng, (d,), 0.1),
        )


@dataclass
class MLSTMState:
    C: Tensor  # [B, H, d, d]
    n: Tensor  # [B, H, d]

    @classmethod
    def zeros(cls, batch: int, n_heads: int, head_dim: int) -> "MLSTMState":
        return cls(_const((batch, n_heads, head_dim, head_dim)), _const((batch, n_heads, head_dim)))


def mlstm_projections(p: MLSTMParams, x: Tensor):
    """Input-only quantities ``(q, k, v, i~, f~, o)`` for ``x [..., D]``."""
    d = p.head_dim
    q = ops.linear(x, p.W_q, p.b_q)
    kx = ops.scale(ops.linear(x, p.W_k), 1.0 / math.sqrt(d))
    k = kx + ops.broadcast_to(p.b_k, kx.shape)
    v = ops.linear(x, p.W_v, p.b_v)
    i_pre = ops.linear(x, p.w_i, p.b_i)
    f_pre = ops.linear(x, p.w_f, p.b_f)
    o = ops.sigmoid(ops.linear(x, p.W_o, p.b_o))
    return q, k, v, i_pre, f_pre, o


def _mlstm_update(q, k, v, i_pre, f_pre, o, state: MLSTMState, forget: str):
    bsz, nh, d = state.n.shape
    i = ops.exp(i_pre)
    if forget == "sigmoid":
        f = ops.sigmoid(f_pre)
    elif forget == "exp":
        f = ops.exp(f_pre)
    else:
        raise ValueError(f"forget gate kind must be one of {FORGET_KINDS}, got {forget!r}")
    q3 = ops.reshape(q, (bsz, nh, d))
    k3 = ops.reshape(k, (bsz, nh, d))
    f4 = ops.broadcast_to(ops.reshape(f, (bsz, nh, 1, 1)), (bsz, nh, d, d))
    i4 = ops.broadcast_to(ops.reshape(i, (bsz, nh, 1, 1)), (bsz, nh, d, d))
    vk = ops.matmul(ops.reshape(v, (bsz, nh, d, 1)), ops.reshape(k, (bsz, nh, 1, d)))
    C = f4 * state.C + i4 * vk
    f3 = ops.broadcast_to(ops.reshape(f, (bsz, nh, 1)), (bsz, nh, d))
    i3 = ops.broadcast_to(ops.reshape(i, (bsz, nh, 1)), (bsz, nh, d))
    n = f3 * state.n + i3 * k3
    num = ops.reshape(ops.matmul(C, ops.reshape(q, (bsz, nh, d, 1))), (bsz, nh, d))
    nq = ops.sum(n * q3, axis=-1)
    den = ops.max_with_scalar(ops.abs(nq), 1.0)
    h_tilde = num / ops.broadcast_to(ops.reshape(den, (bsz, nh, 1)), (bsz, nh, d))
    h = o * ops.reshape(h_tilde, (bsz, nh * d))
    return MLSTMState(C, n), h


def mlstm_step(params: MLSTMParams, x_t: Tensor, state: MLSTMState, forget: str = "sigmoid"):
    """One mLSTM step; returns ``(new_state, h_t)`` with ``h_t`` of width ``H*d``.

    ``C_t = f C + i v k^T``, ``n_t = f n + i k``,
    ``h_t = o * C_t q / max(|n_t . q|, 1)`` per head.
    """
    x, squeeze = _as_batch(x_t)
    if x.shape[-1] != params.W_q.shape[0]:
        raise ValueError(f"mlstm_step: input width {x.shape[-1]} != {params.W_q.shape[0]}")
    if state.n.shape[0] != x.shape[0]:
        raise ValueError("mlstm_step: state batch does not match input batch")
    new, h = _mlstm_update(*mlstm_projections(params, x), state, forget)
    if squeeze:
        h = ops.reshape(h, (h.shape[-1],))
    return new, h


# ---------------------------------------------------------------------------
# block stack
# ---------------------------------------------------------------------------

class XLSTMBlock:
    """Pre-norm residual wrapper: ``x + proj(cell(layer_norm(x)))``."""

    def __init__(self, kind: str, d: int, n_heads: int, rng: np.random.Generator, forget: str = "sigmoid"):
        if kind not in ("slstm", "mlstm"):
            raise ValueError(f"unknown block kind {kind!r}")
        self.kind = kind
        self.d = d
        self.forget = forget
        self.ln_g = Tensor(np.ones(d), requires_grad=True)
        self.ln_b = Tensor(np.zeros(d), requires_grad=True)
        self.cell = SLSTMParams.init(d, n_heads, rng) if kind == "slstm" else MLSTMParams.init(d, n_heads, rng)
        self.proj_w = _param(rng, (d, d), 0.5 / math.sqrt(d))
        self.proj_b = Tensor(np.zeros(d), requires_grad=True)

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        yield "ln_g", self.ln_g
        yield "ln_b", self.ln_b
        for name, t in self.cell.named():
            yield f"{self.kind}.{name}", t
        yield "proj_w", self.proj_w
        yield "proj_b", self.proj_b

    def _run_cell(self, y: Tensor) -> Tensor:
        bsz, seq, d = y.shape
        # time-major so each step reads a contiguous slab
        y_tm = ops.transpose(y, (1, 0, 2))
        outs = []
        if self.kind == "slstm":
            p = self.cell
            pre = [ops.linear(y_tm, w, b) for w, b in ((p.w_z, p.b_z), (p.w_i, p.b_i), (p.w_f, p.b_f), (p.w_o, p.b_o))]
            state = SLSTMState.zeros(bsz, d)
            for t in range(seq):
                state = _slstm_update(pre[0][t], pre[1][t], pre[2][t], pre[3][t], p, state, self.forget)
                outs.append(state.h)
        else:
            p = self.cell
            proj = mlstm_projections(p, y_tm)
            state = MLSTMState.zeros(bsz, p.n_heads, p.head_dim)
            for t in range(seq):
                state, h = _mlstm_update(*(a[t] for a in proj), state, self.forget)
                outs.append(h)
        return ops.stack(outs, axis=1)

    def forward(self, x: Tensor) -> Tensor:
        y = ops.layer_norm(x, self.ln_g, self.ln_b)
        h = self._run_cell(y)
        return x + ops.linear(h, self.proj_w, self.proj_b)


class XLSTMStack:
    """Alternating sLSTM / mLSTM blocks (sLSTM first); the student's sequence mixer."""

    def __init__(self, blocks: list[XLSTMBlock], d_model: int, n_heads: int):
        self.blocks = blocks
        self.d_model = d_model
        self.n_heads = n_heads

    @property
    def kinds(self) -> list[str]:
        return [b.kind for b in self.blocks]

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for j, block in enumerate(self.blocks):
            for name, t in block.named_parameters():
                yield f"{j}.{name}", t

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[-1] != self.d_model:
            raise ValueError(f"stack expects [B, S, {self.d_model}], got {list(x.shape)}")
        for block in self.blocks:
            x = block.forward(x)
        return x

    __call__ = forward


def build_stack(d_model: int, n_blocks: int, n_heads: int, seed: int, forget: str = "sigmoid") -> XLSTMStack:
    """Seeded stack whose block ``j`` is sLSTM for even ``j`` and mLSTM for odd ``j``."""
    if n_blocks < 1 or n_heads < 1:
        raise ValueError("need at least one block and one head")
    if d_model % n_heads:
        raise ValueError(f"d_model {d_model} is not divisible by n_heads {n_heads}")
    if forget not in FORGET_KINDS:
        raise ValueError(f"forget gate kind must be one of {FORGET_KINDS}, got {forget!r}")
    rng = np.random.default_rng(seed)
    blocks = [
        XLSTMBlock("slstm" if j % 2 == 0 else "mlstm", d_model, n_heads, rng, forget)
        for j in range(n_blocks)
    ]
    return XLSTMStack(blocks, d_model, n_heads)


def stack_forward(stack: XLSTMStack, x: Tensor) -> Tensor:
    """Run every block left to right with fresh recurrent state; returns ``h_s [B, S, D]``."""
    return stack.forward(x)
