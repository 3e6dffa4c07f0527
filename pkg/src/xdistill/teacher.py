"""Small pre-norm causal transformer used as the distillation teacher."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .autodiff import Tensor, backward, no_grad, ops

logger = logging.getLogger(__name__)

CAPTURE_POINTS = ("block", "attention")


@dataclass(frozen=True)
class TeacherConfig:
    vocab: int
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 6
    max_seq: int = 64
    capture: str = "block"

    @property
    def head_dim(self) -> int:
        # floor division: D need not be a multiple of the head count
        return self.d_model // self.n_heads

    @property
    def attn_width(self) -> int:
        return self.head_dim * self.n_heads


@dataclass
class LayerStateCapture:
    """Per-layer hidden states, each ``[B, S, D]``, in layer order."""

    states: list[Tensor]

    def __len__(self) -> int:
        return len(self.states)


def _w(rng, shape, std):
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


class AttentionBlock:
    def __init__(self, cfg: TeacherConfig, rng: np.random.Generator):
        d, a = cfg.d_model, cfg.attn_width
        self.n_heads = cfg.n_heads
        self.head_dim = cfg.head_dim
        std = 1.0 / math.sqrt(d)
        self.ln1_g = Tensor(np.ones(d), requires_grad=True)
        self.ln1_b = Tensor(np.zeros(d), requires_grad=True)
        self.W_q = _w(rng, (d, a), std)
        self.W_k = _w(rng, (d, a), std)
        self.W_v = _w(rng, (d, a), std)
        self.W_o = _w(rng, (a, d), 0.5 / math.sqrt(a))
        self.ln2_g = Tensor(np.ones(d), requires_grad=True)
        self.ln2_b = Tensor(np.zeros(d), requires_grad=True)
        self.ff1_w = _w(rng, (d, 4 * d), std)
        self.ff1_b = Tensor(np.zeros(4 * d), requires_grad=True)
        self.ff2_w = _w(rng, (4 * d, d), 0.5 / math.sqrt(4 * d))
        self.ff2_b = Tensor(np.zeros(d), requires_grad=True)

    _names = ("ln1_g", "ln1_b", "W_q", "W_k", "W_v", "W_o", "ln2_g", "ln2_b", "ff1_w", "ff1_b", "ff2_w", "ff2_b")

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for n in self._names:
            yield n, getattr(self, n)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Returns ``(block_output, residual_after_attention)``."""
        a = causal_attention(ops.layer_norm(x, self.ln1_g, self.ln1_b), self)
        x = x + a
        y = ops.layer_norm(x, self.ln2_g, self.ln2_b)
        ff = ops.linear(ops.gelu(ops.linear(y, self.ff1_w, self.ff1_b)), self.ff2_w, self.ff2_b)
        return x + ff, x


def causal_mask(seq: int) -> np.ndarray:
    """``True`` above the diagonal: positions a query may not attend to."""
    return np.triu(np.ones((seq, seq), dtype=bool), k=1)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, causal: bool = True, return_weights: bool = False):
    """``softmax(q k^T / sqrt(d_k) + mask) v`` over ``[..., S, d_k]`` operands."""
    d_k = q.shape[-1]
    scores = ops.scale(ops.matmul(q, ops.swap_last(k)), 1.0 / math.sqrt(d_k))
    if causal:
        scores = ops.masked_fill(scores, causal_mask(q.shape[-2]), -np.inf)
    weights = ops.softmax_rows(scores)
    out = ops.matmul(weights, v)
    return (out, weights) if return_weights else out


def causal_attention(x: Tensor, layer: AttentionBlock, return_weights: bool = False):
    """Multi-head causal self-attention of ``x [B, S, D]`` with output projection."""
    if x.ndim != 3 or x.shape[-1] != layer.W_q.shape[0]:
        raise ValueError(f"attention expects [B, S, {layer.W_q.shape[0]}], got {list(x.shape)}")
    bsz, seq, _ = x.shape
    nh, dk = layer.n_heads, layer.head_dim

    def heads(w):
        t = ops.reshape(ops.linear(x, w), (bsz, seq, nh, dk))
        return ops.transpose(t, (0, 2, 1, 3))

    out, weights = scaled_dot_attention(heads(layer.W_q), heads(layer.W_k), heads(layer.W_v), return_weights=True)
    merged = ops.reshape(ops.transpose(out, (0, 2, 1, 3)), (bsz, seq, nh * dk))
    y = ops.linear(merged, layer.W_o)
    return (y, weights) if return_weights else y


class TeacherModel:
    """Token embedding + learned positions, ``n_layers`` attention blocks, final norm, head."""

    def __init__(self, cfg: TeacherConfig, seed: int = 0):
        if cfg.capture not in CAPTURE_POINTS:
            raise ValueError(f"capture must be one of {CAPTURE_POINTS}")
        if cfg.head_dim < 1:
            raise ValueError("d_model is smaller than the number of heads")
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        d, v = cfg.d_model, cfg.vocab
        self.embedding = _w(rng, (v, d), 1.0)
        self.pos = _w(rng, (cfg.max_seq, d), 0.1)
        self.layers = [AttentionBlock(cfg, rng) for _ in range(cfg.n_layers)]
        self.lnf_g = Tensor(np.ones(d), requires_grad=True)
        self.lnf_b = Tensor(np.zeros(d), requires_grad=True)
        self.head = _w(rng, (d, v), 1.0 / math.sqrt(d))

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        yield "embedding", self.embedding
        yield "pos", self.pos
        for j, layer in enumerate(self.layers):
            for n, t in layer.named_parameters():
                yield f"layers.{j}.{n}", t
        yield "lnf_g", self.lnf_g
        yield "lnf_b", self.lnf_b
        yield "head", self.head

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None

    def forward(self, tokens: np.ndarray) -> tuple[Tensor, LayerStateCapture]:
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 2:
            raise ValueError("tokens must be [B, S]")
        bsz, seq = tokens.shape
        if seq > self.cfg.max_seq:
            raise ValueError(f"sequence length {seq} exceeds max_seq {self.cfg.max_seq}")
        if tokens.min() < 0 or tokens.max() >= self.cfg.vocab:
            raise ValueError(f"token id out of range [0, {self.cfg.vocab})")
        x = ops.take_rows(self.embedding, tokens)
        x = x + ops.broadcast_to(self.pos[:seq], x.shape)
        states = []
        for layer in self.layers:
            x, after_attn = layer.forward(x)
            states.append(x if self.cfg.capture == "block" else after_attn)
        logits = ops.linear(ops.layer_norm(x, self.lnf_g, self.lnf_b), self.head)
        return logits, LayerStateCapture(states)

    __call__ = forward


def teacher_forward(model: TeacherModel, tokens: np.ndarray) -> tuple[Tensor, LayerStateCapture]:
    return model.forward(tokens)


def layerwise_mean_hidden(capture: LayerStateCapture) -> Tensor:
    """Average of the captured layer states.

    The states are stacked into ``[L*B, S, D]`` and viewed as
    ``[L, B, S, D]`` before taking the mean over the layer axis.
    """
    if not capture.states:
        raise ValueError("capture is empty")
    n_layers = len(capture.states)
    bsz, seq, d = capture.states[0].shape
    stacked = ops.concat(capture.states, axis=0)
    return ops.mean(ops.reshape(stacked, (n_layers, bsz, seq, d)), axis=0)


def teacher_pretrain(model: TeacherModel, batches, steps: int, lr: float = 3e-3, warmup_ratio: float = 0.1):
    """Next-token cross-entropy training; returns the per-step loss trace.

    ``batches`` is an iterator of ``(inputs, targets)`` pairs; it is consumed
    for exactly ``steps`` updates.
    """
    from .distill.losses import cross_entropy
    from .optim import Adam, CosineWarmup

    params = model.parameters()
    opt = Adam(params, lr=lr)
    sched = CosineWarmup(lr, total_steps=max(steps, 1), warmup_ratio=warmup_ratio)
    trace: list[float] = []
    for step in range(steps):
        inputs, targets = next(batches)
        logits, _ = model.forward(inputs)
        loss = cross_entropy(logits, targets)
        value = float(loss.data)
        if not np.isfinite(value):
            raise FloatingPointError(f"teacher pretraining loss became non-finite at step {step}")
        backward(loss)
        opt.lr = sched(step)
        opt.step()
        opt.zero_grad()
        trace.append(value)
        if step % 100 == 0:
            logger.info("teacher step %d ce %.4f", step, value)
    return trace


def evaluate_ce(model, batches) -> float:
    """Mean next-token cross-entropy of ``model`` over an iterable of batches."""
    from .distill.losses import cross_entropy

    total, count = 0.0, 0
    with no_grad():
        for inputs, targets in batches:
            logits = model.forward(inputs)
            logits = logits[0] if isinstance(logits, tuple) else logits
            total += float(cross_entropy(logits, targets).data) * targets.size
            count += targets.size
    return total / count
