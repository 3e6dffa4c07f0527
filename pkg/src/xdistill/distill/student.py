"""Student architecture heuristic and teacher weight reuse."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from ..autodiff import Tensor, ops
from ..teacher import TeacherModel
from ..xlstm import FORGET_KINDS, XLSTMStack, build_stack


@dataclass(frozen=True)
class StudentConfig:
    n_blocks: int
    n_heads: int
    d_model: int
    vocab: int
    forget_gate_kind: str = "sigmoid"

    def __post_init__(self):
        if self.n_blocks < 1:
            raise ValueError("student needs at least one block")
        if self.n_heads < 1:
            raise ValueError("student needs at least one head")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        if self.forget_gate_kind not in FORGET_KINDS:
            raise ValueError(f"forget_gate_kind must be one of {FORGET_KINDS}")


def roundup(x: int, k: int) -> int:
    return -(-x // k) * k


def derive_student_config(n_layers_teacher: int, n_heads_teacher: int, d_model: int, vocab: int,
                          forget_gate_kind: str = "sigmoid") -> StudentConfig:
    """Half the teacher depth (floored), head count rounded up to a multiple of 4."""
    if n_layers_teacher < 2:
        raise ValueError("teacher needs at least 2 layers")
    if n_heads_teacher < 1:
        raise ValueError("teacher needs at least 1 head")
    n_blocks = n_layers_teacher // 2
    n_heads = roundup(n_heads_teacher, 4)
    if d_model % n_heads:
        raise ValueError(
            f"derived n_heads {n_heads} does not divide d_model {d_model}; adjust d_model or override n_heads"
        )
    return StudentConfig(n_blocks, n_heads, d_model, vocab, forget_gate_kind)


class StudentModel:
    """Embedding -> xLSTM stack -> final norm -> classification head."""

    def __init__(self, cfg: StudentConfig, embedding: Tensor, stack: XLSTMStack,
                 lnf_g: Tensor, lnf_b: Tensor, head: Tensor):
        self.cfg = cfg
        self.embedding = embedding
        self.stack = stack
        self.lnf_g = lnf_g
        self.lnf_b = lnf_b
        self.head = head

    @classmethod
    def fresh(cls, cfg: StudentConfig, seed: int = 0) -> "StudentModel":
        """Stand-alone student with its own small random embedding and head."""
        rng = np.random.default_rng([seed, 1])
        d, v = cfg.d_model, cfg.vocab
        return cls(
            cfg,
            Tensor(rng.normal(0.0, 1.0, size=(v, d)), requires_grad=True),
            build_stack(d, cfg.n_blocks, cfg.n_heads, seed, cfg.forget_gate_kind),
            Tensor(np.ones(d), requires_grad=True),
            Tensor(np.zeros(d), requires_grad=True),
            Tensor(rng.normal(0.0, 1e-3, size=(d, v)), requires_grad=True),
        )

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        yield "embedding", self.embedding
        for n, t in self.stack.named_parameters():
            yield f"stack.{n}", t
        yield "lnf_g", self.lnf_g
        yield "lnf_b", self.lnf_b
        yield "head", self.head

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def trainable_parameters(self) -> list[Tensor]:
        return [t for t in self.parameters() if t.requires_grad]

    def trainable_fraction(self) -> float:
        total = sum(t.size for t in self.parameters())
        return sum(t.size for t in self.trainable_parameters()) / total

    def forward(self, tokens: np.ndarray) -> tuple[Tensor, Tensor]:
        """Returns ``(logits [B, S, V], h_s [B, S, D])``; ``h_s`` is the last block's output."""
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 2:
            raise ValueError("tokens must be [B, S]")
        x = ops.take_rows(self.embedding, tokens)
        h_s = self.stack.forward(x)
        logits = ops.linear(ops.layer_norm(h_s, self.lnf_g, self.lnf_b), self.head)
        return logits, h_s

    __call__ = forward


def _frozen_copy(t: Tensor) -> Tensor:
    return Tensor(t.data.copy(), requires_grad=False)


def init_student_from_teacher(teacher: TeacherModel, cfg: StudentConfig, seed: int = 0) -> tuple[StudentModel, float]:
    """Copy (and freeze) the teacher's embedding, final norm and head; seed a fresh stack.

    Returns the student and its trainable-parameter fraction.
    """
    tc = teacher.cfg
    if tc.d_model != cfg.d_model or tc.vocab != cfg.vocab:
        raise ValueError(
            f"teacher (D={tc.d_model}, V={tc.vocab}) does not match student (D={cfg.d_model}, V={cfg.vocab})"
        )
    student = StudentModel(
        cfg,
        _frozen_copy(teacher.embedding),
        build_stack(cfg.d_model, cfg.n_blocks, cfg.n_heads, seed, cfg.forget_gate_kind),
        _frozen_copy(teacher.lnf_g),
        _frozen_copy(teacher.lnf_b),
        _frozen_copy(teacher.head),
    )
    return student, student.trainable_fraction()


def frozen_names(model: StudentModel) -> list[str]:
    return [n for n, t in model.named_parameters() if not t.requires_grad]


def parameter_count(model) -> int:
    return int(sum(math.prod(t.shape) for t in model.parameters()))
