"""Delta-distillation training loop."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from ..autodiff import backward, no_grad, ops
from ..data import BatchStream
from ..optim import Adam, CosineWarmup, global_grad_norm
from ..teacher import TeacherModel, layerwise_mean_hidden
from .losses import combined_loss, cross_entropy, frobenius_loss, kd_loss
from .schedule import AnnealState, LossSchedule
from .student import StudentModel

logger = logging.getLogger(__name__)


class NumericalError(FloatingPointError):
    """Training produced a non-finite loss."""


@dataclass
class MetricsRecord:
    epoch: int
    step: int
    alpha_k: float
    temp_k: float
    beta_k: float
    loss_ce: float
    loss_kd: float
    loss_frob: float
    loss_total: float
    grad_norm: float
    lr: float
    wall_ms: float

    def to_dict(self) -> dict:
        return asdict(self)


def make_loss_schedule(cfg) -> LossSchedule:
    """Build the alpha/T/beta schedule for a :class:`~xdistill.config.RunConfig`."""
    a_init, a_final = cfg.alpha_initial, cfg.alpha_final
    if cfg.beta_mode == "annealed":
        a_final, a_init = sorted(cfg.alpha_annealed)
    anneal = AnnealState.start(a_init, a_final, cfg.temp_initial, cfg.temp_final,
                               cfg.delta_alpha_eff, cfg.delta_temp_eff, cfg.k_mode)
    b_final, b_init = sorted(cfg.beta_annealed)
    return LossSchedule(anneal, cfg.beta_mode, cfg.alpha_fixed, cfg.beta_fixed, b_init, b_final)


def steps_per_epoch(stream: BatchStream, cfg) -> int:
    n = stream.batches_per_epoch // cfg.grad_accum
    if cfg.steps_per_epoch is not None:
        n = min(n, cfg.steps_per_epoch)
    if n < 1:
        raise ValueError("corpus too small for one optimizer step (batch_size * grad_accum windows)")
    return n


def run_delta_distillation(
    teacher: TeacherModel,
    student: StudentModel,
    stream: BatchStream,
    cfg,
    on_record: Callable[[MetricsRecord], None] | None = None,
    on_abort: Callable[[StudentModel], None] | None = None,
) -> list[MetricsRecord]:
    """Train ``student`` against the frozen ``teacher``; returns one record per optimizer step.

    Each optimizer step accumulates ``cfg.grad_accum`` micro-batches.  The loss
    uses the current schedule weights; the schedule advances after the
    parameter update and the epoch anchors decay at the end of every epoch.
    """
    if teacher.cfg.vocab != student.cfg.vocab:
        raise ValueError(f"vocab mismatch: teacher {teacher.cfg.vocab} vs student {student.cfg.vocab}")
    teacher.freeze()
    params = student.trainable_parameters()
    opt = Adam(params, lr=cfg.lr)
    n_steps = steps_per_epoch(stream, cfg)
    lr_at = CosineWarmup(cfg.lr, cfg.epochs * n_steps, cfg.warmup_ratio, cfg.min_lr_ratio)
    schedule = make_loss_schedule(cfg)
    records: list[MetricsRecord] = []
    global_step = 0

    for epoch in range(cfg.epochs):
        batches = stream.epoch_batches(epoch)
        for step in range(n_steps):
            t0 = time.perf_counter()
            w = schedule.weights()
            sums = np.zeros(4)
            for _ in range(cfg.grad_accum):
                inputs, targets = next(batches)
                with no_grad():
                    t_logits, capture = teacher.forward(inputs)
                    h_bar = layerwise_mean_hidden(capture)
                s_logits, h_s = student.forward(inputs)
                ce = cross_entropy(s_logits, targets)
                kd = kd_loss(t_logits, s_logits, w.temp_k)
                frob = frobenius_loss(h_bar, h_s)
                total = combined_loss(ce, kd, frob, w, h_s.size, cfg.t_squared)
                value = float(total.data)
                if not math.isfinite(value):
                    if on_abort is not None:
                        on_abort(student)
                    raise NumericalError(f"non-finite loss at epoch {epoch + 1} step {step}")
                backward(ops.scale(total, 1.0 / cfg.grad_accum))
                sums += (float(ce.data), float(kd.data), float(frob.data), value)
            means = sums / cfg.grad_accum
            gnorm = global_grad_norm(params)
            if cfg.grad_clip is not None and gnorm > cfg.grad_clip:
                for p in params:
                    if p.grad is not None:
                        p.grad *= cfg.grad_clip / gnorm
            lr = lr_at(global_step)
            opt.lr = lr
            opt.step()
            opt.zero_grad()
            rec = MetricsRecord(
                epoch=epoch + 1,
                step=step,
                alpha_k=w.alpha_k,
                temp_k=w.temp_k,
                beta_k=w.beta_k,
                loss_ce=means[0],
                loss_kd=means[1],
                loss_frob=means[2],
                loss_total=means[3],
                grad_norm=gnorm,
                lr=lr,
                wall_ms=(time.perf_counter() - t0) * 1e3,
            )
            records.append(rec)
            if on_record is not None:
                on_record(rec)
            schedule.advance()
            global_step += 1
        schedule.end_epoch()
        logger.info("epoch %d done: last total %.4f", epoch + 1, records[-1].loss_total if records else float("nan"))
    return records


def evaluate(student: StudentModel, teacher: TeacherModel, stream: BatchStream) -> dict:
    """Held-out CE / perplexity for both models, student-teacher KL at T=1 and Frobenius alignment."""
    sums = {"student_ce": 0.0, "teacher_ce": 0.0, "kl_t1": 0.0, "frobenius": 0.0}
    n_batches = 0
    with no_grad():
        for inputs, targets in stream.epoch_batches(0):
            t_logits, capture = teacher.forward(inputs)
            s_logits, h_s = student.forward(inputs)
            sums["student_ce"] += float(cross_entropy(s_logits, targets).data)
            sums["teacher_ce"] += float(cross_entropy(t_logits, targets).data)
            sums["kl_t1"] += float(kd_loss(t_logits, s_logits, 1.0).data)
            sums["frobenius"] += float(frobenius_loss(layerwise_mean_hidden(capture), h_s).data) / math.sqrt(h_s.size)
            n_batches += 1
    if n_batches == 0:
        raise ValueError("evaluation stream yielded no batches")
    out = {k: v / n_batches for k, v in sums.items()}
    out["student_ppl"] = math.exp(out["student_ce"])
    out["teacher_ppl"] = math.exp(out["teacher_ce"])
    return out
