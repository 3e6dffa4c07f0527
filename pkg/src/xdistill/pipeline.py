"""End-to-end workflows behind the command-line tool.

Every function takes a validated :class:`RunConfig` and an output directory and
writes its artifacts there atomically.  Checkpoints get a JSON sidecar
(``<name>.meta.json``) with model dimensions and the vocabulary, so later
commands can rebuild the model without re-deriving anything from the corpus.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autodiff import no_grad
from .config import ConfigError, RunConfig
from .data import BatchStream, Vocab, build_vocab, load_text, synthetic_corpus, train_eval_split
from .distill.losses import cross_entropy
from .distill.student import StudentConfig, StudentModel, derive_student_config, init_student_from_teacher
from .distill.trainer import evaluate, make_loss_schedule, run_delta_distillation, steps_per_epoch
from .io import MetricsWriter, atomic_write_text, load_checkpoint, load_into, save_checkpoint
from .teacher import TeacherConfig, TeacherModel, evaluate_ce, teacher_pretrain

logger = logging.getLogger(__name__)


@dataclass
class Corpus:
    vocab: Vocab
    train: np.ndarray
    held_out: np.ndarray


def prepare_corpus(cfg: RunConfig, vocab: Vocab | None = None) -> Corpus:
    """Load (or synthesize) the text, encode it and split off the held-out tail."""
    if cfg.corpus_path is not None:
        text = load_text(cfg.corpus_path)
    else:
        text = synthetic_corpus(cfg.synthetic_chars, seed=cfg.corpus_seed)
    if vocab is None:
        vocab = build_vocab(text)
    try:
        ids = vocab.encode(text)
    except KeyError as exc:
        raise ConfigError(f"corpus_path: character {exc} is not in the teacher vocabulary") from None
    if cfg.vocab is not None and cfg.vocab != vocab.size:
        raise ConfigError(f"vocab: configured {cfg.vocab} but the corpus vocabulary has {vocab.size} symbols")
    train, held_out = train_eval_split(ids, cfg.eval_fraction)
    if len(held_out) < cfg.context_size + 1:
        raise ConfigError("eval_fraction: held-out split is shorter than one context window")
    return Corpus(vocab, train, held_out)


def _meta_path(ckpt: Path) -> Path:
    return ckpt.with_name(ckpt.stem + ".meta.json")


def _write_meta(ckpt: Path, payload: dict) -> None:
    atomic_write_text(_meta_path(ckpt), json.dumps(payload, indent=1, sort_keys=True) + "\n")


def _read_meta(ckpt: Path) -> dict:
    path = _meta_path(ckpt)
    if not path.is_file():
        raise ConfigError(f"checkpoint: metadata sidecar not found: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def echo_config(cfg: RunConfig, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.json"
    atomic_write_text(path, cfg.dumps())
    return path


def teacher_config(cfg: RunConfig, vocab_size: int) -> TeacherConfig:
    return TeacherConfig(vocab=vocab_size, d_model=cfg.d_model, n_layers=cfg.teacher_layers,
                         n_heads=cfg.teacher_heads, max_seq=cfg.context_size, capture=cfg.capture)


def teacher_steps(cfg: RunConfig, stream: BatchStream) -> int:
    """``epochs`` passes over the training windows, capped at ``teacher_steps``."""
    return min(cfg.teacher_steps, cfg.epochs * stream.batches_per_epoch)


def pretrain_teacher(cfg: RunConfig, out: Path) -> dict:
    out = Path(out)
    echo_config(cfg, out)
    corpus = prepare_corpus(cfg)
    model = TeacherModel(teacher_config(cfg, corpus.vocab.size), seed=cfg.seed)
    stream = BatchStream(corpus.train, cfg.context_size, cfg.teacher_batch_size, seed=cfg.seed)
    n_steps = teacher_steps(cfg, stream)
    trace = teacher_pretrain(model, stream.forever(), n_steps, lr=cfg.teacher_lr, warmup_ratio=cfg.warmup_ratio)
    ckpt = out / "teacher.ntck"
    save_checkpoint(ckpt, model)
    _write_meta(ckpt, {"kind": "teacher", "model": asdict(model.cfg), "vocab": corpus.vocab.symbols})
    with MetricsWriter(out / "teacher_trace.jsonl") as w:
        for i, v in enumerate(trace):
            w.write({"step": i, "loss_ce": v})
    held = BatchStream(corpus.held_out, cfg.context_size, cfg.teacher_batch_size, seed=cfg.seed)
    eval_ce = evaluate_ce(model, held.epoch_batches(0)) if held.batches_per_epoch else float("nan")
    return {"checkpoint": str(ckpt), "steps": n_steps, "held_out_ce": eval_ce, "ln_vocab": math.log(corpus.vocab.size)}


def load_teacher(path) -> tuple[TeacherModel, Vocab]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"teacher_checkpoint: file not found: {path}")
    meta = _read_meta(path)
    if meta.get("kind") != "teacher":
        raise ConfigError(f"teacher_checkpoint: {path} is not a teacher checkpoint")
    model = TeacherModel(TeacherConfig(**meta["model"]), seed=0)
    load_into(model, load_checkpoint(path))
    model.freeze()
    return model, Vocab(list(meta["vocab"]))


def _check_teacher_dims(cfg: RunConfig, teacher: TeacherModel) -> None:
    tc = teacher.cfg
    for field, want, got in (("d_model", cfg.d_model, tc.d_model), ("teacher_layers", cfg.teacher_layers, tc.n_layers),
                             ("teacher_heads", cfg.teacher_heads, tc.n_heads)):
        if want != got:
            raise ConfigError(f"{field}: config says {want} but the teacher checkpoint has {got}")
    if cfg.context_size > tc.max_seq:
        raise ConfigError(f"context_size: {cfg.context_size} exceeds the teacher's maximum length {tc.max_seq}")


def student_config(cfg: RunConfig, teacher: TeacherModel) -> StudentConfig:
    tc = teacher.cfg
    try:
        derived = derive_student_config(tc.n_layers, tc.n_heads, tc.d_model, tc.vocab, cfg.forget_gate_kind)
        blocks = cfg.student_blocks or derived.n_blocks
        heads = cfg.student_heads or derived.n_heads
        return StudentConfig(blocks, heads, tc.d_model, tc.vocab, cfg.forget_gate_kind)
    except ValueError as exc:
        raise ConfigError(f"student_heads: {exc}") from None


def resolve_teacher_path(cfg: RunConfig, out: Path, explicit=None) -> Path:
    return Path(explicit or cfg.teacher_checkpoint or Path(out) / "teacher.ntck")


def distill(cfg: RunConfig, out: Path, teacher_path=None) -> dict:
    """Distill a student from a saved teacher; writes metrics, checkpoint and config echo."""
    out = Path(out)
    echo_config(cfg, out)
    teacher, vocab = load_teacher(resolve_teacher_path(cfg, out, teacher_path))
    _check_teacher_dims(cfg, teacher)
    corpus = prepare_corpus(cfg, vocab)
    scfg = student_config(cfg, teacher)
    student, frac = init_student_from_teacher(teacher, scfg, seed=cfg.seed)
    stream = BatchStream(corpus.train, cfg.context_size, cfg.batch_size, seed=cfg.seed)
    ckpt = out / "student.ntck"

    def on_abort(model):
        save_checkpoint(out / "student.abort.ntck", model)
        _write_meta(out / "student.abort.ntck", _student_meta(scfg, teacher, vocab))

    with MetricsWriter(out / "metrics.jsonl") as writer:
        records = run_delta_distillation(teacher, student, stream, cfg,
                                         on_record=lambda r: writer.write(r.to_dict()), on_abort=on_abort)
    save_checkpoint(ckpt, student)
    _write_meta(ckpt, _student_meta(scfg, teacher, vocab))
    return {"checkpoint": str(ckpt), "steps": len(records), "trainable_fraction": frac}


def _student_meta(scfg: StudentConfig, teacher: TeacherModel, vocab: Vocab) -> dict:
    return {"kind": "student", "model": asdict(scfg), "teacher": asdict(teacher.cfg), "vocab": vocab.symbols}


def load_student(path) -> StudentModel:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"student_checkpoint: file not found: {path}")
    meta = _read_meta(path)
    if meta.get("kind") != "student":
        raise ConfigError(f"student_checkpoint: {path} is not a student checkpoint")
    model = StudentModel.fresh(StudentConfig(**meta["model"]), seed=0)
    load_into(model, load_checkpoint(path))
    return model


def schedule_rows(cfg: RunConfig) -> list[dict]:
    """The (epoch, step, alpha_k, temp_k, beta_k) table of a configured run, without training."""
    if cfg.steps_per_epoch is not None:
        n_steps = cfg.steps_per_epoch
    else:
        corpus = prepare_corpus(cfg)
        n_steps = steps_per_epoch(BatchStream(corpus.train, cfg.context_size, cfg.batch_size), cfg)
    sched = make_loss_schedule(cfg)
    rows = []
    for epoch in range(1, cfg.epochs + 1):
        for step in range(n_steps):
            w = sched.weights()
            rows.append({"epoch": epoch, "step": step, "alpha_k": w.alpha_k, "temp_k": w.temp_k, "beta_k": w.beta_k})
            sched.advance()
        sched.end_epoch()
    return rows


def evaluate_checkpoints(cfg: RunConfig, out: Path, teacher_path=None, student_path=None) -> dict:
    """Held-out report for a teacher and a student checkpoint.

    Without a student checkpoint on disk the student is initialized from the
    teacher exactly as distillation would start, which gives the step-0 baseline.
    """
    out = Path(out)
    teacher, vocab = load_teacher(resolve_teacher_path(cfg, out, teacher_path))
    corpus = prepare_corpus(cfg, vocab)
    s_path = Path(student_path or cfg.student_checkpoint or out / "student.ntck")
    if s_path.is_file():
        student = load_student(s_path)
        source = str(s_path)
        if asdict(teacher.cfg) != _read_meta(s_path)["teacher"]:
            raise ConfigError("student_checkpoint: it was distilled from a teacher with different dimensions")
    else:
        student, _ = init_student_from_teacher(teacher, student_config(cfg, teacher), seed=cfg.seed)
        source = "initial"
    if student.cfg.vocab != teacher.cfg.vocab:
        raise ConfigError("student_checkpoint: vocabulary size differs from the teacher")
    held = BatchStream(corpus.held_out, cfg.context_size, cfg.batch_size, seed=cfg.seed)
    if held.batches_per_epoch == 0:
        raise ConfigError("eval_fraction: held-out split is smaller than one batch")
    report = {"student": source, **evaluate(student, teacher, held), "ln_vocab": math.log(vocab.size)}
    with MetricsWriter(out / "eval.jsonl") as w:
        w.write(report)
    return report


def uniform_ce(vocab_size: int, targets: np.ndarray) -> float:
    """Cross-entropy of the uniform predictor (equals ln V)."""
    from .autodiff import Tensor

    with no_grad():
        logits = Tensor(np.zeros(targets.shape + (vocab_size,)))
        return float(cross_entropy(logits, targets).data)


def epoch_trends(rows, key: str = "loss_total") -> list[dict]:
    """Per-epoch smoothing of a logged series.

    For every epoch: the mean over all its steps, plus the means of the first
    and last quarter of its steps (at least one step each).  ``rows`` are
    metrics dicts or :class:`MetricsRecord` objects.
    """
    by_epoch: dict[int, list[float]] = {}
    for r in rows:
        r = r if isinstance(r, dict) else r.to_dict()
        by_epoch.setdefault(r["epoch"], []).append(r[key])
    out = []
    for epoch in sorted(by_epoch):
        vals = np.asarray(by_epoch[epoch])
        q = max(1, len(vals) // 4)
        out.append({"epoch": epoch, "mean": float(vals.mean()), "head": float(vals[:q].mean()),
                    "tail": float(vals[-q:].mean())})
    return out
