"""Run configuration with the reference training hyperparameters as defaults."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .distill.schedule import BETA_MODES, K_MODES
from .xlstm import FORGET_KINDS


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field name."""


@dataclass
class RunConfig:
    # optimisation
    lr: float = 2e-4
    lr_schedule: str = "cosine"
    batch_size: int = 8
    grad_accum: int = 4
    warmup_ratio: float = 0.1
    min_lr_ratio: float = 0.0
    grad_clip: float | None = None
    epochs: int = 10
    steps_per_epoch: int | None = None
    seed: int = 0
    # annealing
    alpha_initial: float = 0.8
    alpha_final: float = 0.5
    temp_initial: float = 2.0
    temp_final: float = 1.0
    delta: float = 0.05
    delta_alpha: float | None = None
    delta_temp: float | None = None
    k_mode: str = "epoch"
    t_squared: bool = True
    # Frobenius term
    beta_mode: str = "off"
    alpha_fixed: float = 0.3
    beta_fixed: float = 0.1
    alpha_annealed: list = field(default_factory=lambda: [0.2, 0.3])
    beta_annealed: list = field(default_factory=lambda: [0.1, 0.2])
    # data
    corpus_path: str | None = None
    synthetic_chars: int = 60000
    corpus_seed: int = 0
    context_size: int = 64
    eval_fraction: float = 0.1
    # teacher
    teacher_layers: int = 4
    teacher_heads: int = 6
    d_model: int = 64
    vocab: int | None = None
    capture: str = "block"
    teacher_steps: int = 1500
    teacher_lr: float = 3e-3
    teacher_batch_size: int = 16
    teacher_checkpoint: str | None = None
    # student
    student_blocks: int | None = None
    student_heads: int | None = None
    forget_gate_kind: str = "sigmoid"
    student_checkpoint: str | None = None
    # tools
    gradcheck_tol: float = 1e-4
    benchmark_lengths: list = field(default_factory=lambda: [128, 256, 512, 1024])
    benchmark_repeats: int = 3

    @property
    def delta_alpha_eff(self) -> float:
        return self.delta if self.delta_alpha is None else self.delta_alpha

    @property
    def delta_temp_eff(self) -> float:
        return self.delta if self.delta_temp is None else self.delta_temp

    def validate(self) -> "RunConfig":
        def bad(name, why):
            raise ConfigError(f"{name}: {why}")

        if self.lr <= 0:
            bad("lr", "must be positive")
        if self.lr_schedule != "cosine":
            bad("lr_schedule", "only 'cosine' is supported")
        for name in ("batch_size", "grad_accum", "context_size"):
            if getattr(self, name) < 1:
                bad(name, "must be >= 1")
        if not 0 <= self.min_lr_ratio <= 1:
            bad("min_lr_ratio", "must be in [0, 1]")
        if not 0 < self.eval_fraction < 1:
            bad("eval_fraction", "must be in (0, 1)")
        if self.teacher_steps < 0:
            bad("teacher_steps", "must be >= 0")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            bad("steps_per_epoch", "must be >= 1 when set")
        if self.epochs < 0:
            bad("epochs", "must be >= 0")
        if not 0 <= self.warmup_ratio < 1:
            bad("warmup_ratio", "must be in [0, 1)")
        if not 0 <= self.alpha_initial <= 1:
            bad("alpha_initial", "must be in [0, 1]")
        if not 0 <= self.alpha_final <= self.alpha_initial:
            bad("alpha_final", "must be in [0, alpha_initial]")
        if not self.temp_initial > 0:
            bad("temp_initial", "must be positive")
        if not 0 < self.temp_final <= self.temp_initial:
            bad("temp_final", "must be in (0, temp_initial]")
        for name in ("alpha_annealed", "beta_annealed"):
            pair = getattr(self, name)
            if len(pair) != 2 or not all(0 <= v <= 1 for v in pair):
                bad(name, "must be a [low, high] pair inside [0, 1]")
        if max(self.alpha_annealed) + max(self.beta_annealed) > 1:
            bad("beta_annealed", "alpha and beta upper ends must sum to at most 1")
        if self.alpha_fixed + self.beta_fixed > 1 or min(self.alpha_fixed, self.beta_fixed) < 0:
            bad("beta_fixed", "alpha_fixed and beta_fixed must be non-negative and sum to at most 1")
        if self.k_mode not in K_MODES:
            bad("k_mode", f"must be one of {K_MODES}")
        if self.beta_mode not in BETA_MODES:
            bad("beta_mode", f"must be one of {BETA_MODES}")
        if self.forget_gate_kind not in FORGET_KINDS:
            bad("forget_gate_kind", f"must be one of {FORGET_KINDS}")
        if self.capture not in ("block", "attention"):
            bad("capture", "must be 'block' or 'attention'")
        if self.corpus_path is not None and not Path(self.corpus_path).is_file():
            bad("corpus_path", f"file not found: {self.corpus_path}")
        return self

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def parse_override(item: str) -> tuple[str, Any]:
    if "=" not in item:
        raise ConfigError(f"override: expected KEY=VALUE, got {item!r}")
    key, raw = item.split("=", 1)
    key = key.strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def make_config(values: dict | None = None, overrides: list[str] | None = None, validate: bool = True) -> RunConfig:
    merged = dict(values or {})
    for item in overrides or []:
        k, v = parse_override(item)
        merged[k] = v
    unknown = set(merged) - _FIELDS
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown configuration key")
    cfg = RunConfig(**merged)
    return cfg.validate() if validate else cfg


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    values = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config: file not found: {p}")
        values = json.loads(p.read_text(encoding="utf-8"))
        if not isinstance(values, dict):
            raise ConfigError("config: top level must be a flat key/value object")
    return make_config(values, overrides)
