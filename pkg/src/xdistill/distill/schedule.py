"""Dual annealing of the soft-target weight and temperature.

Within an epoch each value follows ``final + (anchor - final) / (1 + ln(k + 1))``
starting from the epoch anchor; at the end of every epoch the anchor drops by a
fixed delta, clamped at the final value.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

from .losses import DistillWeights

K_MODES = ("epoch", "global")
BETA_MODES = ("off", "fixed", "annealed")


def schedule_value(anchor: float, final: float, k: int) -> float:
    if k < 0:
        raise ValueError("step index must be non-negative")
    if anchor < final:
        raise ValueError(f"anchor {anchor} is below final value {final}")
    return final + (anchor - final) / (1.0 + math.log(k + 1))


@dataclass
class AnnealState:
    alpha: float = 0.8
    temp: float = 2.0
    alpha_initial: float = 0.8
    alpha_final: float = 0.5
    temp_initial: float = 2.0
    temp_final: float = 1.0
    delta_alpha: float = 0.05
    delta_temp: float = 0.05
    step: int = 0
    epoch: int = 0
    global_step: int = 0
    k_mode: str = "epoch"

    def __post_init__(self):
        if self.k_mode not in K_MODES:
            raise ValueError(f"k_mode must be one of {K_MODES}")
        if self.alpha_initial < self.alpha_final or self.temp_initial < self.temp_final:
            raise ValueError("initial values must not be below final values")
        if self.temp_final <= 0:
            raise ValueError("temperatures must be positive")

    @classmethod
    def start(cls, alpha_initial=0.8, alpha_final=0.5, temp_initial=2.0, temp_final=1.0,
              delta_alpha=0.05, delta_temp=0.05, k_mode="epoch") -> "AnnealState":
        return cls(alpha_initial, temp_initial, alpha_initial, alpha_final, temp_initial, temp_final,
                   delta_alpha, delta_temp, k_mode=k_mode)

    @property
    def k(self) -> int:
        return self.step if self.k_mode == "epoch" else self.global_step

    @property
    def alpha_k(self) -> float:
        return schedule_value(self.alpha, self.alpha_final, self.k)

    @property
    def temp_k(self) -> float:
        return schedule_value(self.temp, self.temp_final, self.k)

    def advance(self) -> None:
        self.step += 1
        self.global_step += 1


def epoch_decay(state: AnnealState) -> AnnealState:
    """Lower both epoch anchors by their deltas (floored) and restart the step counter."""
    return dataclasses.replace(
        state,
        alpha=max(state.alpha - state.delta_alpha, state.alpha_final),
        temp=max(state.temp - state.delta_temp, state.temp_final),
        step=0,
        epoch=state.epoch + 1,
    )


@dataclass
class LossSchedule:
    """Produces the per-step :class:`DistillWeights` for every Frobenius mode.

    * ``off``: annealed alpha and T, no Frobenius term.
    * ``fixed``: constant alpha and beta, annealed T.
    * ``annealed``: alpha, beta and T all follow the annealing rule; beta uses
      its own anchor/final pair and the alpha delta.
    """

    anneal: AnnealState
    beta_mode: str = "off"
    alpha_fixed: float = 0.3
    beta_fixed: float = 0.1
    beta: float = 0.2
    beta_final: float = 0.1

    def __post_init__(self):
        if self.beta_mode not in BETA_MODES:
            raise ValueError(f"beta_mode must be one of {BETA_MODES}")

    def weights(self) -> DistillWeights:
        a = self.anneal
        if self.beta_mode == "off":
            return DistillWeights(a.alpha_k, a.temp_k, 0.0)
        if self.beta_mode == "fixed":
            return DistillWeights(self.alpha_fixed, a.temp_k, self.beta_fixed)
        return DistillWeights(a.alpha_k, a.temp_k, schedule_value(self.beta, self.beta_final, a.k))

    def advance(self) -> None:
        self.anneal.advance()

    def end_epoch(self) -> None:
        self.anneal = epoch_decay(self.anneal)
        if self.beta_mode == "annealed":
            self.beta = max(self.beta - self.anneal.delta_alpha, self.beta_final)


def schedule_table(anneal: AnnealState, epochs: int, steps_per_epoch: int) -> list[tuple[int, int, float, float]]:
    """``(epoch, step, alpha_k, temp_k)`` rows for a whole run; epochs are 1-based."""
    state = dataclasses.replace(anneal)
    rows = []
    for e in range(1, epochs + 1):
        for _ in range(steps_per_epoch):
            rows.append((e, state.step, state.alpha_k, state.temp_k))
            state.advance()
        state = epoch_decay(state)
    return rows
