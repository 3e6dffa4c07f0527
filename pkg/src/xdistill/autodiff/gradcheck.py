"""Central finite-difference oracle for analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


@dataclass
class GradCheckReport:
    max_rel_err: list[float]
    tol: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = all(e <= self.tol for e in self.max_rel_err) if self.tol > 0 else all(
            e == 0.0 for e in self.max_rel_err
        )

    @property
    def worst(self) -> float:
        return max(self.max_rel_err) if self.max_rel_err else 0.0


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Entrywise ``|a - n| / max(|a|, |n|, floor)``.

    ``floor`` keeps entries whose true gradient is zero from turning round-off
    noise into a spurious relative error.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numeric_grad(f: Callable[[], Tensor], p: Tensor, step: float) -> np.ndarray:
    flat = p.data.reshape(-1)
    out = np.zeros(flat.size)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = _scalar(f())
            flat[i] = orig - step
            fm = _scalar(f())
            flat[i] = orig
            out[i] = (fp - fm) / (2.0 * step)
    return out.reshape(p.data.shape)


def _scalar(t) -> float:
    v = float(t.data.reshape(-1)[0]) if isinstance(t, Tensor) else float(t)
    if not np.isfinite(v):
        raise FloatingPointError("function under check returned a non-finite value")
    return v


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-8,
) -> GradCheckReport:
    """Compare analytic gradients of the scalar ``f()`` against central differences.

    ``f`` takes no arguments and must read ``params`` by reference; it is
    re-evaluated ``2 * numel`` times with single entries nudged by ``step``.
    Returns the per-parameter maximum relative error.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    for p in params:
        p.requires_grad = True
        p.grad = None
    loss = f()
    _scalar(loss)
    backward(loss)
    errs = []
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = numeric_grad(f, p, step)
        errs.append(float(relative_error(analytic, numeric, floor).max()))
    return GradCheckReport(errs, tol)
