"""Reverse-mode gradients on numpy arrays, checked against central differences.

Run:  python3 demos/01_autodiff_and_gradcheck.py
"""
import numpy as np

from xdistill.autodiff import Tensor, backward, finite_difference_check, ops
from xdistill.checks import run_gradchecks

rng = np.random.default_rng(0)

# A tiny two-layer network.  Every op records itself on the active tape.
x = Tensor(rng.normal(size=(4, 3)))
w1 = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
w2 = Tensor(rng.normal(size=(5, 2)), requires_grad=True)
loss = ops.mean(ops.square(ops.linear(ops.tanh(ops.linear(x, w1)), w2)))

# backward() replays the tape once and then discards it.
backward(loss)
print("loss", float(loss.data))
print("dL/dw2 (analytic)\n", w2.grad)

# The same gradient by finite differences.  The loss function takes no
# arguments so the checker can re-evaluate it after nudging each entry.
report = finite_difference_check(
    lambda: ops.mean(ops.square(ops.linear(ops.tanh(ops.linear(x, w1)), w2))), [w1, w2]
)
print("max relative error per parameter:", report.max_rel_err, "passed:", report.passed)

# The packaged oracle suite covers every recurrent cell, attention and the
# distillation loss on small random configurations.
for name, err in run_gradchecks(seed=0).items():
    print(f"{name:>14}: {err:.2e}")
