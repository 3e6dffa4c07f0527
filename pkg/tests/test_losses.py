import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from xdistill.autodiff import Tensor, backward
from xdistill.distill.losses import (
    DistillWeights,
    combine_values,
    combined_loss,
    cross_entropy,
    frobenius_loss,
    kd_loss,
)

logit_arrays = arrays(np.float64, (2, 3, 6), elements=st.floats(-8, 8))


def kl_reference(zt, zs, T):
    def sm(z):
        e = np.exp(z / T - (z / T).max(-1, keepdims=True))
        return e / e.sum(-1, keepdims=True)

    pt, ps = sm(zt), sm(zs)
    return float(np.mean(np.sum(pt * (np.log(pt) - np.log(ps)), axis=-1)))


def test_uniform_logits_give_log_v():
    v = 60
    ce = cross_entropy(Tensor(np.zeros((3, 4, v))), np.zeros((3, 4), dtype=int))
    assert abs(float(ce.data) - math.log(v)) < 1e-9


def test_cross_entropy_matches_manual_value():
    logits = np.array([[[2.0, 0.0, -1.0], [0.5, 0.5, 0.5]]])
    targets = np.array([[0, 2]])
    lse0 = math.log(math.exp(2) + 1 + math.exp(-1))
    expected = ((lse0 - 2.0) + math.log(3)) / 2
    assert float(cross_entropy(Tensor(logits), targets).data) == pytest.approx(expected, abs=1e-14)


@given(logit_arrays, st.floats(0.5, 4))
def test_kd_of_identical_logits_is_zero(z, T):
    assert abs(float(kd_loss(z, Tensor(z), T).data)) < 1e-12


@given(logit_arrays, logit_arrays, st.floats(0.5, 4))
def test_kd_matches_direct_kl(zt, zs, T):
    assert float(kd_loss(zt, Tensor(zs), T).data) == pytest.approx(kl_reference(zt, zs, T), abs=1e-10)


@given(logit_arrays, logit_arrays, st.floats(-30, 30))
def test_kd_is_invariant_to_logit_shift(zt, zs, c):
    a = float(kd_loss(zt, Tensor(zs), 2.0).data)
    b = float(kd_loss(zt + c, Tensor(zs - c), 2.0).data)
    assert a == pytest.approx(b, abs=1e-9)


@given(logit_arrays, logit_arrays)
def test_kd_is_nonnegative(zt, zs):
    assert float(kd_loss(zt, Tensor(zs), 1.5).data) >= -1e-12


def test_kd_gradient_only_reaches_student():
    rng = np.random.default_rng(0)
    zt = Tensor(rng.normal(size=(2, 5)), requires_grad=True)
    zs = Tensor(rng.normal(size=(2, 5)), requires_grad=True)
    backward(kd_loss(zt, zs, 2.0))
    assert zt.grad is None
    # d KL / d z_s = (p_s - p_t) / (T * positions)
    def sm(z):
        e = np.exp(z / 2.0)
        return e / e.sum(-1, keepdims=True)
    assert np.allclose(zs.grad, (sm(zs.data) - sm(zt.data)) / (2.0 * 2), atol=1e-14)


def test_kd_shape_mismatch_raises():
    with pytest.raises(ValueError):
        kd_loss(np.zeros((2, 3)), Tensor(np.zeros((2, 4))), 1.0)


def test_frobenius_of_aligned_states_is_zero():
    h = np.random.default_rng(0).normal(size=(2, 3, 4))
    assert float(frobenius_loss(h, Tensor(h.copy())).data) == 0.0


def test_frobenius_averages_per_sample_norms():
    ht = np.zeros((2, 1, 2))
    hs = np.array([[[3.0, 4.0]], [[0.0, 1.0]]])
    assert float(frobenius_loss(ht, Tensor(hs)).data) == pytest.approx((5.0 + 1.0) / 2)


def reference_terms(seed=0):
    rng = np.random.default_rng(seed)
    zt = rng.normal(size=(2, 3, 5))
    zs = Tensor(rng.normal(size=(2, 3, 5)))
    y = rng.integers(0, 5, size=(2, 3))
    ht = rng.normal(size=(2, 3, 4))
    hs = Tensor(rng.normal(size=(2, 3, 4)))
    return zt, zs, y, ht, hs


def test_beta_zero_is_two_term_loss():
    zt, zs, y, ht, hs = reference_terms()
    w = DistillWeights(alpha_k=0.7, temp_k=1.6)
    ce, kd = cross_entropy(zs, y), kd_loss(zt, zs, 1.6)
    total = combined_loss(ce, kd, frobenius_loss(ht, hs), w, hs.size)
    expected = 0.3 * float(ce.data) + 0.7 * 1.6**2 * float(kd.data)
    assert abs(float(total.data) - expected) < 1e-12


def test_alpha_beta_zero_collapses_to_ce():
    zt, zs, y, ht, hs = reference_terms(1)
    ce = cross_entropy(zs, y)
    total = combined_loss(ce, kd_loss(zt, zs, 2.0), frobenius_loss(ht, hs), DistillWeights(0.0, 2.0, 0.0), hs.size)
    assert float(total.data) == float(ce.data)


def test_three_term_loss_and_float_reconstruction_agree():
    zt, zs, y, ht, hs = reference_terms(2)
    w = DistillWeights(alpha_k=0.3, temp_k=1.2, beta_k=0.1)
    ce, kd, fr = cross_entropy(zs, y), kd_loss(zt, zs, 1.2), frobenius_loss(ht, hs)
    total = float(combined_loss(ce, kd, fr, w, hs.size).data)
    rebuilt = combine_values(float(ce.data), float(kd.data), float(fr.data), 0.3, 1.2, 0.1, hs.size)
    assert abs(total - rebuilt) < 1e-12
    manual = 0.6 * float(ce.data) + 0.3 * 1.44 * float(kd.data) + 0.1 * float(fr.data) / math.sqrt(hs.size)
    assert abs(total - manual) < 1e-12


def test_t_squared_flag_drops_temperature_factor():
    zt, zs, y, ht, hs = reference_terms(3)
    ce, kd = cross_entropy(zs, y), kd_loss(zt, zs, 2.0)
    w = DistillWeights(0.5, 2.0)
    on = float(combined_loss(ce, kd, None, w, hs.size, t_squared=True).data)
    off = float(combined_loss(ce, kd, None, w, hs.size, t_squared=False).data)
    assert on - off == pytest.approx(0.5 * 3.0 * float(kd.data), abs=1e-12)


def test_weights_validation():
    with pytest.raises(ValueError):
        DistillWeights(0.8, 1.0, 0.3)
    with pytest.raises(ValueError):
        DistillWeights(0.5, 0.0)
    with pytest.raises(ValueError):
        DistillWeights(-0.1, 1.0)


def test_beta_without_frobenius_term_raises():
    zt, zs, y, _, hs = reference_terms()
    with pytest.raises(ValueError):
        combined_loss(cross_entropy(zs, y), kd_loss(zt, zs, 1.0), None, DistillWeights(0.3, 1.0, 0.1), hs.size)
