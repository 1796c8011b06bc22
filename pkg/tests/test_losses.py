import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sharpnorm import losses
from sharpnorm.losses import cross_entropy, nsce_loss, zero_one


def test_cross_entropy_uniform():
    assert cross_entropy([0.0, 0.0], 0) == pytest.approx(math.log(2), rel=1e-15)


def test_cross_entropy_no_overflow():
    v = cross_entropy([100.0, 0.0], 0)
    assert np.isfinite(v) and 0 <= v <= 1e-40


def test_cross_entropy_label_range():
    with pytest.raises(IndexError):
        cross_entropy([0.0, 1.0], 2)


def test_nsce_hand_value():
    # mean 0, population std 1: plain softmax cross-entropy of [1, -1]
    assert nsce_loss([1.0, -1.0], 0) == pytest.approx(math.log1p(math.exp(-2.0)), rel=1e-14)
    assert nsce_loss([1.0, -1.0], 0) == pytest.approx(0.12693, abs=5e-6)


def test_nsce_scale_example():
    assert nsce_loss([2.0, -2.0], 0) == pytest.approx(nsce_loss([1.0, -1.0], 0), rel=1e-15)


@pytest.mark.parametrize("label", [0, 1, 2])
def test_nsce_constant_logits_give_uniform(label):
    assert nsce_loss([3.5, 3.5, 3.5], label) == pytest.approx(math.log(3), rel=1e-14)


def test_nsce_two_classes_is_piecewise_constant():
    # with K=2 the normalized logit gap is always +-2
    rng = np.random.default_rng(0)
    for z in rng.standard_normal((50, 2)) * 10:
        assert nsce_loss(z, 0) in (pytest.approx(math.log1p(math.exp(-2))), pytest.approx(math.log1p(math.exp(2))))


def test_zero_one_examples():
    assert zero_one([0.9, 0.1], 0) == 0
    assert zero_one([0.5, 0.5], 1) == 1
    assert zero_one([0.5, 0.5], 0) == 0


logits = arrays(np.float64, st.integers(2, 12), elements=st.floats(-20, 20))


@settings(max_examples=200, deadline=None)
@given(logits, st.floats(1e-3, 1e3), st.data())
def test_nsce_positive_scale_invariance(z, c, data):
    if np.std(z) < 1e-6:
        return
    y = data.draw(st.integers(0, len(z) - 1))
    assert nsce_loss(c * z, y) == pytest.approx(nsce_loss(z, y), rel=1e-12, abs=1e-13)


@settings(max_examples=200, deadline=None)
@given(logits, st.floats(-50, 50), st.data())
def test_nsce_shift_invariance(z, s, data):
    if np.std(z) < 1e-3:
        return
    y = data.draw(st.integers(0, len(z) - 1))
    assert nsce_loss(z + s, y) == pytest.approx(nsce_loss(z, y), rel=1e-9, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(logits, st.data())
def test_cross_entropy_nonnegative_and_shift_invariant(z, data):
    y = data.draw(st.integers(0, len(z) - 1))
    v = cross_entropy(z, y)
    assert v >= 0
    assert cross_entropy(z + 7.25, y) == pytest.approx(v, rel=1e-9, abs=1e-12)


def test_cross_entropy_tends_to_zero():
    values = [cross_entropy([m, 0.0, 0.0], 0) for m in (1.0, 5.0, 20.0, 60.0)]
    assert values == sorted(values, reverse=True)
    assert values[-1] < 1e-25


def test_batch_mean_equals_mean_of_samples():
    rng = np.random.default_rng(4)
    z = rng.standard_normal((17, 4))
    y = rng.integers(0, 4, 17)
    for loss, single in [("ce", cross_entropy), ("nsce", nsce_loss), ("zero_one", zero_one)]:
        per = np.array([single(z[n], y[n]) for n in range(17)], dtype=np.float64)
        assert losses.mean_loss(loss, z, y) == per.sum() / 17


def test_zero_one_has_no_gradient():
    with pytest.raises(losses.UnsupportedLossError):
        losses.batch_loss("zero_one", np.zeros((1, 2)), [0])
    with pytest.raises(losses.UnsupportedLossError):
        losses.as_loss_id("hinge")
