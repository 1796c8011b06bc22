import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sharpnorm import nn, rescale
from sharpnorm.rescale import LayerPair, RowCol
from sharpnorm.trainer import mlp

from conftest import random_params


def test_row_then_column_steps(toy_params):
    step1 = rescale.row_col_rescale(toy_params, 0, 0, 10.0)
    np.testing.assert_allclose(step1.weight(0), [[0.1, 0.2], [3.0, 4.0]], rtol=1e-15)
    np.testing.assert_allclose(step1.weight(1), [[50.0, 6.0], [70.0, 8.0]], rtol=1e-15)
    step2 = rescale.row_col_rescale(step1, 0, 1, 0.1)
    np.testing.assert_allclose(step2.weight(0), [[0.1, 0.2], [30.0, 40.0]], rtol=1e-14)
    np.testing.assert_allclose(step2.weight(1), [[50.0, 0.6], [70.0, 0.8]], rtol=1e-14)
    assert (step2.weight(0) ** 2).sum() == pytest.approx(2500.05, rel=1e-12)
    assert (step2.weight(1) ** 2).sum() == pytest.approx(7401.0, rel=1e-12)


def test_original_is_untouched(toy_params):
    before = toy_params.flat.copy()
    rescale.row_col_rescale(toy_params, 0, 0, 10.0)
    rescale.layer_rescale(toy_params, 0, 1, 3.0)
    np.testing.assert_array_equal(toy_params.flat, before)


@settings(max_examples=60, deadline=None)
@given(
    st.integers(0, 2**31 - 1),
    st.floats(1e-2, 1e2),
    st.integers(0, 5),
    st.sampled_from(["row", "layer"]),
)
def test_function_is_preserved(seed, alpha, index, kind):
    net = mlp([4, 6, 5, 3])
    params = random_params(net, seed)
    x = np.random.default_rng(seed).standard_normal((8, 4))
    if kind == "row":
        moved = rescale.row_col_rescale(params, 0, index, alpha)
    else:
        moved = rescale.layer_rescale(params, 1, 2, alpha)
    scale = max(1.0, np.abs(nn.forward(net, params, x)).max())
    assert rescale.max_output_change(net, params, moved, x) <= 1e-9 * scale


def test_inverse_composition_restores():
    net = mlp([3, 4, 2])
    params = random_params(net, 1)
    for op, inv in [(RowCol(0, 2, 7.3), RowCol(0, 2, 1 / 7.3)), (LayerPair(0, 1, 0.02), LayerPair(0, 1, 50.0))]:
        back = rescale.apply(rescale.apply(params, op), inv)
        np.testing.assert_allclose(back.flat, params.flat, rtol=1e-12, atol=1e-15)


def test_unit_factor_is_identity():
    net = mlp([3, 4, 2])
    params = random_params(net, 2)
    np.testing.assert_array_equal(rescale.layer_rescale(params, 0, 1, 1.0).flat, params.flat)
    np.testing.assert_array_equal(rescale.row_col_rescale(params, 0, 1, 1.0).flat, params.flat)


def test_layer_rescale_scales_frobenius():
    net = mlp([3, 4, 2])
    params = random_params(net, 3)
    moved = rescale.layer_rescale(params, 0, 1, 4.0)
    assert (moved.weight(0) ** 2).sum() == pytest.approx(16.0 * (params.weight(0) ** 2).sum(), rel=1e-14)
    assert (moved.weight(1) ** 2).sum() == pytest.approx((params.weight(1) ** 2).sum() / 16.0, rel=1e-14)


def test_layers_must_be_adjacent():
    net = mlp([3, 4, 4, 2])
    with pytest.raises(rescale.StructureError):
        rescale.layer_rescale(random_params(net, 0), 0, 2, 2.0)


def test_parallel_branches_refused():
    net = nn.NetworkSpec([nn.ParallelSum([nn.Dense(3, 4), nn.ReLU(), nn.Dense(4, 2)], [nn.Dense(3, 2)])], (3,), 2)
    with pytest.raises(rescale.StructureError):
        rescale.row_col_rescale(random_params(net, 0), 0, 0, 2.0)


def test_conv_refused():
    net = nn.NetworkSpec([nn.Conv2d(1, 2, 2), nn.ReLU(), nn.Flatten(), nn.Dense(2, 2)], (1, 2, 2), 2)
    with pytest.raises(rescale.StructureError):
        rescale.row_col_rescale(random_params(net, 0), 0, 0, 2.0)


def test_bad_index_and_factor():
    net = mlp([3, 4, 2])
    params = random_params(net, 0)
    with pytest.raises(IndexError):
        rescale.row_col_rescale(params, 0, 4, 2.0)
    for alpha in (0.0, -1.0, np.inf):
        with pytest.raises(ValueError):
            rescale.layer_rescale(params, 0, 1, alpha)
