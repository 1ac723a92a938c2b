import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cl4ctr import numcore as nc
from cl4ctr.augment import (InstanceStream, MaskSpec, dimension_mask, feature_mask, make_views,
                            num_masked_fields, perturb, random_mask)


def E_of(shape, seed=0):
    # strictly nonzero so that zeros in the output come from the mask
    return nc.Tensor(np.random.default_rng(seed).uniform(0.5, 1.5, shape))


@pytest.mark.parametrize("op", [random_mask, feature_mask, dimension_mask])
def test_p_zero_identity_and_p_one_zero(op, rng):
    E = E_of((4, 5))
    np.testing.assert_array_equal(op(E, 0.0, rng).data, E.data)
    np.testing.assert_array_equal(op(E, 1.0, rng).data, 0.0)


def test_random_mask_fraction(rng):
    out = random_mask(E_of((1000, 1000)), 0.4, rng).data
    assert abs((out == 0).mean() - 0.4) < 3 * math.sqrt(0.4 * 0.6 / 1e6)


def test_random_mask_no_rescale(rng):
    E = E_of((20, 30))
    out = random_mask(E, 0.3, rng).data
    kept = out != 0
    np.testing.assert_array_equal(out[kept], E.data[kept])


def test_feature_mask_exact_rows(rng):
    out = feature_mask(E_of((50, 10, 4)), 0.3, rng).data
    zero_rows = (out == 0).all(-1).sum(-1)
    assert (zero_rows == 3).all()
    E = E_of((10, 4))
    np.testing.assert_array_equal(feature_mask(E, 0.05, rng).data, E.data)


def test_feature_mask_row_frequencies(rng):
    out = feature_mask(E_of((100_000, 5, 1)), 0.4, rng).data
    freq = (out[..., 0] == 0).mean(0)
    assert np.all(np.abs(freq - 0.4) < 0.005)


def test_dimension_mask_shared_columns(rng):
    out = dimension_mask(E_of((8, 6, 10)), 0.5, rng).data
    col_zero = out == 0
    assert (col_zero.all(1) == col_zero.any(1)).all()


def test_dimension_mask_count(rng):
    out = dimension_mask(E_of((2, 10_000)), 0.5, rng).data
    assert abs((out[0] == 0).sum() - 5000) <= 150


@given(st.floats(0, 1), st.integers(1, 40))
def test_num_masked_fields_is_floor(p, F):
    L = num_masked_fields(p, F)
    assert 0 <= L <= F
    assert L == math.floor(p * F) or abs(p * F - round(p * F)) < 1e-9


def test_views_identical_at_p_zero_differ_at_half(rng):
    E = E_of((3, 4))
    a, b = make_views(E, MaskSpec("random", 0.0), rng)
    np.testing.assert_array_equal(a.data, E.data)
    np.testing.assert_array_equal(b.data, E.data)
    a, b = make_views(E, MaskSpec("random", 1.0), rng)
    assert not a.data.any() and not b.data.any()
    differ = sum(not np.array_equal(*(v.data for v in make_views(E, MaskSpec("random", 0.5), rng)))
                 for _ in range(200))
    assert differ == 200


def test_masked_entries_have_zero_adjoint(rng):
    E = nc.parameter(np.ones((3, 4)))
    out = perturb(E, MaskSpec("random", 0.5), rng)
    g = nc.backward(nc.sum_(out), [E])[E]
    np.testing.assert_array_equal(g, (out.data != 0).astype(float))


def test_mask_spec_validation():
    with pytest.raises(ValueError):
        MaskSpec("zigzag").validate()
    with pytest.raises(ValueError):
        MaskSpec("random", 1.5).validate()


def test_instance_stream_independent_of_batch_company():
    a = InstanceStream(42, np.array([3, 7, 9])).random((3, 4))
    b = InstanceStream(42, np.array([9, 3])).random((2, 4))
    np.testing.assert_array_equal(a[2], b[0])
    np.testing.assert_array_equal(a[0], b[1])
    s = InstanceStream(42, np.array([3]))
    assert not np.array_equal(s.random((1, 4)), s.random((1, 4)))


def test_instance_stream_uniformity():
    u = InstanceStream(1, np.arange(1000)).random((1000, 100)).ravel()
    assert 0.0 <= u.min() and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.005
    with pytest.raises(ValueError):
        InstanceStream(1, np.arange(3)).random((4, 2))
