import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrsr.quant import RoiMask, T2Map, echo_decay, estimate_t2, roi_mean_t2
from mrsr.volume import MultiEchoVolume, ScanParams

PARAMS = ScanParams.dess_default()


def dual(s1, s2):
    s1 = np.asarray(s1, dtype=np.float64)
    s2 = np.asarray(s2, dtype=np.float64)
    return MultiEchoVolume(np.stack([s1, s2]).reshape((2,) + s1.shape), (1, 1, 1))


def test_closed_form_32ms():
    m = estimate_t2(dual(np.ones((1, 1, 1)), np.full((1, 1, 1), math.exp(-1))), PARAMS)
    assert m.valid[0, 0, 0]
    assert m.values[0, 0, 0] == pytest.approx(32.0, rel=1e-12)


def test_equal_echoes_are_masked():
    m = estimate_t2(dual(np.ones((2, 2, 2)), np.ones((2, 2, 2))), PARAMS)
    assert not m.valid.any()
    assert np.all(np.isfinite(m.values))


def test_masking_rules():
    s1 = np.array([1.0, 1e-9, 1.0, 1.0, 1.0]).reshape(5, 1, 1)
    s2 = np.array([0.5, 1e-10, 0.0, 1.2, 0.999999]).reshape(5, 1, 1)
    m = estimate_t2(dual(s1, s2), PARAMS)
    # floor, zero second echo, growth, and an out-of-range T2
    assert m.valid.ravel().tolist() == [True, False, False, False, False]


def test_round_trip_35_2():
    s1 = np.random.default_rng(0).uniform(0.2, 1.0, (4, 5, 6))
    m = estimate_t2(dual(s1, s1 * echo_decay(35.2, PARAMS)), PARAMS)
    assert m.valid.all()
    assert np.max(np.abs(m.values - 35.2)) <= 1e-9 * 35.2


def test_rejects_single_echo():
    with pytest.raises(ValueError):
        estimate_t2(MultiEchoVolume(np.ones((1, 2, 2, 2)), (1, 1, 1)), PARAMS)


def test_ratio_correction_slot():
    s1 = np.ones((1, 1, 1))
    k = 0.9
    m = estimate_t2(dual(s1, s1 * echo_decay(40.0, PARAMS, k=k)), PARAMS, k=k)
    assert m.values[0, 0, 0] == pytest.approx(40.0, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), scale=st.floats(1e-3, 1e3))
def test_scale_invariance(seed, scale):
    rng = np.random.default_rng(seed)
    t2 = rng.uniform(20, 60, (3, 4, 5))
    s1 = rng.uniform(0.1, 1.0, t2.shape)
    base = estimate_t2(dual(s1, s1 * echo_decay(t2, PARAMS)), PARAMS, signal_floor=0)
    scaled = estimate_t2(dual(scale * s1, scale * s1 * echo_decay(t2, PARAMS)), PARAMS, signal_floor=0)
    assert np.array_equal(base.valid, scaled.valid)
    np.testing.assert_allclose(scaled.values, base.values, rtol=1e-12)


def test_scale_invariance_exact_power_of_two():
    rng = np.random.default_rng(3)
    s1 = rng.uniform(0.1, 1.0, (4, 4, 4))
    s2 = s1 * echo_decay(rng.uniform(20, 60, s1.shape), PARAMS)
    base = estimate_t2(dual(s1, s2), PARAMS)
    scaled = estimate_t2(dual(4 * s1, 4 * s2), PARAMS)
    assert np.array_equal(base.values, scaled.values)


def test_monotone_in_second_echo():
    s2 = np.linspace(0.05, 0.95, 50)
    m = estimate_t2(dual(np.ones((50, 1, 1)), s2.reshape(50, 1, 1)), PARAMS, t2_range=(0, 1e6))
    assert m.valid.all()
    assert np.all(np.diff(m.values.ravel()) > 0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_round_trip_property(seed):
    rng = np.random.default_rng(seed)
    t2 = rng.uniform(1.0, 100.0, (3, 3, 3))
    s1 = rng.uniform(0.01, 1.0, t2.shape)
    m = estimate_t2(dual(s1, s1 * echo_decay(t2, PARAMS)), PARAMS)
    assert np.all(np.abs(m.values[m.valid] - t2[m.valid]) <= 1e-9 * t2[m.valid])
    assert np.all(np.isfinite(m.values))


def test_roi_means():
    values = np.zeros((4, 4, 2))
    values[:2] = 30.0
    values[2:] = 50.0
    m = T2Map(values, np.ones_like(values, dtype=bool), (1, 1, 1))
    assert roi_mean_t2(m, RoiMask(np.ones_like(values, dtype=bool))) == 40.0
    uniform = T2Map(np.full((3, 3, 3), 40.0), np.ones((3, 3, 3), dtype=bool), (1, 1, 1))
    assert roi_mean_t2(uniform, RoiMask(np.ones((3, 3, 3), dtype=bool))) == 40.0


def test_roi_excludes_masked_voxels():
    values = np.zeros((15, 1, 1))
    valid = np.zeros((15, 1, 1), dtype=bool)
    values[:10] = 35.0
    valid[:10] = True
    m = T2Map(values, valid, (1, 1, 1))
    assert roi_mean_t2(m, RoiMask(np.ones((15, 1, 1), dtype=bool))) == 35.0


def test_roi_errors():
    with pytest.raises(ValueError):
        RoiMask(np.zeros((2, 2, 2), dtype=bool))
    m = T2Map(np.zeros((2, 2, 2)), np.zeros((2, 2, 2), dtype=bool), (1, 1, 1))
    with pytest.raises(ValueError):
        roi_mean_t2(m, RoiMask(np.ones((2, 2, 2), dtype=bool)))


def test_slice_pair_roi():
    region = np.ones((3, 3, 6), dtype=bool)
    roi = RoiMask.slice_pair(region, 2)
    assert roi.mask.sum() == 18
    assert roi.mask[..., 2:4].all() and not roi.mask[..., [0, 1, 4, 5]].any()
    with pytest.raises(ValueError):
        RoiMask.slice_pair(region, 5)


def test_map_volume_round_trip():
    values = np.array([0.0, 32.0, 45.5]).reshape(3, 1, 1)
    valid = np.array([False, True, True]).reshape(3, 1, 1)
    m = T2Map(values, valid, (1, 1, 1))
    t2v, maskv = m.to_volumes()
    back = T2Map.from_volumes(t2v, maskv)
    assert np.array_equal(back.valid, valid)
    assert np.array_equal(back.values, values)
