import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import firwin

from mrsr.resample import (
    degrade_slices,
    design_lowpass,
    fourier_upsample,
    keys_kernel,
    tricubic_upsample,
)
from mrsr.volume import MultiEchoVolume

# |H(0.45)| of the default 48th-order design, from a direct DTFT sum.
STOPBAND_045 = 3.135635929900881e-4


def dtft_mag(taps, f):
    return abs(sum(h * cmath.exp(-2j * math.pi * f * k) for k, h in enumerate(taps)))


def zero_phase_amplitude(taps, f):
    # signed real response of the centred (zero-phase) filter
    c = (len(taps) - 1) / 2
    return sum(h * math.cos(2 * math.pi * f * (k - c)) for k, h in enumerate(taps))


def z_profile(profile, nx=3, ny=2, echoes=2, spacing=(0.4, 0.4, 0.7)):
    profile = np.asarray(profile, dtype=np.float64)
    data = np.broadcast_to(profile, (echoes, nx, ny, len(profile))).copy()
    data[1] *= 0.5
    return MultiEchoVolume(data, spacing)


def test_default_filter_shape():
    f = design_lowpass()
    assert len(f.taps) == 49
    assert all(f.taps[i] == f.taps[48 - i] for i in range(49))
    assert abs(f.taps.sum() - 1) <= 1e-9
    assert abs(abs(f.response(0.0)[0]) - 1) <= 1e-9


def test_filter_matches_firwin():
    # firwin takes the cutoff relative to Nyquist
    np.testing.assert_allclose(design_lowpass(48, 0.25).taps, firwin(49, 0.5, window="hamming"), atol=1e-14)


def test_stopband_reference_attenuation():
    f = design_lowpass()
    assert dtft_mag(f.taps, 0.45) == pytest.approx(STOPBAND_045, rel=1e-9)
    assert abs(f.response(0.45)[0]) == pytest.approx(STOPBAND_045, rel=1e-9)


@pytest.mark.parametrize("order,cutoff", [(47, 0.25), (0, 0.25), (48, 0.0), (48, 0.5)])
def test_filter_rejects_bad_design(order, cutoff):
    with pytest.raises(ValueError):
        design_lowpass(order, cutoff)


@settings(max_examples=30, deadline=None)
@given(half=st.integers(1, 40), cutoff=st.floats(0.02, 0.48))
def test_filter_invariants(half, cutoff):
    f = design_lowpass(2 * half, cutoff)
    assert np.array_equal(f.taps, f.taps[::-1])
    assert abs(f.taps.sum() - 1) <= 1e-9


def test_degrade_preserves_constant():
    vol = MultiEchoVolume(np.full((2, 3, 3, 64), 0.7), (0.4, 0.4, 0.7))
    out = degrade_slices(vol, 2)
    assert out.dims == (3, 3, 32)
    np.testing.assert_allclose(out.data, 0.7, rtol=1e-6)


def test_degrade_reference_geometry():
    vol = MultiEchoVolume(np.zeros((1, 2, 2, 160)), (0.4, 0.4, 0.7))
    out = degrade_slices(vol, 2)
    assert out.dims[2] == 80
    assert out.spacing[2] == pytest.approx(1.4, rel=1e-6)


def test_degrade_odd_length_ceiling():
    out = degrade_slices(MultiEchoVolume(np.zeros((1, 1, 1, 51)), (1, 1, 1)), 2)
    assert out.dims[2] == 26


def test_degrade_tone_matches_dtft():
    f = 0.4
    n = 200
    vol = z_profile(np.cos(2 * np.pi * f * np.arange(n)))
    out = degrade_slices(vol, 2)
    gain = zero_phase_amplitude(design_lowpass().taps, f)
    assert abs(gain) == pytest.approx(dtft_mag(design_lowpass().taps, f), rel=1e-9)
    kept = np.arange(0, n, 2)
    expected = gain * np.cos(2 * np.pi * f * kept)
    interior = slice(13, len(kept) - 13)  # beyond the filter half-length
    assert np.max(np.abs(out.data[0, 0, 0, interior] - expected[interior])) < 1e-4


def test_degrade_too_short():
    with pytest.raises(ValueError):
        degrade_slices(MultiEchoVolume(np.zeros((1, 2, 2, 20)), (1, 1, 1)), 2)


def test_degrade_commutes_with_echo_selection():
    rng = np.random.default_rng(5)
    vol = MultiEchoVolume(rng.random((2, 3, 4, 40)), (1, 1, 1))
    both = degrade_slices(vol, 2)
    for e in range(2):
        np.testing.assert_array_equal(degrade_slices(vol.echo(e), 2).data[0], both.data[e])


def test_degrade_bounded_by_l1_norm():
    rng = np.random.default_rng(9)
    vol = MultiEchoVolume(rng.normal(size=(1, 4, 4, 60)), (1, 1, 1))
    out = degrade_slices(vol, 2)
    l1 = np.abs(design_lowpass().taps).sum()
    peak_in = np.max(np.abs(vol.data), axis=-1)
    peak_out = np.max(np.abs(out.data), axis=-1)
    assert np.all(peak_out <= l1 * peak_in + 1e-12)


def test_keys_kernel_values():
    assert keys_kernel(0.0) == 1.0
    assert keys_kernel(1.0) == 0.0
    assert keys_kernel(2.0) == 0.0
    # weights at a half-sample offset sum to one
    assert sum(keys_kernel(0.5 - m) for m in (-1, 0, 1, 2)) == pytest.approx(1.0, abs=1e-15)


def test_tricubic_identity_factor_one():
    vol = z_profile(np.random.default_rng(0).random(10))
    assert tricubic_upsample(vol, 1) == vol


def test_tricubic_linear_ramp():
    ramp = 3.0 + 0.25 * np.arange(20)
    out = tricubic_upsample(z_profile(ramp), 2)
    fine = 3.0 + 0.125 * np.arange(40)
    interior = slice(2, 40 - 4)
    np.testing.assert_allclose(out.data[0, 0, 0, interior], fine[interior], atol=1e-9, rtol=0)


def test_tricubic_constant_and_geometry():
    out = tricubic_upsample(z_profile(np.full(12, 0.3)), 3)
    assert out.dims[2] == 36
    assert out.spacing[2] == pytest.approx(0.7 / 3, rel=1e-6)
    np.testing.assert_allclose(out.data[0], 0.3, atol=1e-12)


def test_tricubic_interpolates_samples():
    vol = z_profile(np.random.default_rng(1).random(16))
    out = tricubic_upsample(vol, 2)
    np.testing.assert_array_equal(out.data[..., ::2], vol.data)


def test_tricubic_reproduces_quadratic_interior():
    # Keys a = -1/2 is third-order accurate: exact for quadratics
    z = np.arange(20, dtype=np.float64)
    out = tricubic_upsample(z_profile(0.01 * z**2), 2)
    fine = 0.01 * (np.arange(40) / 2) ** 2
    np.testing.assert_allclose(out.data[0, 0, 0, 2:36], fine[2:36], atol=1e-12)


def test_tricubic_rejects_short():
    with pytest.raises(ValueError):
        tricubic_upsample(z_profile(np.ones(3)), 2)


def test_fourier_identity_factor_one():
    vol = z_profile(np.random.default_rng(2).random(11))
    np.testing.assert_allclose(fourier_upsample(vol, 1).data, vol.data, atol=1e-9)


@pytest.mark.parametrize("n,cycles", [(16, 2), (160, 7), (80, 3), (15, 3)])
def test_fourier_band_limited_exact(n, cycles):
    f = cycles / n
    vol = z_profile(np.cos(2 * np.pi * f * np.arange(n)) + 0.5 * np.sin(2 * np.pi * 2 * f * np.arange(n)))
    out = fourier_upsample(vol, 2)
    t = np.arange(2 * n) / 2
    expected = np.cos(2 * np.pi * f * t) + 0.5 * np.sin(2 * np.pi * 2 * f * t)
    assert np.max(np.abs(out.data[0, 0, 0] - expected)) < 1e-6


def test_fourier_constant():
    out = fourier_upsample(z_profile(np.full(10, 2.5)), 2)
    np.testing.assert_allclose(out.data[0], 2.5, rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 70), factor=st.integers(1, 4), seed=st.integers(0, 2**31))
def test_fourier_passes_through_samples(n, factor, seed):
    rng = np.random.default_rng(seed)
    vol = MultiEchoVolume(rng.normal(size=(2, 2, 3, n)), (1, 1, 1))
    out = fourier_upsample(vol, factor)
    assert out.dims[2] == n * factor
    scale = np.max(np.abs(vol.data))
    assert np.max(np.abs(out.data[..., ::factor] - vol.data)) <= 1e-6 * scale
