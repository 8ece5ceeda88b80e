"""Through-plane (z) resampling.

``degrade_slices`` simulates a thick-slice acquisition by low-pass filtering
along z with a linear-phase FIR filter and keeping every ``factor``-th slice.
``tricubic_upsample`` and ``fourier_upsample`` are the non-learning baselines
that map slice ``i`` back to fine index ``i * factor``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .volume import MultiEchoVolume

KEYS_A = -0.5


@dataclass(frozen=True)
class FilterTaps:
    taps: np.ndarray
    cutoff: float

    @property
    def order(self) -> int:
        return len(self.taps) - 1

    def response(self, freq) -> np.ndarray:
        """Complex DTFT of the taps at ``freq`` (cycles/sample)."""
        freq = np.atleast_1d(np.asarray(freq, dtype=np.float64))
        k = np.arange(len(self.taps))
        return np.exp(-2j * np.pi * freq[:, None] * k[None, :]) @ self.taps


def design_lowpass(order: int = 48, cutoff: float = 0.25) -> FilterTaps:
    """Hamming-windowed sinc low-pass filter with unit DC gain.

    Parameters
    ----------
    order : int
        Filter order (even); the filter has ``order + 1`` taps.
    cutoff : float
        Cutoff in cycles/sample, strictly inside (0, 0.5).
    """
    if order < 2 or order % 2:
        raise ValueError(f"order must be an even integer >= 2, got {order}")
    if not 0 < cutoff < 0.5:
        raise ValueError(f"cutoff must lie in (0, 0.5), got {cutoff}")
    # Built from |k| so the taps are exactly symmetric.
    k = np.abs(np.arange(order + 1) - order // 2).astype(np.float64)
    window = 0.54 + 0.46 * np.cos(2 * np.pi * k / order)
    taps = 2 * cutoff * np.sinc(2 * cutoff * k) * window
    taps = taps / taps.sum()
    return FilterTaps(taps=taps, cutoff=float(cutoff))


def reflect_index(idx, n: int) -> np.ndarray:
    """Mirror indices into ``[0, n)`` without repeating the edge sample."""
    idx = np.asarray(idx)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def filter_z(data: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Zero-phase FIR filtering along the last axis with mirrored boundaries."""
    half = (len(taps) - 1) // 2
    nz = data.shape[-1]
    padded = data[..., reflect_index(np.arange(-half, nz + half), nz)]
    windows = sliding_window_view(padded, len(taps), axis=-1)
    return windows @ taps[::-1]


def degrade_slices(vol: MultiEchoVolume, factor: int = 2, taps: FilterTaps | None = None) -> MultiEchoVolume:
    """Anti-alias along z and decimate by ``factor`` keeping slice 0."""
    if factor < 2:
        raise ValueError(f"factor must be >= 2, got {factor}")
    if taps is None:
        taps = design_lowpass(48, 0.5 / factor)
    nz = vol.dims[2]
    if nz < taps.order // 2 + 1:
        raise ValueError(
            f"volume has {nz} slices; at least {taps.order // 2 + 1} needed for a {taps.order}-order filter"
        )
    filtered = filter_z(vol.data.astype(np.float64), taps.taps)
    sx, sy, sz = vol.spacing
    out = filtered[..., ::factor].astype(vol.data.dtype)
    return MultiEchoVolume(out, (sx, sy, sz * factor))


def keys_kernel(s, a: float = KEYS_A) -> np.ndarray:
    s = np.abs(np.asarray(s, dtype=np.float64))
    near = ((a + 2) * s - (a + 3)) * s * s + 1
    far = ((a * s - 5 * a) * s + 8 * a) * s - 4 * a
    return np.where(s <= 1, near, np.where(s < 2, far, 0.0))


def tricubic_upsample(vol: MultiEchoVolume, factor: int) -> MultiEchoVolume:
    """Cubic-convolution interpolation along z (in-plane axes untouched)."""
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    nz = vol.dims[2]
    if nz < 4:
        raise ValueError(f"cubic interpolation needs nz >= 4, got {nz}")
    sx, sy, sz = vol.spacing
    if factor == 1:
        return MultiEchoVolume(vol.data, (sx, sy, sz))
    data = vol.data.astype(np.float64)
    out = np.empty(data.shape[:3] + (nz * factor,), dtype=np.float64)
    base = np.arange(nz)
    for phase in range(factor):
        frac = phase / factor
        if phase == 0:
            out[..., 0::factor] = data
            continue
        acc = np.zeros(data.shape, dtype=np.float64)
        for m in (-1, 0, 1, 2):
            acc += keys_kernel(frac - m) * data[..., reflect_index(base + m, nz)]
        out[..., phase::factor] = acc
    return MultiEchoVolume(out.astype(vol.data.dtype), (sx, sy, sz / factor))


def fourier_upsample(vol: MultiEchoVolume, factor: int) -> MultiEchoVolume:
    """Band-limited interpolation along z by zero-padding the spectrum.

    For even ``nz`` the Nyquist bin is split evenly between the positive and
    negative halves of the padded spectrum so the result stays real and passes
    through the original samples.
    """
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    sx, sy, sz = vol.spacing
    if factor == 1:
        return MultiEchoVolume(vol.data, (sx, sy, sz))
    n = vol.dims[2]
    m = n * factor
    spec = np.fft.rfft(vol.data.astype(np.float64), axis=-1)
    padded = np.zeros(spec.shape[:-1] + (m // 2 + 1,), dtype=np.complex128)
    if n % 2 == 0:
        padded[..., : n // 2] = spec[..., : n // 2]
        padded[..., n // 2] = 0.5 * spec[..., n // 2]
    else:
        padded[..., : (n + 1) // 2] = spec
    out = np.fft.irfft(padded, n=m, axis=-1) * factor
    return MultiEchoVolume(out.astype(vol.data.dtype), (sx, sy, sz / factor))
