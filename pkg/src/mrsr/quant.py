"""Analytic T2 estimation from the two DESS echoes.

The echo ratio follows ``S2 / S1 = k * exp(-2 (TR - TE1) / T2)`` and is
inverted voxel-wise. ``k`` is a ratio correction (flip angle / T1 terms)
that defaults to 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import MultiEchoVolume, ScanParams

DEFAULT_RANGE = (0.0, 100.0)
DEFAULT_SIGNAL_FLOOR = 1e-6


@dataclass(frozen=True, eq=False)
class T2Map:
    """T2 in ms per voxel plus an explicit validity mask.

    Invalid voxels hold 0 in ``values`` and are always False in ``valid``.
    """

    values: np.ndarray
    valid: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self):
        if self.values.shape != self.valid.shape or self.values.ndim != 3:
            raise ValueError("values and valid must be congruent 3D arrays")
        if not np.all(np.isfinite(self.values[self.valid])):
            raise ValueError("valid voxels must be finite")

    @property
    def dims(self):
        return self.values.shape

    def to_volumes(self) -> tuple[MultiEchoVolume, MultiEchoVolume]:
        t2 = np.where(self.valid, self.values, 0.0)
        return (
            MultiEchoVolume(t2[None], self.spacing),
            MultiEchoVolume(self.valid.astype(np.float64)[None], self.spacing),
        )

    @classmethod
    def from_volumes(cls, t2: MultiEchoVolume, mask: MultiEchoVolume) -> T2Map:
        if t2.dims != mask.dims:
            raise ValueError("T2 and mask volumes differ in shape")
        valid = mask.data[0] > 0.5
        return cls(np.where(valid, t2.data[0].astype(np.float64), 0.0), valid, t2.spacing)


@dataclass(frozen=True, eq=False)
class RoiMask:
    mask: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.ndim != 3:
            raise ValueError("ROI mask must be 3D")
        if not mask.any():
            raise ValueError("ROI mask selects no voxels")
        object.__setattr__(self, "mask", mask)

    @classmethod
    def slice_pair(cls, region: np.ndarray, z0: int) -> RoiMask:
        """Restrict ``region`` to the two adjacent slices ``z0`` and ``z0 + 1``."""
        region = np.asarray(region, dtype=bool)
        if not 0 <= z0 < region.shape[2] - 1:
            raise ValueError(f"slice pair starting at {z0} is outside the volume")
        out = np.zeros_like(region)
        out[..., z0 : z0 + 2] = region[..., z0 : z0 + 2]
        return cls(out)

    @classmethod
    def from_volume(cls, vol: MultiEchoVolume) -> RoiMask:
        return cls(vol.data[0] > 0.5)


def echo_decay(t2, params: ScanParams, k: float = 1.0):
    """Second-to-first echo ratio for the given T2 (ms)."""
    return k * np.exp(-2.0 * (params.tr - params.te1) / np.asarray(t2, dtype=np.float64))


def estimate_t2(
    vol: MultiEchoVolume,
    params: ScanParams,
    t2_range=DEFAULT_RANGE,
    signal_floor: float = DEFAULT_SIGNAL_FLOOR,
    k: float = 1.0,
) -> T2Map:
    """Voxel-wise ``T2 = 2 (TR - TE1) / ln(k S1 / S2)``.

    Voxels are marked invalid when S1 is at or below ``signal_floor``, S2 is
    not positive, the corrected ratio is not a decay, or T2 falls outside
    ``t2_range``.
    """
    if vol.echoes != 2:
        raise ValueError(f"T2 estimation needs exactly 2 echoes, got {vol.echoes}")
    span = params.tr - params.te1
    if span <= 0:
        raise ValueError("TR - TE1 must be positive")
    if k <= 0:
        raise ValueError("ratio correction k must be positive")
    t2_min, t2_max = t2_range
    s1 = vol.data[0].astype(np.float64)
    s2 = vol.data[1].astype(np.float64)
    evaluable = (s1 > signal_floor) & (s2 > 0) & (s2 < k * s1)
    t2 = np.zeros_like(s1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t2[evaluable] = 2.0 * span / np.log(k * s1[evaluable] / s2[evaluable])
    valid = evaluable & np.isfinite(t2) & (t2 >= t2_min) & (t2 <= t2_max)
    t2[~valid] = 0.0
    return T2Map(t2, valid, vol.spacing)


def roi_mean_t2(t2map: T2Map, roi: RoiMask) -> float:
    """Mean T2 over valid voxels inside the ROI (pooled across slices)."""
    if roi.mask.shape != t2map.dims:
        raise ValueError(f"ROI shape {roi.mask.shape} != map shape {t2map.dims}")
    sel = roi.mask & t2map.valid
    if not sel.any():
        raise ValueError("ROI contains no valid T2 voxels")
    return float(np.mean(t2map.values[sel]))
