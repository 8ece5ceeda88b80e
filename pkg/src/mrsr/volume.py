"""Multi-echo volumes, the MRSV container format and intensity normalization.

Arrays are held as ``(echo, x, y, z)``. On disk the payload is written
echo-major with x varying fastest, i.e. a C-ordered ``(echo, z, y, x)`` block.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

MAGIC = b"MRSV"
VERSION = 1
DTYPE_FLOAT32_LE = 0
HEADER_SIZE = 32
_HEADER = struct.Struct("<4sBBBB3I3f")

Scope = Literal["per-echo", "per-volume"]


class VolumeFormatError(ValueError):
    """Base class for malformed MRSV files."""


class BadMagicError(VolumeFormatError):
    pass


class UnsupportedVersionError(VolumeFormatError):
    pass


class TruncatedPayloadError(VolumeFormatError):
    pass


class NonFiniteDataError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MultiEchoVolume:
    """A stack of co-registered 3D echoes sharing one voxel grid.

    Parameters
    ----------
    data : ndarray, shape (E, nx, ny, nz)
        Real, finite intensities. Stored read-only.
    spacing : tuple of float
        Voxel size in millimetres along (x, y, z).
    """

    data: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 3:
            data = data[None]
        if data.ndim != 4:
            raise ValueError(f"expected (echo, x, y, z) data, got shape {data.shape}")
        if data.dtype.kind != "f":
            data = data.astype(np.float64)
        if data.shape[0] < 1 or min(data.shape[1:]) < 1:
            raise ValueError(f"dims must be positive, got {data.shape}")
        if data.shape[0] > 255:
            raise ValueError("at most 255 echoes are supported")
        if not np.all(np.isfinite(data)):
            raise NonFiniteDataError("volume contains NaN or infinite values")
        # Spacing is canonicalized to float32 values so it survives the container exactly.
        spacing = tuple(float(np.float32(s)) for s in self.spacing)
        if len(spacing) != 3 or not all(s > 0 and math.isfinite(s) for s in spacing):
            raise ValueError(f"spacing must be three positive reals, got {self.spacing}")
        if data.flags.writeable:
            data = data.copy()
            data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape[1:])

    @property
    def echoes(self) -> int:
        return int(self.data.shape[0])

    def echo(self, index: int) -> MultiEchoVolume:
        return MultiEchoVolume(self.data[index : index + 1], self.spacing)

    def with_data(self, data: np.ndarray, spacing=None) -> MultiEchoVolume:
        return MultiEchoVolume(data, self.spacing if spacing is None else spacing)

    def __eq__(self, other):
        if not isinstance(other, MultiEchoVolume):
            return NotImplemented
        return (
            self.spacing == other.spacing
            and self.data.shape == other.data.shape
            and bool(np.array_equal(self.data, other.data))
        )

    __hash__ = None


@dataclass(frozen=True)
class ScanParams:
    """DESS timing: echo times, repetition time (ms) and flip angle (degrees)."""

    te1: float
    te2: float
    tr: float
    flip_deg: float

    def __post_init__(self):
        for name in ("te1", "te2", "tr"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.flip_deg <= 90:
            raise ValueError("flip_deg must lie in (0, 90]")
        if not self.te1 < self.tr:
            raise ValueError("te1 must be shorter than tr")
        if abs(self.te2 - (2 * self.tr - self.te1)) > 0.5:
            raise ValueError(
                f"te2={self.te2} inconsistent with 2*tr - te1 = {2 * self.tr - self.te1}"
            )

    @classmethod
    def dess_default(cls) -> ScanParams:
        return cls(te1=7.0, te2=39.0, tr=23.0, flip_deg=20.0)

    def to_json(self) -> dict:
        return {"te1_ms": self.te1, "te2_ms": self.te2, "tr_ms": self.tr, "flip_deg": self.flip_deg}

    @classmethod
    def from_json(cls, obj: dict) -> ScanParams:
        try:
            return cls(
                te1=float(obj["te1_ms"]),
                te2=float(obj["te2_ms"]),
                tr=float(obj["tr_ms"]),
                flip_deg=float(obj["flip_deg"]),
            )
        except KeyError as exc:
            raise ValueError(f"scan parameters missing key {exc}") from None


@dataclass(frozen=True)
class NormalizationRecord:
    """Per-group (vmin, vmax) needed to undo :func:`normalize`.

    For ``per-volume`` scope the tuples have length 1; for ``per-echo`` one
    entry per echo.
    """

    vmin: tuple[float, ...]
    vmax: tuple[float, ...]
    scope: Scope = "per-echo"

    def __post_init__(self):
        if self.scope not in ("per-echo", "per-volume"):
            raise ValueError(f"unknown normalization scope {self.scope!r}")
        if len(self.vmin) != len(self.vmax) or not self.vmin:
            raise ValueError("vmin/vmax length mismatch")
        if not all(hi > lo for lo, hi in zip(self.vmin, self.vmax)):
            raise ValueError("normalization record requires vmax > vmin")


def sidecar_path(path) -> Path:
    path = Path(path)
    name = path.name
    if name.endswith(".mrsv"):
        name = name[: -len(".mrsv")]
    return path.with_name(name + ".scan.json")


def save_volume(vol: MultiEchoVolume, path) -> None:
    """Write ``vol`` as an MRSV container (float32, little-endian)."""
    if not isinstance(vol, MultiEchoVolume):
        raise TypeError("save_volume expects a MultiEchoVolume")
    data32 = vol.data.astype("<f4")
    if not np.all(np.isfinite(data32)):
        raise NonFiniteDataError("volume overflows float32")
    nx, ny, nz = vol.dims
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_FLOAT32_LE, vol.echoes, 0, nx, ny, nz, *vol.spacing)
    payload = np.ascontiguousarray(data32.transpose(0, 3, 2, 1)).tobytes()
    _atomic_write(Path(path), header + payload)


def load_volume(path) -> MultiEchoVolume:
    """Read an MRSV container written by :func:`save_volume`."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < HEADER_SIZE:
        raise TruncatedPayloadError(f"{path}: header truncated ({len(raw)} bytes)")
    magic, version, dtype, echoes, _reserved, nx, ny, nz, sx, sy, sz = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported MRSV version {version}")
    if dtype != DTYPE_FLOAT32_LE:
        raise UnsupportedVersionError(f"{path}: unsupported dtype code {dtype}")
    expected = echoes * nx * ny * nz * 4
    have = len(raw) - HEADER_SIZE
    if have < expected:
        raise TruncatedPayloadError(
            f"{path}: payload holds {have} bytes, header ({echoes}x{nx}x{ny}x{nz}) needs {expected}"
        )
    if have > expected:
        raise VolumeFormatError(f"{path}: {have - expected} trailing bytes after payload")
    data = np.frombuffer(raw, dtype="<f4", offset=HEADER_SIZE).reshape(echoes, nz, ny, nx)
    data = data.transpose(0, 3, 2, 1).astype(np.float32)
    if not np.all(np.isfinite(data)):
        raise NonFiniteDataError(f"{path}: payload contains non-finite samples")
    return MultiEchoVolume(data, (sx, sy, sz))


def save_scan_params(params: ScanParams, path) -> None:
    _atomic_write(Path(path), (json.dumps(params.to_json(), indent=2) + "\n").encode())


def load_scan_params(path) -> ScanParams:
    with open(path) as fh:
        return ScanParams.from_json(json.load(fh))


def _atomic_write(path: Path, blob: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def normalize(vol: MultiEchoVolume, scope: Scope = "per-echo"):
    """Affinely map intensities onto [0, 1].

    Returns the normalized volume and the record needed to invert it. A
    constant group has no defined scaling and raises ``ValueError``.
    """
    data = vol.data.astype(np.float64)
    if scope == "per-echo":
        lo = data.reshape(vol.echoes, -1).min(axis=1)
        hi = data.reshape(vol.echoes, -1).max(axis=1)
    elif scope == "per-volume":
        lo, hi = np.array([data.min()]), np.array([data.max()])
    else:
        raise ValueError(f"unknown normalization scope {scope!r}")
    if np.any(hi <= lo):
        raise ValueError("cannot normalize a constant volume (vmax == vmin)")
    out = (data - lo[:, None, None, None]) / (hi - lo)[:, None, None, None]
    # Guard against rounding just outside the unit interval.
    out = np.clip(out, 0.0, 1.0)
    rec = NormalizationRecord(tuple(float(v) for v in lo), tuple(float(v) for v in hi), scope)
    return vol.with_data(out.astype(vol.data.dtype)), rec


def denormalize(vol01: MultiEchoVolume, rec: NormalizationRecord) -> MultiEchoVolume:
    lo = np.asarray(rec.vmin, dtype=np.float64)
    hi = np.asarray(rec.vmax, dtype=np.float64)
    if rec.scope == "per-echo" and lo.size != vol01.echoes:
        raise ValueError(f"record has {lo.size} echoes, volume has {vol01.echoes}")
    data = vol01.data.astype(np.float64) * (hi - lo)[:, None, None, None] + lo[:, None, None, None]
    return vol01.with_data(data.astype(vol01.data.dtype))
