"""Regular patch grids, patch extraction and overlap-averaged reassembly."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .volume import MultiEchoVolume


@dataclass(frozen=True)
class PatchGrid:
    origins: np.ndarray  # (K, 3) int, lexicographically sorted
    patch: int
    stride: int
    dims: tuple[int, int, int]

    def __len__(self) -> int:
        return len(self.origins)


@dataclass(frozen=True)
class PatchSet:
    """Patch blocks laid out as ``(K, echo, P, P, P)``."""

    grid: PatchGrid
    blocks: np.ndarray

    def __post_init__(self):
        if len(self.blocks) != len(self.grid):
            raise ValueError(f"{len(self.blocks)} blocks for {len(self.grid)} origins")
        if not np.all(np.isfinite(self.blocks)):
            raise ValueError("patch blocks contain non-finite values")

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def echoes(self) -> int:
        return int(self.blocks.shape[1])


def axis_origins(dim: int, patch: int, stride: int) -> list[int]:
    if dim < patch:
        raise ValueError(f"dimension {dim} is smaller than patch size {patch}")
    starts = list(range(0, dim - patch + 1, stride))
    if starts[-1] != dim - patch:
        starts.append(dim - patch)
    return starts


def patch_grid(dims, patch: int = 32, stride: int = 16) -> PatchGrid:
    """Cartesian grid of patch corners covering every voxel of ``dims``.

    When ``dim - patch`` is not a multiple of ``stride`` a final origin is
    clamped to ``dim - patch``.
    """
    if patch < 1 or stride < 1:
        raise ValueError("patch and stride must be positive")
    dims = tuple(int(d) for d in dims)
    per_axis = [axis_origins(d, patch, stride) for d in dims]
    origins = np.array(list(itertools.product(*per_axis)), dtype=np.int64)
    return PatchGrid(origins=origins, patch=patch, stride=stride, dims=dims)


def extract_patches(vol: MultiEchoVolume, grid: PatchGrid) -> PatchSet:
    if tuple(vol.dims) != tuple(grid.dims):
        raise ValueError(f"grid built for {grid.dims}, volume is {vol.dims}")
    p = grid.patch
    blocks = np.empty((len(grid), vol.echoes, p, p, p), dtype=vol.data.dtype)
    for i, (x, y, z) in enumerate(grid.origins):
        blocks[i] = vol.data[:, x : x + p, y : y + p, z : z + p]
    return PatchSet(grid=grid, blocks=blocks)


def coverage(grid: PatchGrid) -> np.ndarray:
    counts = np.zeros(grid.dims, dtype=np.int32)
    p = grid.patch
    for x, y, z in grid.origins:
        counts[x : x + p, y : y + p, z : z + p] += 1
    return counts


def assemble_patches(patches: PatchSet, dims, spacing=(1.0, 1.0, 1.0)) -> MultiEchoVolume:
    """Average overlapping blocks back into a volume of shape ``dims``."""
    grid = patches.grid
    dims = tuple(int(d) for d in dims)
    if dims != tuple(grid.dims):
        raise ValueError(f"grid built for {grid.dims}, asked to assemble {dims}")
    p = grid.patch
    acc = np.zeros((patches.echoes,) + dims, dtype=np.float64)
    counts = coverage(grid)
    for (x, y, z), block in zip(grid.origins, patches.blocks):
        acc[:, x : x + p, y : y + p, z : z + p] += block
    if np.any(counts == 0):
        raise ValueError(f"{int(np.sum(counts == 0))} voxels not covered by any patch")
    return MultiEchoVolume((acc / counts).astype(patches.blocks.dtype), spacing)
