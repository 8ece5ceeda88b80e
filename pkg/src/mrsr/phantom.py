"""Synthetic dual-echo phantoms with known T2.

Signals follow ``S1 = rho`` and ``S2 = rho * exp(-2 (TR - TE1) / T2)``.
Structures are painted in list order, so later structures overwrite earlier
ones where they overlap. Geometry is given in millimetres, measured from the
centre of voxel (0, 0, 0).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .quant import DEFAULT_RANGE, T2Map, echo_decay
from .volume import MultiEchoVolume, ScanParams


@dataclass(frozen=True)
class Slab:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    rho: float
    t2: float
    shape: str = field(default="slab", init=False)

    def regions(self, coords):
        inside = np.ones(coords[0].shape, dtype=bool)
        for c, lo, hi in zip(coords, self.lo, self.hi):
            inside &= (c >= lo) & (c <= hi)
        return [(inside, self.rho, self.t2)]


@dataclass(frozen=True)
class Ellipsoid:
    center: tuple[float, float, float]
    radii: tuple[float, float, float]
    rho: float
    t2: float
    shape: str = field(default="ellipsoid", init=False)

    def regions(self, coords):
        return [(_inside_ellipsoid(coords, self.center, self.radii), self.rho, self.t2)]


@dataclass(frozen=True)
class LayeredShell:
    """Concentric ellipsoidal layers listed from the outer surface inwards.

    ``layers`` holds ``(thickness_mm, rho, t2)``; the core inside the last
    layer is left untouched.
    """

    center: tuple[float, float, float]
    radii: tuple[float, float, float]
    layers: tuple[tuple[float, float, float], ...]
    shape: str = field(default="layered-shell", init=False)

    def regions(self, coords):
        out = []
        depth = 0.0
        for thickness, rho, t2 in self.layers:
            outer = tuple(r - depth for r in self.radii)
            depth += thickness
            inner = tuple(r - depth for r in self.radii)
            region = _inside_ellipsoid(coords, self.center, outer)
            if min(inner) > 0:
                region &= ~_inside_ellipsoid(coords, self.center, inner)
            out.append((region, rho, t2))
        return out

    def layer_mask(self, coords, index: int) -> np.ndarray:
        return self.regions(coords)[index][0]


def _inside_ellipsoid(coords, center, radii):
    if min(radii) <= 0:
        return np.zeros(coords[0].shape, dtype=bool)
    r2 = sum(((c - c0) / r) ** 2 for c, c0, r in zip(coords, center, radii))
    return r2 <= 1.0


_SHAPES = {"slab": Slab, "ellipsoid": Ellipsoid, "layered-shell": LayeredShell}


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    structures: tuple
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.structures:
            raise ValueError("a phantom needs at least one structure")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        for s in self.structures:
            params = s.layers if isinstance(s, LayeredShell) else [(None, s.rho, s.t2)]
            for _, rho, t2 in params:
                if not 0 < rho <= 1:
                    raise ValueError(f"proton density {rho} outside (0, 1]")
                if not DEFAULT_RANGE[0] < t2 <= DEFAULT_RANGE[1]:
                    raise ValueError(f"T2 {t2} ms outside {DEFAULT_RANGE}")

    def coords(self):
        axes = [np.arange(n) * s for n, s in zip(self.dims, self.spacing)]
        return np.meshgrid(*axes, indexing="ij")

    def to_json(self) -> dict:
        out = {
            "dims": list(self.dims),
            "spacing": list(self.spacing),
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
            "structures": [],
        }
        for s in self.structures:
            d = asdict(s)
            d["shape"] = s.shape
            out["structures"].append(d)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> PhantomSpec:
        structures = []
        for s in obj["structures"]:
            s = dict(s)
            kind = s.pop("shape")
            if kind not in _SHAPES:
                raise ValueError(f"unknown structure shape {kind!r}")
            if kind == "layered-shell":
                s["layers"] = tuple(tuple(layer) for layer in s["layers"])
            for key in ("lo", "hi", "center", "radii"):
                if key in s:
                    s[key] = tuple(s[key])
            structures.append(_SHAPES[kind](**s))
        return cls(
            dims=tuple(obj["dims"]),
            spacing=tuple(obj["spacing"]),
            structures=tuple(structures),
            noise_sigma=float(obj.get("noise_sigma", 0.0)),
            seed=int(obj.get("seed", 0)),
        )


def generate_phantom(spec: PhantomSpec, params: ScanParams):
    """Rasterize ``spec`` into a dual-echo volume and its ground-truth T2 map."""
    coords = spec.coords()
    rho = np.zeros(spec.dims)
    t2 = np.zeros(spec.dims)
    for structure in spec.structures:
        for region, r, t in structure.regions(coords):
            rho[region] = r
            t2[region] = t
    valid = rho > 0
    s1 = rho.copy()
    s2 = np.zeros_like(rho)
    s2[valid] = rho[valid] * echo_decay(t2[valid], params)
    data = np.stack([s1, s2])
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        data = data + rng.normal(0.0, spec.noise_sigma, size=data.shape)
    truth = T2Map(np.where(valid, t2, 0.0), valid, tuple(spec.spacing))
    return MultiEchoVolume(data, spec.spacing), truth


def default_spec(
    dims=(64, 64, 64),
    spacing=(0.4, 0.4, 0.7),
    deep_t2: float = 25.0,
    superficial_t2: float = 45.0,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> PhantomSpec:
    """Background slab plus a two-layer shell, centred in the field of view."""
    extent = [(n - 1) * s for n, s in zip(dims, spacing)]
    centre = tuple(e / 2 for e in extent)
    margin = [0.1 * e for e in extent]
    slab = Slab(
        lo=tuple(m for m in margin),
        hi=tuple(e - m for e, m in zip(extent, margin)),
        rho=0.3,
        t2=30.0,
    )
    shell = LayeredShell(
        center=centre,
        radii=tuple(0.35 * e for e in extent),
        layers=((1.5, 0.9, superficial_t2), (1.5, 0.6, deep_t2)),
    )
    return PhantomSpec(tuple(dims), tuple(spacing), (slab, shell), noise_sigma, seed)


def random_spec(seed: int, dims=(64, 64, 64), spacing=(0.4, 0.4, 0.7), noise_sigma: float = 0.0) -> PhantomSpec:
    """A jittered knee-like phantom for building training sets."""
    rng = np.random.default_rng(seed)
    extent = np.array([(n - 1) * s for n, s in zip(dims, spacing)])
    structures = [
        Slab(
            lo=tuple(extent * rng.uniform(0.05, 0.15, 3)),
            hi=tuple(extent * rng.uniform(0.85, 0.95, 3)),
            rho=float(rng.uniform(0.2, 0.4)),
            t2=float(rng.uniform(25, 40)),
        )
    ]
    for _ in range(int(rng.integers(2, 5))):
        structures.append(
            Ellipsoid(
                center=tuple(extent * rng.uniform(0.25, 0.75, 3)),
                radii=tuple(extent * rng.uniform(0.05, 0.2, 3)),
                rho=float(rng.uniform(0.3, 1.0)),
                t2=float(rng.uniform(20, 60)),
            )
        )
    structures.append(
        LayeredShell(
            center=tuple(extent * rng.uniform(0.4, 0.6, 3)),
            radii=tuple(extent * rng.uniform(0.25, 0.4, 3)),
            layers=(
                (float(rng.uniform(1.0, 2.0)), float(rng.uniform(0.7, 1.0)), float(rng.uniform(38, 55))),
                (float(rng.uniform(1.0, 2.0)), float(rng.uniform(0.4, 0.7)), float(rng.uniform(20, 30))),
            ),
        )
    )
    return PhantomSpec(tuple(dims), tuple(spacing), tuple(structures), noise_sigma, seed)
