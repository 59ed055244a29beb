"""Synthetic ellipsoid phantoms used in place of real MRI volumes.

Random numbers come from NumPy's ``Generator(PCG64(seed))``.  Draw order per
phantom is fixed: ellipsoid count, then for each ellipsoid three radii, three
centre coordinates and one intensity (all uniform), then the background noise
field (``standard_normal`` over the whole volume, row-major).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Tuple

import numpy as np

from ..graph import Precision
from .volume import Sample, Volume


@dataclass(frozen=True)
class PhantomSpec:
    dims: Tuple[int, int, int] = (32, 32, 32)
    num_ellipsoids: Tuple[int, int] = (1, 3)
    radius: Tuple[float, float] = (3.0, 7.0)
    intensity: Tuple[float, float] = (1.0, 2.0)
    noise_std: float = 0.35
    seed: int = 0
    precision: Precision = Precision.SINGLE

    def __post_init__(self) -> None:
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))
        object.__setattr__(self, "precision", Precision.parse(self.precision))

    def validate(self) -> None:
        lo, hi = self.num_ellipsoids
        if lo < 0 or hi < lo:
            raise ValueError(f"num_ellipsoids range {self.num_ellipsoids} is empty or negative")
        rlo, rhi = self.radius
        if rlo <= 0 or rhi < rlo:
            raise ValueError(f"radius range {self.radius} is empty or non-positive")
        ilo, ihi = self.intensity
        if ihi < ilo:
            raise ValueError(f"intensity range {self.intensity} is empty")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if len(self.dims) != 3 or any(d < 1 for d in self.dims):
            raise ValueError(f"dims must be three positive integers, got {self.dims}")
        if hi > 0:
            for name, d in zip("dhw", self.dims):
                if 2 * rhi > d - 1:
                    raise ValueError(f"radius up to {rhi} does not fit inside dim {name}={d}")


@dataclass(frozen=True)
class Ellipsoid:
    center: Tuple[float, float, float]
    radii: Tuple[float, float, float]
    intensity: float


def ellipsoid_mask(dims: Tuple[int, int, int], e: Ellipsoid) -> np.ndarray:
    z, y, x = np.ogrid[: dims[0], : dims[1], : dims[2]]
    (cz, cy, cx), (rz, ry, rx) = e.center, e.radii
    return ((z - cz) / rz) ** 2 + ((y - cy) / ry) ** 2 + ((x - cx) / rx) ** 2 <= 1.0


def draw_ellipsoids(spec: PhantomSpec, rng: np.random.Generator) -> List[Ellipsoid]:
    lo, hi = spec.num_ellipsoids
    count = int(rng.integers(lo, hi + 1))
    out = []
    for _ in range(count):
        radii = tuple(float(r) for r in rng.uniform(spec.radius[0], spec.radius[1], size=3))
        center = tuple(float(rng.uniform(r, d - 1 - r)) for r, d in zip(radii, spec.dims))
        intensity = float(rng.uniform(*spec.intensity))
        out.append(Ellipsoid(center, radii, intensity))
    return out


def generate_phantom(spec: PhantomSpec) -> Sample:
    spec.validate()
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    ellipsoids = draw_ellipsoids(spec, rng)
    image = rng.standard_normal(spec.dims) * spec.noise_std
    mask = np.zeros(spec.dims, dtype=bool)
    for e in ellipsoids:
        inside = ellipsoid_mask(spec.dims, e)
        image[inside] += e.intensity
        mask |= inside
    return Sample(
        image=Volume(image, spec.precision),
        mask=Volume(mask.astype(spec.precision.dtype), spec.precision),
    )


def phantom_corpus(spec: PhantomSpec, count: int) -> List[Sample]:
    """``count`` phantoms with seeds ``spec.seed, spec.seed + 1, ...``."""
    return [generate_phantom(replace(spec, seed=spec.seed + i)) for i in range(count)]
