from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..graph import Precision


@dataclass(frozen=True, eq=False)
class Volume:
    """Single-channel voxel grid stored row-major as ``(d, h, w)``."""

    data: np.ndarray
    precision: Precision = Precision.SINGLE

    def __post_init__(self) -> None:
        precision = Precision.parse(self.precision)
        object.__setattr__(self, "precision", precision)
        data = np.ascontiguousarray(self.data, dtype=precision.dtype)
        if data.ndim != 3:
            raise ValueError(f"volume data must be 3-D (d,h,w), got shape {data.shape}")
        object.__setattr__(self, "data", data)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(self.data.shape)

    def same_as(self, other: "Volume") -> bool:
        """Bitwise equality of precision, dims and payload."""
        return (
            self.precision is other.precision
            and self.dims == other.dims
            and self.data.tobytes() == other.data.tobytes()
        )


@dataclass(frozen=True, eq=False)
class Sample:
    image: Volume
    mask: Volume

    def __post_init__(self) -> None:
        if self.image.dims != self.mask.dims:
            raise ValueError(f"image dims {self.image.dims} differ from mask dims {self.mask.dims}")
        m = self.mask.data
        if not np.all((m == 0) | (m == 1)):
            raise ValueError("mask values must be 0 or 1")

    def same_as(self, other: "Sample") -> bool:
        return self.image.same_as(other.image) and self.mask.same_as(other.mask)
