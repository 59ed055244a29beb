from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from ..graph import Precision, TensorShape


@dataclass(frozen=True)
class AllocStats:
    current_live_bytes: int
    peak_live_bytes: int
    alloc_count: int
    free_count: int


class Tensor:
    """Dense row-major buffer handed out by a :class:`TrackingAllocator`."""

    __slots__ = ("data", "tag", "_freed")

    def __init__(self, data: np.ndarray, tag: Tuple):
        self.data = data
        self.tag = tag
        self._freed = False

    @property
    def nbytes(self) -> int:
        return int(self.data.nbytes)

    @property
    def shape(self) -> Optional[TensorShape]:
        return TensorShape(*self.data.shape) if self.data.ndim == 5 else None

    def __repr__(self) -> str:
        return f"Tensor(tag={self.tag!r}, shape={self.data.shape}, dtype={self.data.dtype})"


class TrackingAllocator:
    """Counts live bytes of every buffer it hands out."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._live: Dict[int, Tensor] = {}
        self.current = 0
        self.peak = 0
        self.allocs = 0
        self.frees = 0

    def alloc(self, shape, dtype, tag: Tuple = (), zero: bool = False) -> Tensor:
        data = np.zeros(shape, dtype=dtype) if zero else np.empty(shape, dtype=dtype)
        return self.adopt(data, tag)

    def adopt(self, data: np.ndarray, tag: Tuple = ()) -> Tensor:
        """Track an array produced elsewhere (it must not be tracked already)."""
        t = Tensor(np.ascontiguousarray(data), tag)
        with self._lock:
            self._live[id(t)] = t
            self.current += t.nbytes
            self.allocs += 1
            self.peak = max(self.peak, self.current)
        return t

    def free(self, t: Tensor) -> None:
        with self._lock:
            if t._freed or id(t) not in self._live:
                raise RuntimeError(f"double free or foreign tensor: {t!r}")
            del self._live[id(t)]
            t._freed = True
            self.current -= t.nbytes
            self.frees += 1
        if self.current < 0:
            raise RuntimeError("live byte count went negative")

    def reset_peak(self) -> None:
        with self._lock:
            self.peak = self.current

    def live_tags(self):
        return [t.tag for t in self._live.values()]

    def stats(self) -> AllocStats:
        return AllocStats(
            current_live_bytes=self.current,
            peak_live_bytes=self.peak,
            alloc_count=self.allocs,
            free_count=self.frees,
        )
