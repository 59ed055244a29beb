from __future__ import annotations

from typing import NamedTuple

import numpy as np


class Confusion(NamedTuple):
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def dice(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 1.0 if denom == 0 else 2 * self.tp / denom

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total


def _as_binary(mask: np.ndarray, name: str) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.dtype == bool:
        return mask
    if not np.all((mask == 0) | (mask == 1)):
        raise ValueError(f"{name} must be binary (values in {{0, 1}})")
    return mask.astype(bool)


def confusion_voxels(pred_mask: np.ndarray, target_mask: np.ndarray) -> Confusion:
    p = _as_binary(pred_mask, "pred_mask")
    t = _as_binary(target_mask, "target_mask")
    if p.shape != t.shape:
        raise ValueError(f"mask shapes differ: {p.shape} vs {t.shape}")
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return Confusion(tp, fp, fn, p.size - tp - fp - fn)


def dice_coefficient(pred_mask: np.ndarray, target_mask: np.ndarray) -> float:
    """2|A∩B| / (|A|+|B|); 1.0 when both masks are empty."""
    return confusion_voxels(pred_mask, target_mask).dice


def accuracy(pred_mask: np.ndarray, target_mask: np.ndarray) -> float:
    return confusion_voxels(pred_mask, target_mask).accuracy
