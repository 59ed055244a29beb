"""Segmentation losses on sigmoid probabilities, with analytic gradients."""

from __future__ import annotations

from typing import Tuple

import numpy as np

LOSS_KINDS = ("bce", "soft_dice", "bce_plus_dice")


def _check(pred: np.ndarray, target: np.ndarray) -> None:
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match target shape {target.shape}")


def soft_dice_loss(pred: np.ndarray, target: np.ndarray, smooth: float = 1.0) -> float:
    _check(pred, target)
    inter = float(np.sum(pred * target, dtype=np.float64))
    total = float(np.sum(pred, dtype=np.float64) + np.sum(target, dtype=np.float64))
    return 1.0 - (2.0 * inter + smooth) / (total + smooth)


def soft_dice_grad(pred: np.ndarray, target: np.ndarray, smooth: float = 1.0) -> np.ndarray:
    _check(pred, target)
    num = 2.0 * float(np.sum(pred * target, dtype=np.float64)) + smooth
    den = float(np.sum(pred, dtype=np.float64) + np.sum(target, dtype=np.float64)) + smooth
    # d/dp of -(num/den) = -(2 t den - num) / den^2
    return (-(2.0 * target * den - num) / (den * den)).astype(pred.dtype, copy=False)


def bce_loss(pred: np.ndarray, target: np.ndarray, epsilon: float = 1e-7) -> float:
    _check(pred, target)
    p = np.clip(pred, epsilon, 1.0 - epsilon)
    terms = target * np.log(p) + (1.0 - target) * np.log1p(-p)
    return float(-np.mean(terms, dtype=np.float64))


def bce_grad(pred: np.ndarray, target: np.ndarray, epsilon: float = 1e-7) -> np.ndarray:
    _check(pred, target)
    p = np.clip(pred, epsilon, 1.0 - epsilon)
    g = (p - target) / (p * (1.0 - p)) / pred.size
    # The clamp is flat outside [eps, 1-eps].
    g[(pred < epsilon) | (pred > 1.0 - epsilon)] = 0
    return g.astype(pred.dtype, copy=False)


def loss_value(kind: str, pred: np.ndarray, target: np.ndarray) -> float:
    if kind == "bce":
        return bce_loss(pred, target)
    if kind == "soft_dice":
        return soft_dice_loss(pred, target)
    if kind == "bce_plus_dice":
        return bce_loss(pred, target) + soft_dice_loss(pred, target)
    raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


def loss_and_grad(kind: str, pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    if kind == "bce":
        return bce_loss(pred, target), bce_grad(pred, target)
    if kind == "soft_dice":
        return soft_dice_loss(pred, target), soft_dice_grad(pred, target)
    if kind == "bce_plus_dice":
        g = bce_grad(pred, target)
        g += soft_dice_grad(pred, target)
        return bce_loss(pred, target) + soft_dice_loss(pred, target), g
    raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")
