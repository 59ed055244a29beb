"""Forward and backward kernels for 5-D ``(n, c, d, h, w)`` arrays.

All kernels work one sample at a time.  When a ``pool`` (any object with an
order-preserving ``map``) is given, samples are dispatched to it; per-sample
parameter-gradient partials are always reduced in ascending sample order, so
results do not depend on the number of workers.

Convolution weights are laid out ``(k, k, k, c_in, c_out)``.  Convolution is
direct: one matrix product per kernel offset on a shifted view of the padded
input, no im2col buffer.
"""

from __future__ import annotations

from typing import Callable, Iterable, List, Optional, Tuple

import numpy as np


class NonFiniteError(FloatingPointError):
    """A kernel produced NaN or Inf while checked mode was on."""


def check_finite(name: str, *arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteError(f"{name} produced non-finite values")


def _map(pool, fn: Callable[[int], object], n: int) -> List[object]:
    if pool is None or n == 1:
        return [fn(i) for i in range(n)]
    return list(pool.map(fn, range(n)))


def _reduce_ordered(parts: Iterable[np.ndarray]) -> np.ndarray:
    parts = list(parts)
    total = parts[0].copy()
    for p in parts[1:]:
        total += p
    return total


def _check_conv(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> None:
    if x.ndim != 5:
        raise ValueError(f"conv3d input must be 5-D (n,c,d,h,w), got shape {x.shape}")
    if w.ndim != 5 or w.shape[0] != w.shape[1] or w.shape[1] != w.shape[2]:
        raise ValueError(f"conv3d weight must be (k,k,k,c_in,c_out), got shape {w.shape}")
    if w.shape[0] % 2 == 0:
        raise ValueError(f"conv3d kernel size must be odd, got {w.shape[0]}")
    if w.shape[3] != x.shape[1]:
        raise ValueError(f"conv3d weight expects {w.shape[3]} input channels, input has {x.shape[1]}")
    if b.shape != (w.shape[4],):
        raise ValueError(f"conv3d bias must have shape ({w.shape[4]},), got {b.shape}")


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (p, p), (p, p), (p, p)))


def conv3d_forward(
    x: np.ndarray, w: np.ndarray, b: np.ndarray, out: Optional[np.ndarray] = None, pool=None
) -> np.ndarray:
    _check_conv(x, w, b)
    k = w.shape[0]
    p = k // 2
    n, c_in, D, H, W = x.shape
    c_out = w.shape[4]
    if out is None:
        out = np.empty((n, c_out, D, H, W), dtype=x.dtype)

    def one(i: int) -> None:
        xp = _pad(x[i], p)
        acc = out[i].reshape(c_out, -1)
        acc[...] = b[:, None]
        for dz in range(k):
            for dy in range(k):
                for dx in range(k):
                    patch = xp[:, dz : dz + D, dy : dy + H, dx : dx + W].reshape(c_in, -1)
                    acc += w[dz, dy, dx].T @ patch

    _map(pool, one, n)
    return out


def conv3d_backward(
    g: np.ndarray,
    x: np.ndarray,
    w: np.ndarray,
    need_input_grad: bool = True,
    grad_input: Optional[np.ndarray] = None,
    pool=None,
) -> Tuple[Optional[np.ndarray], np.ndarray, np.ndarray]:
    """Return ``(grad_input, grad_weight, grad_bias)``.

    ``grad_input`` is None when ``need_input_grad`` is false.
    """
    _check_conv(x, w, np.zeros(w.shape[4], dtype=w.dtype))
    k = w.shape[0]
    p = k // 2
    n, c_in, D, H, W = x.shape
    c_out = w.shape[4]
    if g.shape != (n, c_out, D, H, W):
        raise ValueError(f"conv3d grad_out shape {g.shape} does not match expected {(n, c_out, D, H, W)}")
    if need_input_grad and grad_input is None:
        grad_input = np.empty_like(x)

    def one(i: int) -> Tuple[np.ndarray, np.ndarray]:
        xp = _pad(x[i], p)
        gi = g[i].reshape(c_out, -1)
        gw = np.empty_like(w)
        gxp = np.zeros_like(xp) if need_input_grad else None
        for dz in range(k):
            for dy in range(k):
                for dx in range(k):
                    patch = xp[:, dz : dz + D, dy : dy + H, dx : dx + W].reshape(c_in, -1)
                    gw[dz, dy, dx] = patch @ gi.T
                    if gxp is not None:
                        gxp[:, dz : dz + D, dy : dy + H, dx : dx + W] += (w[dz, dy, dx] @ gi).reshape(c_in, D, H, W)
        if gxp is not None:
            grad_input[i] = gxp[:, p : p + D, p : p + H, p : p + W]
        return gw, gi.sum(axis=1)

    parts = _map(pool, one, n)
    grad_w = _reduce_ordered(pw for pw, _ in parts)
    grad_b = _reduce_ordered(pb for _, pb in parts)
    return grad_input, grad_w, grad_b


def maxpool3d_forward(
    x: np.ndarray, index_dtype=np.int64, out: Optional[np.ndarray] = None, argmax: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """2x2x2 max-pool, stride 2.

    ``argmax`` holds the flat index of each winner within its sample-channel
    volume; ties go to the lowest linear index.
    """
    if x.ndim != 5:
        raise ValueError(f"maxpool3d input must be 5-D, got shape {x.shape}")
    n, c, D, H, W = x.shape
    if D % 2 or H % 2 or W % 2:
        raise ValueError(f"maxpool3d needs even spatial dims, got {(D, H, W)}")
    d2, h2, w2 = D // 2, H // 2, W // 2
    # windows: (n, c, d2, h2, w2, 8) with window offset order (dz, dy, dx) ascending,
    # which is also ascending linear index inside the volume.
    win = x.reshape(n, c, d2, 2, h2, 2, w2, 2).transpose(0, 1, 2, 4, 6, 3, 5, 7).reshape(n, c, d2, h2, w2, 8)
    local = np.argmax(win, axis=-1)  # first occurrence on ties
    if out is None:
        out = np.empty((n, c, d2, h2, w2), dtype=x.dtype)
    if argmax is None:
        argmax = np.empty((n, c, d2, h2, w2), dtype=index_dtype)
    out[...] = np.take_along_axis(win, local[..., None], axis=-1)[..., 0]
    dz, rem = np.divmod(local, 4)
    dy, dx = np.divmod(rem, 2)
    zz = 2 * np.arange(d2)[:, None, None] + dz
    yy = 2 * np.arange(h2)[None, :, None] + dy
    xx = 2 * np.arange(w2)[None, None, :] + dx
    argmax[...] = (zz * H + yy) * W + xx
    return out, argmax


def maxpool3d_backward(
    g: np.ndarray, argmax: np.ndarray, input_spatial: Tuple[int, int, int], out: Optional[np.ndarray] = None
) -> np.ndarray:
    if g.shape != argmax.shape:
        raise ValueError(f"maxpool3d grad shape {g.shape} does not match argmax shape {argmax.shape}")
    n, c = g.shape[:2]
    D, H, W = input_spatial
    if out is None:
        out = np.zeros((n, c, D, H, W), dtype=g.dtype)
    else:
        out[...] = 0
    flat = out.reshape(n, c, -1)
    # Windows do not overlap, so each target index receives at most one value.
    np.put_along_axis(flat, argmax.reshape(n, c, -1), g.reshape(n, c, -1), axis=-1)
    return out


def upsample3d_forward(x: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
    if x.ndim != 5:
        raise ValueError(f"upsample3d input must be 5-D, got shape {x.shape}")
    n, c, D, H, W = x.shape
    if out is None:
        out = np.empty((n, c, 2 * D, 2 * H, 2 * W), dtype=x.dtype)
    view = out.reshape(n, c, D, 2, H, 2, W, 2)
    view[...] = x[:, :, :, None, :, None, :, None]
    return out


def upsample3d_backward(g: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
    if g.ndim != 5 or any(v % 2 for v in g.shape[2:]):
        raise ValueError(f"upsample3d grad must be 5-D with even spatial dims, got shape {g.shape}")
    n, c, D2, H2, W2 = g.shape
    blocks = g.reshape(n, c, D2 // 2, 2, H2 // 2, 2, W2 // 2, 2)
    summed = blocks.sum(axis=(3, 5, 7))
    if out is None:
        return summed
    out[...] = summed
    return out


def relu_forward(x: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
    return np.maximum(x, 0, out=out)


def relu_backward(g: np.ndarray, y: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
    """Gradient through ReLU from its output ``y`` (gradient 0 at y == 0)."""
    if g.shape != y.shape:
        raise ValueError(f"relu grad shape {g.shape} does not match output shape {y.shape}")
    if out is None:
        out = np.empty_like(g)
    np.multiply(g, y > 0, out=out)
    return out


def sigmoid_forward(x: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
    if out is None:
        out = np.empty_like(x)
    # Split by sign so exp never overflows.
    pos = x >= 0
    ex = np.exp(-np.abs(x))
    np.divide(1.0, 1.0 + ex, out=out, where=pos)
    np.divide(ex, 1.0 + ex, out=out, where=~pos)
    return out


def sigmoid_backward(g: np.ndarray, y: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
    if g.shape != y.shape:
        raise ValueError(f"sigmoid grad shape {g.shape} does not match output shape {y.shape}")
    if out is None:
        out = np.empty_like(g)
    np.multiply(g, y * (1 - y), out=out)
    return out


def concat_forward(a: np.ndarray, b: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
    if a.shape[:1] + a.shape[2:] != b.shape[:1] + b.shape[2:]:
        raise ValueError(f"concat inputs disagree outside the channel axis: {a.shape} vs {b.shape}")
    if out is None:
        out = np.empty((a.shape[0], a.shape[1] + b.shape[1]) + a.shape[2:], dtype=a.dtype)
    out[:, : a.shape[1]] = a
    out[:, a.shape[1] :] = b
    return out


def concat_backward(g: np.ndarray, split: int) -> Tuple[np.ndarray, np.ndarray]:
    """Split a channel-concatenated gradient at channel ``split``."""
    if not 0 < split < g.shape[1]:
        raise ValueError(f"concat split {split} out of range for {g.shape[1]} channels")
    return g[:, :split], g[:, split:]
