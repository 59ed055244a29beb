"""Instrumented execution of a graph's training step.

The executor follows the same schedule as :mod:`voxplan.memplan`, and routes
every schedule buffer through a :class:`TrackingAllocator`.  The measured peak
can then be compared against the planner's prediction.
"""

from __future__ import annotations

import contextlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from threadpoolctl import threadpool_limits

from .. import losses
from ..graph import (
    Concat,
    Conv3d,
    Graph,
    GraphError,
    Input,
    MaxPool3d,
    Precision,
    ReLU,
    Sigmoid,
    Upsample3d,
    conv_in_channels,
)
from ..optim import OptimizerConfig, apply_update
from . import kernels as K
from .allocator import AllocStats, Tensor, TrackingAllocator

Params = Dict[int, Tuple[np.ndarray, np.ndarray]]


class DivergenceError(FloatingPointError):
    """The training loss became NaN or infinite."""


def init_params(graph: Graph, precision, seed: int = 0) -> Params:
    """He-normal weights, zero biases, drawn in conv-node order from PCG64(seed)."""
    precision = Precision.parse(precision)
    rng = np.random.Generator(np.random.PCG64(seed))
    params: Params = {}
    for node in graph.conv_nodes():
        k, c_out = node.kind.k, node.kind.c_out
        c_in = conv_in_channels(graph, node)
        std = math.sqrt(2.0 / (k**3 * c_in))
        w = (rng.standard_normal((k, k, k, c_in, c_out)) * std).astype(precision.dtype)
        params[node.id] = (w, np.zeros(c_out, dtype=precision.dtype))
    return params


def confusion_counts(pred: np.ndarray, target: np.ndarray, threshold: float) -> np.ndarray:
    """Per-sample ``(tp, fp, fn, tn)`` rows for a batch of probabilities."""
    n = pred.shape[0]
    p = (pred >= threshold).reshape(n, -1)
    t = (target > 0.5).reshape(n, -1)
    tp = np.count_nonzero(p & t, axis=1)
    fp = np.count_nonzero(p & ~t, axis=1)
    fn = np.count_nonzero(~p & t, axis=1)
    tn = p.shape[1] - tp - fp - fn
    return np.stack([tp, fp, fn, tn], axis=1).astype(np.int64)


@dataclass(frozen=True)
class StepResult:
    loss: float
    stats: AllocStats
    confusion: np.ndarray  # (n, 4) tp, fp, fn, tn at the configured threshold


class Executor:
    """Owns parameters, gradients and optimizer state for one graph.

    ``threads`` sets how many workers the convolution kernels spread samples
    across; results are bitwise identical for every value.
    """

    def __init__(
        self,
        graph: Graph,
        params: Params,
        precision=Precision.SINGLE,
        optimizer: OptimizerConfig = OptimizerConfig("sgd"),
        loss_kind: str = "bce_plus_dice",
        threads: int = 1,
        checked: bool = False,
        threshold: float = 0.5,
    ):
        if not graph.shapes_inferred:
            raise GraphError("executor needs a graph with inferred shapes")
        if loss_kind not in losses.LOSS_KINDS:
            raise ValueError(f"unknown loss kind {loss_kind!r}")
        if threads < 1:
            raise ValueError("threads must be >= 1")
        self.graph = graph
        self.precision = Precision.parse(precision)
        self.optimizer = optimizer
        self.loss_kind = loss_kind
        self.threads = threads
        self.checked = checked
        self.threshold = threshold
        self.t = 0
        self.alloc = TrackingAllocator()
        dtype = self.precision.dtype
        self._params: Dict[int, Tuple[Tensor, Tensor]] = {}
        self._grads: Dict[int, Tuple[Tensor, Tensor]] = {}
        self._state: Dict[int, List[Tuple[Tensor, Tensor]]] = {}
        for node in graph.conv_nodes():
            w, b = params[node.id]
            nid = node.id
            self._params[nid] = (
                self.alloc.adopt(np.array(w, dtype=dtype), (nid, "parameter", "w")),
                self.alloc.adopt(np.array(b, dtype=dtype), (nid, "parameter", "b")),
            )
            self._grads[nid] = (
                self.alloc.alloc(w.shape, dtype, (nid, "param_grad", "w"), zero=True),
                self.alloc.alloc(b.shape, dtype, (nid, "param_grad", "b"), zero=True),
            )
            self._state[nid] = [
                (
                    self.alloc.alloc(w.shape, dtype, (nid, "optimizer_state", f"w{s}"), zero=True),
                    self.alloc.alloc(b.shape, dtype, (nid, "optimizer_state", f"b{s}"), zero=True),
                )
                for s in range(optimizer.state_slots)
            ]
        self._pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self) -> "Executor":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    @property
    def params(self) -> Params:
        return {nid: (w.data, b.data) for nid, (w, b) in self._params.items()}

    @property
    def resident_bytes(self) -> int:
        total = 0
        for nid in self._params:
            total += sum(t.nbytes for t in self._params[nid] + self._grads[nid])
            total += sum(t.nbytes for pair in self._state[nid] for t in pair)
        return total

    def _check(self, name: str, *arrays: np.ndarray) -> None:
        if self.checked:
            K.check_finite(name, *arrays)

    @contextlib.contextmanager
    def _blas_single(self):
        # Keep BLAS serial: parallelism comes from the sample pool only.
        with threadpool_limits(limits=1, user_api="blas"):
            yield

    # --- forward ----------------------------------------------------------

    def _forward_node(self, node, acts: Dict[int, Tensor], argmax: Dict[int, Tensor]) -> Tensor:
        dtype = self.precision.dtype
        shape = node.out_shape.as_tuple()
        tag = (node.id, "activation", "out")
        kind = node.kind
        if isinstance(kind, Conv3d):
            w, b = self._params[node.id]
            out = self.alloc.alloc(shape, dtype, tag)
            K.conv3d_forward(acts[node.inputs[0]].data, w.data, b.data, out=out.data, pool=self._pool)
        elif isinstance(kind, ReLU):
            out = self.alloc.alloc(shape, dtype, tag)
            K.relu_forward(acts[node.inputs[0]].data, out=out.data)
        elif isinstance(kind, Sigmoid):
            out = self.alloc.alloc(shape, dtype, tag)
            K.sigmoid_forward(acts[node.inputs[0]].data, out=out.data)
        elif isinstance(kind, MaxPool3d):
            out = self.alloc.alloc(shape, dtype, tag)
            idx = self.alloc.alloc(shape, self.precision.index_dtype, (node.id, "activation", "argmax"))
            K.maxpool3d_forward(acts[node.inputs[0]].data, out=out.data, argmax=idx.data)
            argmax[node.id] = idx
        elif isinstance(kind, Upsample3d):
            out = self.alloc.alloc(shape, dtype, tag)
            K.upsample3d_forward(acts[node.inputs[0]].data, out=out.data)
        elif isinstance(kind, Concat):
            out = self.alloc.alloc(shape, dtype, tag)
            a, b = node.inputs
            K.concat_forward(acts[a].data, acts[b].data, out=out.data)
        else:
            raise GraphError(f"cannot execute node kind {kind!r}")
        self._check(f"node {node.id} forward", out.data)
        return out

    def _load_input(self, batch: np.ndarray) -> Tensor:
        expected = self.graph.input_node.out_shape.as_tuple()
        if tuple(batch.shape) != expected:
            raise ValueError(f"batch shape {tuple(batch.shape)} does not match graph input {expected}")
        return self.alloc.adopt(np.array(batch, dtype=self.precision.dtype), (0, "activation", "out"))

    def predict(self, batch: np.ndarray) -> np.ndarray:
        """Forward pass only; intermediate buffers are freed after their last consumer."""
        consumers = self.graph.consumers()
        remaining = {nid: len(c) for nid, c in consumers.items()}
        acts: Dict[int, Tensor] = {}
        argmax: Dict[int, Tensor] = {}
        with self._blas_single():
            for node in self.graph.nodes:
                if isinstance(node.kind, Input):
                    acts[node.id] = self._load_input(batch)
                else:
                    acts[node.id] = self._forward_node(node, acts, argmax)
                    if node.id in argmax:
                        self.alloc.free(argmax.pop(node.id))
                    for src in node.inputs:
                        remaining[src] -= 1
                        if remaining[src] == 0 and src != self.graph.output_id:
                            self.alloc.free(acts.pop(src))
        out = acts.pop(self.graph.output_id)
        result = out.data.copy()
        self.alloc.free(out)
        for t in acts.values():
            self.alloc.free(t)
        return result

    # --- training step ----------------------------------------------------

    def train_step(self, batch: np.ndarray, targets: np.ndarray, lr: float) -> StepResult:
        graph = self.graph
        out_shape = graph.output_shape().as_tuple()
        if tuple(targets.shape) != out_shape:
            raise ValueError(f"target shape {tuple(targets.shape)} does not match graph output {out_shape}")
        targets = np.asarray(targets, dtype=self.precision.dtype)
        self.alloc.reset_peak()
        acts: Dict[int, Tensor] = {}
        argmax: Dict[int, Tensor] = {}
        grads: Dict[int, Tensor] = {}

        with self._blas_single():
            for node in graph.nodes:
                if isinstance(node.kind, Input):
                    acts[node.id] = self._load_input(batch)
                else:
                    acts[node.id] = self._forward_node(node, acts, argmax)

            pred = acts[graph.output_id].data
            confusion = confusion_counts(pred, targets, self.threshold)

            for node in reversed(graph.nodes):
                if node.id == graph.output_id:
                    loss, g = losses.loss_and_grad(self.loss_kind, pred, targets)
                    if not math.isfinite(loss):
                        self._release(acts, argmax, grads)
                        raise DivergenceError(f"non-finite loss {loss!r}")
                    grads[node.id] = self.alloc.adopt(g, (node.id, "gradient", "out"))
                if node.id in grads:
                    self._backward_node(node, acts, argmax, grads)
                self.alloc.free(acts.pop(node.id))
                if node.id in argmax:
                    self.alloc.free(argmax.pop(node.id))
                if node.id in grads:
                    self.alloc.free(grads.pop(node.id))

            self.t += 1
            for nid, (w, b) in self._params.items():
                gw, gb = self._grads[nid]
                state = self._state[nid]
                apply_update(self.optimizer, w.data, gw.data, [s[0].data for s in state], self.t, lr)
                apply_update(self.optimizer, b.data, gb.data, [s[1].data for s in state], self.t, lr)
                self._check(f"node {nid} update", w.data, b.data)

        return StepResult(loss=loss, stats=self.alloc.stats(), confusion=confusion)

    def _release(self, *buffers: Dict[int, Tensor]) -> None:
        for d in buffers:
            for t in d.values():
                self.alloc.free(t)
            d.clear()

    def _contribute(self, src: int, grads: Dict[int, Tensor], compute) -> None:
        """Write (or accumulate) a gradient contribution for producer ``src``."""
        node = self.graph.nodes[src]
        if isinstance(node.kind, Input):
            return
        shape = node.out_shape.as_tuple()
        if src not in grads:
            buf = self.alloc.alloc(shape, self.precision.dtype, (src, "gradient", "out"))
            compute(buf.data)
            grads[src] = buf
        else:
            tmp = self.alloc.alloc(shape, self.precision.dtype, (src, "gradient", "partial"))
            compute(tmp.data)
            grads[src].data += tmp.data
            self.alloc.free(tmp)
        self._check(f"gradient of node {src}", grads[src].data)

    def _backward_node(self, node, acts, argmax, grads) -> None:
        g = grads[node.id].data
        kind = node.kind
        if isinstance(kind, Conv3d):
            src = node.inputs[0]
            w, _ = self._params[node.id]
            gw, gb = self._grads[node.id]
            x = acts[src].data
            if isinstance(self.graph.nodes[src].kind, Input):
                _, pw, pb = K.conv3d_backward(g, x, w.data, need_input_grad=False, pool=self._pool)
            else:
                result = {}

                def compute(out):
                    _, result["w"], result["b"] = K.conv3d_backward(g, x, w.data, grad_input=out, pool=self._pool)

                self._contribute(src, grads, compute)
                pw, pb = result["w"], result["b"]
            gw.data[...] = pw
            gb.data[...] = pb
            self._check(f"node {node.id} weight gradient", gw.data, gb.data)
        elif isinstance(kind, ReLU):
            y = acts[node.id].data
            self._contribute(node.inputs[0], grads, lambda out: K.relu_backward(g, y, out=out))
        elif isinstance(kind, Sigmoid):
            y = acts[node.id].data
            self._contribute(node.inputs[0], grads, lambda out: K.sigmoid_backward(g, y, out=out))
        elif isinstance(kind, MaxPool3d):
            src = node.inputs[0]
            spatial = self.graph.nodes[src].out_shape.spatial
            idx = argmax[node.id].data
            self._contribute(src, grads, lambda out: K.maxpool3d_backward(g, idx, spatial, out=out))
        elif isinstance(kind, Upsample3d):
            self._contribute(node.inputs[0], grads, lambda out: K.upsample3d_backward(g, out=out))
        elif isinstance(kind, Concat):
            a, b = node.inputs
            split = self.graph.nodes[a].out_shape.c
            ga, gb_ = K.concat_backward(g, split)
            self._contribute(a, grads, lambda out: np.copyto(out, ga))
            self._contribute(b, grads, lambda out: np.copyto(out, gb_))


def run_training_step(
    graph: Graph,
    params: Params,
    batch: np.ndarray,
    targets: np.ndarray,
    loss_kind: str = "bce_plus_dice",
    optimizer: OptimizerConfig = OptimizerConfig("sgd"),
    lr: float = 0.01,
    precision=Precision.SINGLE,
    threads: int = 1,
) -> Tuple[float, Params, AllocStats]:
    """Run one step from fresh optimizer state; returns ``(loss, params, stats)``."""
    with Executor(graph, params, precision, optimizer, loss_kind, threads) as ex:
        result = ex.train_step(batch, targets, lr)
        return result.loss, {k: (w.copy(), b.copy()) for k, (w, b) in ex.params.items()}, result.stats
