"""Reference computations that share no code path with the package under test."""

from __future__ import annotations

import numpy as np

from voxplan.graph import Conv3d, Graph, Input, MaxPool3d


def shape_bytes(shape, width):
    total = width
    for v in shape.as_tuple():
        total *= v
    return total


def brute_force_peak(graph: Graph, width: int, state_slots: int) -> int:
    """Peak live bytes from per-buffer lifetime intervals, summed step by step.

    Buffer lifetimes are derived straight from the graph: a node's forward
    output (and pooling indices) lives from its forward step through its own
    backward step; its gradient lives from the backward step of its highest-id
    consumer (or its own step, for the graph output) through its own backward
    step.  Within a step all allocations happen before any free, so a buffer
    counts at every step in its closed interval.
    """
    n = len(graph.nodes)

    def fwd(i):
        return 1 + i

    def bwd(i):
        return 1 + n + (n - 1 - i)

    params = 0
    for node in graph.nodes:
        if isinstance(node.kind, Conv3d):
            c_in = graph.nodes[node.inputs[0]].out_shape.c
            params += node.kind.k ** 3 * c_in * node.kind.c_out + node.kind.c_out
    resident = params * width * (2 + state_slots)

    intervals = []  # (start, end, bytes)
    for node in graph.nodes:
        b = shape_bytes(node.out_shape, width)
        intervals.append((fwd(node.id), bwd(node.id), b))
        if isinstance(node.kind, MaxPool3d):
            intervals.append((fwd(node.id), bwd(node.id), b))

    # Which nodes receive a gradient: walk back from the output.
    has_grad = {graph.output_id}
    for node in reversed(graph.nodes):
        if node.id in has_grad:
            for src in node.inputs:
                if not isinstance(graph.nodes[src].kind, Input):
                    has_grad.add(src)
    for v in has_grad:
        if v == graph.output_id:
            start = bwd(v)
        else:
            start = bwd(max(c.id for c in graph.nodes if v in c.inputs and c.id in has_grad))
        intervals.append((start, bwd(v), shape_bytes(graph.nodes[v].out_shape, width)))

    peak = resident
    for step in range(0, 2 * n + 1):
        live = resident + sum(b for s, e, b in intervals if s <= step <= e)
        peak = max(peak, live)
    return peak


def replay_peak(events) -> int:
    """Replay alloc/free events in order and track the running maximum."""
    live = peak = 0
    open_tags = {}
    for ev in events:
        if ev.action == "alloc":
            assert ev.tag not in open_tags, f"double alloc {ev.tag}"
            open_tags[ev.tag] = ev.bytes
            live += ev.bytes
        else:
            assert open_tags.pop(ev.tag) == ev.bytes, f"free of unknown buffer {ev.tag}"
            live -= ev.bytes
        assert live >= 0
        peak = max(peak, live)
    return peak


def hand_param_count(in_channels, classes, depth, filters) -> int:
    """Layer-by-layer parameter summation of the U-Net topology."""

    def conv(k, cin, cout):
        return k * k * k * cin * cout + cout

    total = conv(3, in_channels, filters) + conv(3, filters, filters)
    for i in range(1, depth + 1):
        f = filters * 2 ** i
        total += conv(3, f // 2, f) + conv(3, f, f)
    for i in range(depth - 1, -1, -1):
        f = filters * 2 ** i
        total += conv(3, 2 * f + f, f) + conv(3, f, f)
    return total + conv(1, filters, classes)


def central_difference(fn, x: np.ndarray, direction: np.ndarray, h: float = 1e-5) -> float:
    return (fn(x + h * direction) - fn(x - h * direction)) / (2 * h)


def rel_err(a: float, b: float, floor: float = 1e-12) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)
