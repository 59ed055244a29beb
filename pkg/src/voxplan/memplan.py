"""Training-step memory accounting by activation liveness.

The model is a reconstruction: one training step runs forward in node order,
then backward in reverse node order, with every forward output retained until
its own backward step.  Parameters, parameter gradients and optimizer state are
resident for the whole step.

Schedule (``step_index``):

* step 0 allocates the resident buffers;
* step ``1 + i`` runs node ``i`` forward and allocates its output (plus the
  argmax index buffer for max-pooling);
* step ``1 + N + j`` runs the ``j``-th node of the reverse order backward.  It
  first allocates the gradient buffers it writes (its own, for the graph
  output, and each non-Input producer's on first touch), then frees its own
  forward buffers and its own gradient buffer.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from .graph import (
    INT64_MAX,
    Graph,
    GraphError,
    Input,
    MaxPool3d,
    Precision,
    TensorShape,
    UNetSpec,
    build_unet,
    param_count,
)

OPTIMIZER_STATE_MULTIPLIER = {"sgd": 0, "sgd_momentum": 1, "adam": 2}

ACTIVATION = "activation"
GRADIENT = "gradient"
PARAMETER = "parameter"
OPTIMIZER_STATE = "optimizer_state"

SWEEP_AXES = ("batch", "spatial", "filters")
SWEEP_HEADER = ("axis_value", "param_bytes", "activation_peak_bytes", "grand_peak_bytes")


def tensor_bytes(shape: TensorShape, precision: Union[Precision, str]) -> int:
    precision = Precision.parse(precision)
    total = 1
    for v in shape.as_tuple() + (precision.byte_width,):
        total *= v
        if total > INT64_MAX:
            raise OverflowError(f"byte size of shape {shape} at {precision.value} precision overflows 64-bit arithmetic")
    return total


@dataclass(frozen=True)
class MemEvent:
    step_index: int
    action: str  # "alloc" | "free"
    node_id: int
    tensor_class: str
    bytes: int
    name: str = "out"

    @property
    def tag(self) -> Tuple[int, str, str]:
        return (self.node_id, self.tensor_class, self.name)


@dataclass(frozen=True)
class LivenessTimeline:
    events: Tuple[MemEvent, ...]
    peak_bytes: int
    peak_step_index: int

    def live_bytes(self) -> List[int]:
        """Running live-byte total after each event."""
        out, live = [], 0
        for ev in self.events:
            live += ev.bytes if ev.action == "alloc" else -ev.bytes
            out.append(live)
        return out


@dataclass(frozen=True)
class MemReport:
    param_bytes: int
    grad_bytes: int
    optimizer_state_bytes: int
    activation_peak_bytes: int
    grand_peak_bytes: int
    per_node_bytes: Dict[int, int] = field(default_factory=dict)

    @property
    def resident_bytes(self) -> int:
        return self.param_bytes + self.grad_bytes + self.optimizer_state_bytes

    def to_dict(self) -> Dict[str, object]:
        d = asdict(self)
        d["per_node_bytes"] = {str(k): v for k, v in self.per_node_bytes.items()}
        return d

    def to_table(self) -> str:
        rows = [
            ("param_bytes", self.param_bytes),
            ("grad_bytes", self.grad_bytes),
            ("optimizer_state_bytes", self.optimizer_state_bytes),
            ("activation_peak_bytes", self.activation_peak_bytes),
            ("grand_peak_bytes", self.grand_peak_bytes),
        ]
        width = max(len(r[0]) for r in rows)
        lines = [f"{'quantity':<{width}}  {'bytes':>20}  {'human':>10}"]
        lines += [f"{k:<{width}}  {v:>20,}  {human_bytes(v):>10}" for k, v in rows]
        return "\n".join(lines)


@dataclass(frozen=True)
class TimeEstimate:
    steps_per_epoch: int
    total_steps: int
    seconds_total: float
    seconds_per_epoch: float

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


def human_bytes(n: float) -> str:
    for unit in ("B", "KiB", "MiB", "GiB", "TiB"):
        if abs(n) < 1024 or unit == "TiB":
            return f"{n:.0f} {unit}" if unit == "B" else f"{n:.2f} {unit}"
        n /= 1024.0
    return str(n)


def optimizer_multiplier(optimizer: str) -> int:
    try:
        return OPTIMIZER_STATE_MULTIPLIER[optimizer]
    except KeyError:
        raise ValueError(f"unknown optimizer {optimizer!r}; expected one of {sorted(OPTIMIZER_STATE_MULTIPLIER)}") from None


def build_schedule(graph: Graph, precision: Union[Precision, str], optimizer: str) -> List[MemEvent]:
    """Canonical alloc/free event list for one training step."""
    if not graph.shapes_inferred:
        raise GraphError("plan_training_memory needs a graph with inferred shapes")
    precision = Precision.parse(precision)
    width = precision.byte_width
    n_nodes = len(graph.nodes)

    p_bytes = param_count(graph) * width
    o_bytes = optimizer_multiplier(optimizer) * p_bytes
    events: List[MemEvent] = []
    # Resident buffers carry node id -1: they belong to the whole network.
    for cls, b in ((PARAMETER, p_bytes), (GRADIENT, p_bytes), (OPTIMIZER_STATE, o_bytes)):
        if b:
            events.append(MemEvent(0, "alloc", -1, cls, b, name="resident"))

    for node in graph.nodes:
        step = 1 + node.id
        events.append(MemEvent(step, "alloc", node.id, ACTIVATION, tensor_bytes(node.out_shape, precision)))
        if isinstance(node.kind, MaxPool3d):
            events.append(MemEvent(step, "alloc", node.id, ACTIVATION, tensor_bytes(node.out_shape, precision), name="argmax"))

    has_grad = set()
    for j, node in enumerate(reversed(graph.nodes)):
        step = 1 + n_nodes + j
        if node.id == graph.output_id and node.id not in has_grad:
            events.append(MemEvent(step, "alloc", node.id, GRADIENT, tensor_bytes(node.out_shape, precision)))
            has_grad.add(node.id)
        if node.id in has_grad:
            for src in node.inputs:
                src_node = graph.nodes[src]
                if isinstance(src_node.kind, Input) or src in has_grad:
                    continue
                events.append(MemEvent(step, "alloc", src, GRADIENT, tensor_bytes(src_node.out_shape, precision)))
                has_grad.add(src)
        events.append(MemEvent(step, "free", node.id, ACTIVATION, tensor_bytes(node.out_shape, precision)))
        if isinstance(node.kind, MaxPool3d):
            events.append(MemEvent(step, "free", node.id, ACTIVATION, tensor_bytes(node.out_shape, precision), name="argmax"))
        if node.id in has_grad:
            events.append(MemEvent(step, "free", node.id, GRADIENT, tensor_bytes(node.out_shape, precision)))
    return events


def _peak(events: Iterable[MemEvent], classes: Optional[Sequence[str]] = None) -> Tuple[int, int]:
    live = peak = 0
    peak_step = 0
    for ev in events:
        if classes is not None and (ev.tensor_class not in classes or ev.node_id < 0):
            continue
        live += ev.bytes if ev.action == "alloc" else -ev.bytes
        if live > peak:
            peak, peak_step = live, ev.step_index
    return peak, peak_step


def plan_training_memory(
    graph: Graph, precision: Union[Precision, str] = Precision.SINGLE, optimizer: str = "sgd"
) -> Tuple[MemReport, LivenessTimeline]:
    precision = Precision.parse(precision)
    events = build_schedule(graph, precision, optimizer)
    peak, peak_step = _peak(events)
    # Activation peak: forward buffers only (outputs plus pooling indices).
    activation_peak, _ = _peak(events, classes=(ACTIVATION,))
    p_bytes = param_count(graph) * precision.byte_width
    per_node: Dict[int, int] = {}
    for ev in events:
        if ev.action == "alloc" and ev.tensor_class == ACTIVATION:
            per_node[ev.node_id] = per_node.get(ev.node_id, 0) + ev.bytes
    report = MemReport(
        param_bytes=p_bytes,
        grad_bytes=p_bytes,
        optimizer_state_bytes=optimizer_multiplier(optimizer) * p_bytes,
        activation_peak_bytes=activation_peak,
        grand_peak_bytes=peak,
        per_node_bytes=per_node,
    )
    return report, LivenessTimeline(events=tuple(events), peak_bytes=peak, peak_step_index=peak_step)


def estimate_completion_time(
    num_train_samples: int, batch: int, epochs: int, seconds_per_image: float
) -> TimeEstimate:
    if batch <= 0:
        raise ValueError("batch must be positive")
    if num_train_samples <= 0 or epochs <= 0 or seconds_per_image <= 0:
        raise ValueError("num_train_samples, epochs and seconds_per_image must be positive")
    steps_per_epoch = math.ceil(num_train_samples / batch)
    seconds_per_epoch = num_train_samples * float(seconds_per_image)
    return TimeEstimate(
        steps_per_epoch=steps_per_epoch,
        total_steps=steps_per_epoch * epochs,
        seconds_total=seconds_per_epoch * epochs,
        seconds_per_epoch=seconds_per_epoch,
    )


# --- sweeps ---------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    axis_value: str
    param_bytes: int
    activation_peak_bytes: int
    grand_peak_bytes: int


def parse_dims(text: str) -> Tuple[int, int, int]:
    """Parse ``DxHxW`` (or a single ``S`` meaning a cube)."""
    parts = str(text).lower().replace("³", "").split("x")
    try:
        values = tuple(int(p) for p in parts)
    except ValueError:
        raise ValueError(f"cannot parse dims {text!r}; expected DxHxW") from None
    if len(values) == 1:
        values = values * 3
    if len(values) != 3 or any(v < 1 for v in values):
        raise ValueError(f"cannot parse dims {text!r}; expected DxHxW with positive entries")
    return values


def as_dims(value) -> Tuple[int, int, int]:
    if isinstance(value, str):
        return parse_dims(value)
    if isinstance(value, int):
        return (value, value, value)
    return tuple(int(v) for v in value)


def swept_spec(template: UNetSpec, axis: str, value) -> UNetSpec:
    if axis == "batch":
        return template.with_(batch=int(value))
    if axis == "spatial":
        return template.with_(input_dims=as_dims(value))
    if axis == "filters":
        return template.with_(base_filters=int(value))
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


def format_axis_value(axis: str, value) -> str:
    if axis == "spatial":
        return "x".join(str(v) for v in as_dims(value))
    return str(int(value))


def pad_dims(dims: Sequence[int], depth: int) -> Tuple[int, int, int]:
    """Round each spatial dim up to the next multiple of ``2**depth``."""
    step = 2**depth
    return tuple(-(-int(v) // step) * step for v in dims)


def sweep(template: UNetSpec, axis: str, values: Sequence, optimizer: str = "sgd") -> List[SweepRow]:
    rows = []
    for value in values:
        spec = swept_spec(template, axis, value)
        report, _ = plan_training_memory(build_unet(spec), spec.precision, optimizer)
        rows.append(
            SweepRow(
                axis_value=format_axis_value(axis, value),
                param_bytes=report.param_bytes,
                activation_peak_bytes=report.activation_peak_bytes,
                grand_peak_bytes=report.grand_peak_bytes,
            )
        )
    return rows


def sweep_csv(rows: Sequence[SweepRow], extra: Optional[Dict[str, Sequence]] = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    extra = extra or {}
    writer.writerow(list(SWEEP_HEADER) + list(extra))
    for i, r in enumerate(rows):
        writer.writerow([r.axis_value, r.param_bytes, r.activation_peak_bytes, r.grand_peak_bytes] + [col[i] for col in extra.values()])
    return buf.getvalue()


# A clinical-scale configuration: 240x240x155 MRI padded to 160, batch 16.
FULL_SCALE_SCENARIO = UNetSpec(
    in_channels=1, num_classes=1, depth=4, base_filters=64, input_dims=(240, 240, 160), batch=16
)
