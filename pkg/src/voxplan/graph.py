"""Graph IR for 3D segmentation networks.

Nodes are appended in construction order, and that order is the schedule used
by both the memory planner and the executor.  ``build_unet`` produces a
shape-inferred 3D U-Net graph.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

# Byte and element counts are checked against the signed 64-bit range.
INT64_MAX = 2**63 - 1


class GraphError(ValueError):
    """Raised for structurally invalid graphs or shapes."""


class Precision(enum.Enum):
    SINGLE = "single"
    DOUBLE = "double"

    @property
    def byte_width(self) -> int:
        return 4 if self is Precision.SINGLE else 8

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32) if self is Precision.SINGLE else np.dtype(np.float64)

    @property
    def index_dtype(self) -> np.dtype:
        # Pooling indices share the element width so byte figures scale with precision.
        return np.dtype(np.int32) if self is Precision.SINGLE else np.dtype(np.int64)

    @classmethod
    def parse(cls, value: Union[str, "Precision"]) -> "Precision":
        if isinstance(value, Precision):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown precision {value!r}; expected 'single' or 'double'") from None


def checked_product(values: Sequence[int], what: str) -> int:
    total = 1
    for v in values:
        total *= int(v)
        if total > INT64_MAX:
            raise OverflowError(f"{what} overflows 64-bit arithmetic")
    return total


@dataclass(frozen=True)
class TensorShape:
    n: int
    c: int
    d: int
    h: int
    w: int

    def __post_init__(self) -> None:
        for name in ("n", "c", "d", "h", "w"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise GraphError(f"TensorShape.{name} must be a positive integer, got {v!r}")

    @property
    def spatial(self) -> Tuple[int, int, int]:
        return (self.d, self.h, self.w)

    @property
    def elem_count(self) -> int:
        return checked_product(self.as_tuple(), f"element count of shape {self.as_tuple()}")

    def as_tuple(self) -> Tuple[int, int, int, int, int]:
        return (self.n, self.c, self.d, self.h, self.w)

    def with_(self, **changes: int) -> "TensorShape":
        return replace(self, **changes)

    def __str__(self) -> str:
        return "(" + ",".join(str(v) for v in self.as_tuple()) + ")"


# --- node kinds -----------------------------------------------------------


@dataclass(frozen=True)
class Input:
    channels: int


@dataclass(frozen=True)
class Conv3d:
    k: int
    c_out: int

    def __post_init__(self) -> None:
        if self.k < 1 or self.k % 2 == 0:
            raise GraphError(f"Conv3d kernel size must be odd and positive, got {self.k}")
        if self.c_out < 1:
            raise GraphError(f"Conv3d c_out must be positive, got {self.c_out}")


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Sigmoid:
    pass


@dataclass(frozen=True)
class MaxPool3d:
    k: int = 2
    stride: int = 2


@dataclass(frozen=True)
class Upsample3d:
    factor: int = 2
    mode: str = "nearest"


@dataclass(frozen=True)
class Concat:
    axis: str = "channel"


NodeKind = Union[Input, Conv3d, ReLU, Sigmoid, MaxPool3d, Upsample3d, Concat]

_KIND_NAMES = {
    Input: "input",
    Conv3d: "conv3d",
    ReLU: "relu",
    Sigmoid: "sigmoid",
    MaxPool3d: "maxpool3d",
    Upsample3d: "upsample3d",
    Concat: "concat",
}


def kind_name(kind: NodeKind) -> str:
    return _KIND_NAMES[type(kind)]


@dataclass(frozen=True)
class Node:
    id: int
    kind: NodeKind
    inputs: Tuple[int, ...] = ()
    out_shape: Optional[TensorShape] = None


@dataclass(frozen=True)
class Graph:
    nodes: Tuple[Node, ...]
    output_id: int

    def __post_init__(self) -> None:
        validate_structure(self)

    def __getitem__(self, node_id: int) -> Node:
        return self.nodes[node_id]

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def input_node(self) -> Node:
        return next(n for n in self.nodes if isinstance(n.kind, Input))

    @property
    def shapes_inferred(self) -> bool:
        return all(n.out_shape is not None for n in self.nodes)

    def consumers(self) -> Dict[int, List[int]]:
        out: Dict[int, List[int]] = {n.id: [] for n in self.nodes}
        for n in self.nodes:
            for i in n.inputs:
                out[i].append(n.id)
        return out

    def conv_nodes(self) -> List[Node]:
        return [n for n in self.nodes if isinstance(n.kind, Conv3d)]

    def output_shape(self) -> TensorShape:
        shape = self.nodes[self.output_id].out_shape
        if shape is None:
            raise GraphError("graph shapes have not been inferred")
        return shape

    def to_dict(self) -> Dict[str, Any]:
        nodes = []
        for n in self.nodes:
            params = {k: v for k, v in vars(n.kind).items()}
            nodes.append(
                {
                    "id": n.id,
                    "kind": kind_name(n.kind),
                    "params": params,
                    "inputs": list(n.inputs),
                    "shape": list(n.out_shape.as_tuple()) if n.out_shape else None,
                }
            )
        return {"output_id": self.output_id, "nodes": nodes}

    def to_json(self, indent: Optional[int] = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def validate_structure(graph: Graph) -> None:
    inputs = 0
    for idx, n in enumerate(graph.nodes):
        if n.id != idx:
            raise GraphError(f"node ids must be dense and ordered; position {idx} holds id {n.id}")
        if isinstance(n.kind, Input):
            inputs += 1
            if n.inputs:
                raise GraphError(f"Input node {n.id} must not have inputs")
            continue
        expected = 2 if isinstance(n.kind, Concat) else 1
        if len(n.inputs) != expected:
            raise GraphError(f"node {n.id} ({kind_name(n.kind)}) takes {expected} input(s), got {len(n.inputs)}")
        for i in n.inputs:
            if not 0 <= i < n.id:
                raise GraphError(f"node {n.id} references input {i}, which is not an earlier node")
    if inputs != 1:
        raise GraphError(f"graph must contain exactly one Input node, found {inputs}")
    if not 0 <= graph.output_id < len(graph.nodes):
        raise GraphError(f"output id {graph.output_id} out of range")


class GraphBuilder:
    """Appends nodes in schedule order and hands out dense ids."""

    def __init__(self) -> None:
        self._nodes: List[Node] = []

    def add(self, kind: NodeKind, *inputs: int) -> int:
        node_id = len(self._nodes)
        self._nodes.append(Node(id=node_id, kind=kind, inputs=tuple(inputs)))
        return node_id

    def build(self, output_id: Optional[int] = None) -> Graph:
        if output_id is None:
            output_id = len(self._nodes) - 1
        return Graph(nodes=tuple(self._nodes), output_id=output_id)


# --- shape inference ------------------------------------------------------


def _infer_node(node: Node, in_shapes: List[TensorShape], input_shape: TensorShape) -> TensorShape:
    kind = node.kind
    if isinstance(kind, Input):
        if input_shape.c != kind.channels:
            raise GraphError(f"input shape has {input_shape.c} channels, Input node declares {kind.channels}")
        return input_shape
    if isinstance(kind, Conv3d):
        return in_shapes[0].with_(c=kind.c_out)
    if isinstance(kind, (ReLU, Sigmoid)):
        return in_shapes[0]
    if isinstance(kind, MaxPool3d):
        s = in_shapes[0]
        odd = [name for name, v in zip("dhw", s.spatial) if v % 2]
        if odd:
            raise GraphError(f"MaxPool3d node {node.id} needs even spatial dims, got {s} (odd: {','.join(odd)})")
        return s.with_(d=s.d // 2, h=s.h // 2, w=s.w // 2)
    if isinstance(kind, Upsample3d):
        s = in_shapes[0]
        return s.with_(d=s.d * 2, h=s.h * 2, w=s.w * 2)
    if isinstance(kind, Concat):
        a, b = in_shapes
        if (a.n, a.d, a.h, a.w) != (b.n, b.d, b.h, b.w):
            raise GraphError(f"Concat node {node.id} inputs disagree outside the channel axis: {a} vs {b}")
        return a.with_(c=a.c + b.c)
    raise GraphError(f"unknown node kind {kind!r}")


def infer_shapes(graph: Graph, input_shape: TensorShape) -> Graph:
    shapes: List[TensorShape] = []
    nodes = []
    for node in graph.nodes:
        shape = _infer_node(node, [shapes[i] for i in node.inputs], input_shape)
        shapes.append(shape)
        nodes.append(replace(node, out_shape=shape))
    return Graph(nodes=tuple(nodes), output_id=graph.output_id)


def topo_order(graph: Graph) -> List[int]:
    return [n.id for n in graph.nodes]


def conv_in_channels(graph: Graph, node: Node) -> int:
    src = graph.nodes[node.inputs[0]].out_shape
    if src is None:
        raise GraphError("graph shapes have not been inferred")
    return src.c


def conv_param_count(k: int, c_in: int, c_out: int) -> int:
    return k**3 * c_in * c_out + c_out


def param_count(graph: Graph) -> int:
    total = 0
    for node in graph.conv_nodes():
        total += conv_param_count(node.kind.k, conv_in_channels(graph, node), node.kind.c_out)
    return total


# --- U-Net ----------------------------------------------------------------


@dataclass(frozen=True)
class UNetSpec:
    in_channels: int = 1
    num_classes: int = 1
    depth: int = 2
    base_filters: int = 8
    input_dims: Tuple[int, int, int] = (32, 32, 32)
    batch: int = 1
    precision: Precision = Precision.SINGLE

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_dims", tuple(int(v) for v in self.input_dims))
        object.__setattr__(self, "precision", Precision.parse(self.precision))
        self.validate()

    def validate(self) -> None:
        if self.depth < 1:
            raise GraphError(f"depth must be >= 1, got {self.depth}")
        if self.base_filters < 1:
            raise GraphError(f"base_filters must be >= 1, got {self.base_filters}")
        if self.in_channels < 1 or self.num_classes < 1 or self.batch < 1:
            raise GraphError("in_channels, num_classes and batch must be positive")
        if len(self.input_dims) != 3:
            raise GraphError(f"input_dims must have three entries, got {self.input_dims}")
        step = 2**self.depth
        for name, v in zip(("d", "h", "w"), self.input_dims):
            if v < 1:
                raise GraphError(f"input dim {name}={v} must be positive")
            if v % step:
                raise GraphError(f"input dim {name}={v} is not divisible by 2^depth={step}")

    @property
    def input_shape(self) -> TensorShape:
        return TensorShape(self.batch, self.in_channels, *self.input_dims)

    def with_(self, **changes: Any) -> "UNetSpec":
        return replace(self, **changes)


def build_unet(spec: UNetSpec) -> Graph:
    spec.validate()
    g = GraphBuilder()
    F = spec.base_filters

    def double_conv(src: int, filters: int) -> int:
        for _ in range(2):
            src = g.add(ReLU(), g.add(Conv3d(k=3, c_out=filters), src))
        return src

    x = g.add(Input(channels=spec.in_channels))
    skips = [double_conv(x, F)]
    for level in range(1, spec.depth + 1):
        pooled = g.add(MaxPool3d(), skips[-1])
        skips.append(double_conv(pooled, F * 2**level))
    x = skips.pop()
    for level in range(spec.depth - 1, -1, -1):
        up = g.add(Upsample3d(), x)
        cat = g.add(Concat(), up, skips[level])
        x = double_conv(cat, F * 2**level)
    head = g.add(Conv3d(k=1, c_out=spec.num_classes), x)
    g.add(Sigmoid(), head)
    return infer_shapes(g.build(), spec.input_shape)
