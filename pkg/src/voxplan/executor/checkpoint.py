"""Parameter checkpoint files.

Layout, all little-endian::

    b"VXCK"  u16 version
    then for each conv node in id order:
        u32 node id, weight elements (k,k,k,c_in,c_out), bias elements (c_out)

Element width follows the precision the caller declares; the file does not
record it, so readers need the graph and precision to parse it.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from ..graph import Graph, Precision, conv_in_channels

MAGIC = b"VXCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


Params = Dict[int, Tuple[np.ndarray, np.ndarray]]


def write_checkpoint(path: Union[str, Path], graph: Graph, params: Params, precision) -> None:
    precision = Precision.parse(precision)
    le = precision.dtype.newbyteorder("<")
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<H", VERSION))
        for node in graph.conv_nodes():
            w, b = params[node.id]
            fh.write(struct.pack("<I", node.id))
            fh.write(np.ascontiguousarray(w, dtype=le).tobytes())
            fh.write(np.ascontiguousarray(b, dtype=le).tobytes())


def read_checkpoint(path: Union[str, Path], graph: Graph, precision) -> Params:
    precision = Precision.parse(precision)
    le = precision.dtype.newbyteorder("<")
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < 6:
        raise CheckpointError(f"{path}: truncated header")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 6
    params: Params = {}
    for node in graph.conv_nodes():
        k, c_out = node.kind.k, node.kind.c_out
        w_shape = (k, k, k, conv_in_channels(graph, node), c_out)
        n_w = int(np.prod(w_shape))
        need = 4 + (n_w + c_out) * precision.byte_width
        if pos + need > len(blob):
            raise CheckpointError(f"{path}: truncated at node {node.id}")
        (node_id,) = struct.unpack_from("<I", blob, pos)
        if node_id != node.id:
            raise CheckpointError(f"{path}: expected conv node {node.id}, found {node_id}")
        pos += 4
        w = np.frombuffer(blob, dtype=le, count=n_w, offset=pos).reshape(w_shape)
        pos += n_w * precision.byte_width
        b = np.frombuffer(blob, dtype=le, count=c_out, offset=pos)
        pos += c_out * precision.byte_width
        params[node.id] = (w.astype(precision.dtype), b.astype(precision.dtype))
    if pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - pos} trailing bytes")
    return params
