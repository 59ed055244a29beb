"""``VXV1`` raw volume container.

Header (little-endian, 19 bytes): ``b"VXV1"``, u8 kind (1 = volume,
2 = sample), u16 precision code (1 = single, 2 = double), u32 d, h, w.
The payload follows: the volume, or the image then the mask for samples.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from ..graph import Precision
from .volume import Sample, Volume

MAGIC = b"VXV1"
HEADER = struct.Struct("<4sBH3I")
KIND_VOLUME = 1
KIND_SAMPLE = 2
PRECISION_CODES = {Precision.SINGLE: 1, Precision.DOUBLE: 2}


class RawFormatError(ValueError):
    pass


class RawMagicError(RawFormatError):
    pass


class RawLengthError(RawFormatError):
    pass


def encode_raw(obj: Union[Volume, Sample]) -> bytes:
    if isinstance(obj, Sample):
        kind, vols = KIND_SAMPLE, (obj.image, obj.mask)
        if obj.image.precision is not obj.mask.precision:
            raise ValueError("image and mask must share a precision")
    elif isinstance(obj, Volume):
        kind, vols = KIND_VOLUME, (obj,)
    else:
        raise TypeError(f"cannot encode {type(obj).__name__}")
    precision = vols[0].precision
    le = precision.dtype.newbyteorder("<")
    parts = [HEADER.pack(MAGIC, kind, PRECISION_CODES[precision], *vols[0].dims)]
    parts += [np.ascontiguousarray(v.data, dtype=le).tobytes() for v in vols]
    return b"".join(parts)


def decode_raw(blob: bytes, source: str = "<bytes>") -> Union[Volume, Sample]:
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise RawMagicError(f"{source}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < HEADER.size:
        raise RawLengthError(f"{source}: header truncated ({len(blob)} < {HEADER.size} bytes)")
    _, kind, code, d, h, w = HEADER.unpack_from(blob)
    codes = {v: k for k, v in PRECISION_CODES.items()}
    if code not in codes:
        raise RawFormatError(f"{source}: unknown precision code {code}")
    if kind not in (KIND_VOLUME, KIND_SAMPLE):
        raise RawFormatError(f"{source}: unknown kind {kind}")
    precision = codes[code]
    count = d * h * w
    n_vols = 1 if kind == KIND_VOLUME else 2
    expected = HEADER.size + n_vols * count * precision.byte_width
    if len(blob) != expected:
        raise RawLengthError(f"{source}: expected {expected} bytes for {n_vols}x{(d, h, w)}, got {len(blob)}")
    le = precision.dtype.newbyteorder("<")
    vols = []
    for i in range(n_vols):
        offset = HEADER.size + i * count * precision.byte_width
        arr = np.frombuffer(blob, dtype=le, count=count, offset=offset).reshape(d, h, w)
        vols.append(Volume(arr.astype(precision.dtype), precision))
    return vols[0] if kind == KIND_VOLUME else Sample(vols[0], vols[1])


def write_raw(path: Union[str, Path], obj: Union[Volume, Sample]) -> None:
    Path(path).write_bytes(encode_raw(obj))


def read_raw(path: Union[str, Path]) -> Union[Volume, Sample]:
    return decode_raw(Path(path).read_bytes(), str(path))
