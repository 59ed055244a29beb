"""Minimal reader for single-file, uncompressed NIfTI-1 (``.nii``) volumes.

Only 3-D single-channel data is accepted (a 4-D header with ``dim[4] == 1``
counts as 3-D).  NIfTI stores x fastest, so a volume with header dims
``(x, y, z)`` is returned as a row-major ``(d, h, w) = (z, y, x)`` array.
Extensions, scaling and orientation fields are ignored.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from ..graph import Precision
from .volume import Volume

HEADER_SIZE = 348
MIN_VOX_OFFSET = 352
MAGIC_SINGLE = b"n+1\x00"
MAGIC_PAIR = b"ni1\x00"

# datatype code -> (numpy kind, bitpix)
DATATYPES = {2: ("u1", 8), 4: ("i2", 16), 16: ("f4", 32)}


class NiftiError(ValueError):
    """Base class for NIfTI parse failures."""


class NiftiHeaderSizeError(NiftiError):
    pass


class NiftiMagicError(NiftiError):
    pass


class NiftiUnsupportedFormatError(NiftiError):
    """Valid NIfTI, but a form this reader does not handle (e.g. header/image pairs)."""


class NiftiDatatypeError(NiftiError):
    pass


class NiftiDimError(NiftiError):
    pass


class NiftiTruncatedError(NiftiError):
    pass


def _byte_order(header: bytes, source: str) -> str:
    if struct.unpack_from("<i", header, 0)[0] == HEADER_SIZE:
        return "<"
    if struct.unpack_from(">i", header, 0)[0] == HEADER_SIZE:
        return ">"
    raise NiftiHeaderSizeError(f"{source}: sizeof_hdr is not {HEADER_SIZE} in either byte order")


def parse_nifti1(blob: bytes, precision=Precision.SINGLE, source: str = "<bytes>") -> Volume:
    precision = Precision.parse(precision)
    if len(blob) < HEADER_SIZE:
        raise NiftiTruncatedError(f"{source}: header truncated ({len(blob)} < {HEADER_SIZE} bytes)")
    bo = _byte_order(blob, source)
    magic = blob[344:348]
    if magic == MAGIC_PAIR:
        raise NiftiUnsupportedFormatError(f"{source}: two-file NIfTI (magic 'ni1') is not supported; use a single .nii")
    if magic != MAGIC_SINGLE:
        raise NiftiMagicError(f"{source}: bad magic {magic!r}, expected {MAGIC_SINGLE!r}")

    dim = struct.unpack_from(bo + "8h", blob, 40)
    datatype, bitpix = struct.unpack_from(bo + "2h", blob, 70)
    (vox_offset,) = struct.unpack_from(bo + "f", blob, 108)

    ndim = dim[0]
    if ndim not in (3, 4):
        raise NiftiDimError(f"{source}: dim[0]={ndim}, only 3-D volumes (or 4-D with dim[4]=1) are supported")
    if ndim == 4 and dim[4] != 1:
        raise NiftiDimError(f"{source}: 4-D volume with dim[4]={dim[4]}; only a single channel is supported")
    nx, ny, nz = dim[1:4]
    if min(nx, ny, nz) < 1:
        raise NiftiDimError(f"{source}: non-positive spatial dims {(nx, ny, nz)}")
    if datatype not in DATATYPES:
        raise NiftiDatatypeError(f"{source}: unsupported datatype {datatype}; accepted: {sorted(DATATYPES)}")
    code, expected_bitpix = DATATYPES[datatype]
    if bitpix != expected_bitpix:
        raise NiftiDatatypeError(f"{source}: bitpix {bitpix} does not match datatype {datatype} ({expected_bitpix})")
    if not vox_offset >= MIN_VOX_OFFSET:
        raise NiftiError(f"{source}: vox_offset {vox_offset} is below {MIN_VOX_OFFSET}")

    offset = int(vox_offset)
    dtype = np.dtype(bo + code)
    count = nx * ny * nz
    need = offset + count * dtype.itemsize
    if len(blob) < need:
        raise NiftiTruncatedError(f"{source}: payload truncated ({len(blob)} bytes, need {need})")
    data = np.frombuffer(blob, dtype=dtype, count=count, offset=offset).reshape(nz, ny, nx)
    return Volume(data.astype(precision.dtype), precision)


def read_nifti1(path: Union[str, Path], precision=Precision.SINGLE) -> Volume:
    return parse_nifti1(Path(path).read_bytes(), precision, str(path))


def encode_nifti1(data: np.ndarray, datatype: int = 16, byteorder: str = "<") -> bytes:
    """Encode a ``(d, h, w)`` array as a single-file NIfTI-1 image."""
    data = np.asarray(data)
    if data.ndim != 3:
        raise ValueError(f"expected a 3-D (d,h,w) array, got shape {data.shape}")
    if datatype not in DATATYPES:
        raise ValueError(f"unsupported datatype {datatype}")
    code, bitpix = DATATYPES[datatype]
    nz, ny, nx = data.shape
    header = bytearray(MIN_VOX_OFFSET)
    struct.pack_into(byteorder + "i", header, 0, HEADER_SIZE)
    struct.pack_into(byteorder + "8h", header, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into(byteorder + "2h", header, 70, datatype, bitpix)
    struct.pack_into(byteorder + "8f", header, 76, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into(byteorder + "f", header, 108, float(MIN_VOX_OFFSET))
    struct.pack_into(byteorder + "f", header, 112, 1.0)  # scl_slope
    header[344:348] = MAGIC_SINGLE
    payload = np.ascontiguousarray(data, dtype=np.dtype(byteorder + code)).tobytes()
    return bytes(header) + payload


def write_nifti1(path: Union[str, Path], data: np.ndarray, datatype: int = 16, byteorder: str = "<") -> None:
    Path(path).write_bytes(encode_nifti1(data, datatype, byteorder))
