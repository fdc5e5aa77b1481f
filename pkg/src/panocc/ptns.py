"""Minimal binary tensor container used by the CLI and test fixtures.

Layout (all integers little-endian)::

    magic   : 5 bytes  b"PTNS1"
    rank    : u32
    dims    : u32 * rank
    dtype   : u8       0 = float32, 1 = uint8, 2 = uint16, 3 = uint32
    payload : row-major (C-order) element bytes

The container is deliberately dumb: no compression, no alignment, no
metadata.  Shape conventions (which rank means image vs. volume) are a
contract of whoever writes the file, documented in the README.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError

MAGIC = b"PTNS1"

_DTYPE_CODES = {
    0: np.dtype("<f4"),
    1: np.dtype("u1"),
    2: np.dtype("<u2"),
    3: np.dtype("<u4"),
}
_CODE_FOR_KIND = {
    np.dtype("<f4"): 0,
    np.dtype("u1"): 1,
    np.dtype("<u2"): 2,
    np.dtype("<u4"): 3,
}


def write_ptns(path, array) -> None:
    """Serialize ``array`` to ``path``.

    The array dtype must be exactly float32, uint8, uint16, or uint32;
    callers are expected to quantize explicitly so that on-disk precision
    is a visible decision, not an accident.
    """
    arr = np.ascontiguousarray(array)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    code = _CODE_FOR_KIND.get(np.dtype(dt))
    if code is None:
        raise FormatError(
            f"unsupported dtype {arr.dtype}; expected float32, uint8, uint16, or uint32"
        )
    if arr.ndim < 1:
        arr = arr.reshape(1)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(struct.pack("<B", code))
        fh.write(arr.astype(dt, copy=False).tobytes(order="C"))


def read_ptns(path) -> np.ndarray:
    """Read a tensor written by :func:`write_ptns`.

    Raises :class:`~panocc.errors.FormatError` on a bad magic string,
    unknown dtype code, or truncated payload.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 4 or blob[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a PTNS1 file (bad magic)")
    off = len(MAGIC)
    (rank,) = struct.unpack_from("<I", blob, off)
    off += 4
    if rank == 0 or rank > 32:
        raise FormatError(f"{path}: implausible rank {rank}")
    if len(blob) < off + 4 * rank + 1:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{rank}I", blob, off)
    off += 4 * rank
    code = blob[off]
    off += 1
    dt = _DTYPE_CODES.get(code)
    if dt is None:
        raise FormatError(f"{path}: unknown dtype code {code}")
    count = 1
    for d in dims:
        count *= int(d)
    need = count * dt.itemsize
    if len(blob) - off != need:
        raise FormatError(
            f"{path}: payload is {len(blob) - off} bytes, expected {need} "
            f"for shape {tuple(dims)}"
        )
    data = np.frombuffer(blob, dtype=dt, count=count, offset=off)
    return data.reshape(dims).copy()
