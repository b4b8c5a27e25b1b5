"""Dense tensors, norms, the SplitMix64 generator and the OCT1 file format.

Tensors are plain numpy arrays of rank 1 to 4 whose dtype is one of
float32, float64, complex64 or complex128.  The last two axes are spatial.

OCT1 layout (little-endian, no padding, no footer)::

    offset  size  field
    0       4     magic b"OCT1"
    4       1     dtype code (0=f32, 1=f64, 2=c64, 3=c128)
    5       1     rank r in [1, 4]
    6       4*r   extents, u32 each
    6+4*r   ...   row-major payload; complex entries are interleaved (re, im)
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import (
    BadMagicError,
    RankError,
    ShapeError,
    TrailingDataError,
    TruncatedPayloadError,
    UnsupportedDtypeError,
)

MAGIC = b"OCT1"
MAX_RANK = 4

_CODE_TO_DTYPE = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("<c8"),
    3: np.dtype("<c16"),
}
_DTYPE_TO_CODE = {dt.newbyteorder("="): code for code, dt in _CODE_TO_DTYPE.items()}

PRECISIONS = ("f32", "f64")


def real_dtype(precision: str) -> np.dtype:
    if precision == "f32":
        return np.dtype(np.float32)
    if precision == "f64":
        return np.dtype(np.float64)
    raise ValueError(f"unknown precision {precision!r}; expected one of {PRECISIONS}")


def complex_dtype(precision: str) -> np.dtype:
    return np.result_type(real_dtype(precision), np.complex64)


def precision_of(t: np.ndarray) -> str:
    """Return ``"f32"`` or ``"f64"`` for a real or complex array."""
    if t.dtype in (np.float32, np.complex64):
        return "f32"
    if t.dtype in (np.float64, np.complex128):
        return "f64"
    raise ShapeError(f"unsupported dtype {t.dtype}")


def eps(precision: str) -> float:
    return float(np.finfo(real_dtype(precision)).eps)


def as_tensor(data, precision: str = "f64") -> np.ndarray:
    """Coerce ``data`` to a real tensor of the given precision and check rank."""
    t = np.ascontiguousarray(data, dtype=real_dtype(precision))
    _check_rank(t.shape)
    return t


def _check_rank(shape) -> None:
    if not 1 <= len(shape) <= MAX_RANK:
        raise RankError(f"rank {len(shape)} outside [1, {MAX_RANK}]")


def frobenius_norm(t: np.ndarray) -> float:
    """Square root of the sum of squared moduli of all entries.

    Scaled by the largest modulus so tiny or huge entries neither underflow
    nor overflow when squared.
    """
    t = np.asarray(t)
    if t.size == 0:
        raise ShapeError("empty tensor")
    mag = np.abs(t.ravel())
    top = mag.max()
    if top == 0 or not np.isfinite(top):
        return float(top)
    return float(top * np.linalg.norm(mag / top))


# --------------------------------------------------------------------------
# SplitMix64
# --------------------------------------------------------------------------

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def derive_seed(master: int, index: int) -> int:
    """Independent child seed for stream ``index`` of ``master``."""
    state = np.array([(master + (index + 1) * 0x9E3779B97F4A7C15) & _MASK64], dtype=np.uint64)
    return int(_mix(state)[0])


class SplitMix64:
    """SplitMix64 stream.

    The i-th output (i = 1, 2, ...) is ``mix(seed + i * 0x9E3779B97F4A7C15)``
    with the standard mixer constants ``0xBF58476D1CE4E5B9`` and
    ``0x94D049BB133111EB`` and shifts 30, 27, 31.  Uniforms take the top 53
    bits; normals use the cosine branch of Box-Muller on consecutive
    uniform pairs.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def next_u64(self, size: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + size + 1, dtype=np.uint64)
        self.counter += size
        with np.errstate(over="ignore"):
            state = np.uint64(self.seed) + idx * _GAMMA
            return _mix(state)

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        size = int(np.prod(shape, dtype=np.int64))
        u = (self.next_u64(size) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return (low + (high - low) * u).reshape(shape)

    def normal(self, shape=(), precision: str = "f64") -> np.ndarray:
        size = int(np.prod(shape, dtype=np.int64))
        u = (self.next_u64(2 * size) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        u1 = 1.0 - u[0::2]  # (0, 1]
        u2 = u[1::2]
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return z.reshape(shape).astype(real_dtype(precision))


# --------------------------------------------------------------------------
# OCT1
# --------------------------------------------------------------------------


def encode_tensor(t: np.ndarray) -> bytes:
    t = np.asarray(t)
    _check_rank(t.shape)
    code = _DTYPE_TO_CODE.get(t.dtype.newbyteorder("="))
    if code is None:
        raise UnsupportedDtypeError(f"cannot encode dtype {t.dtype}")
    for d in t.shape:
        if d > 0xFFFFFFFF:
            raise ShapeError(f"extent {d} does not fit in u32")
    header = MAGIC + struct.pack("<BB", code, t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape)
    payload = np.ascontiguousarray(t, dtype=_CODE_TO_DTYPE[code]).tobytes()
    return header + payload


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 6:
        raise TruncatedPayloadError(f"header needs 6 bytes, got {len(buf)}")
    if buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}")
    code, rank = buf[4], buf[5]
    if code not in _CODE_TO_DTYPE:
        raise UnsupportedDtypeError(f"unknown dtype code {code}")
    if not 1 <= rank <= MAX_RANK:
        raise RankError(f"rank {rank} outside [1, {MAX_RANK}]")
    head = 6 + 4 * rank
    if len(buf) < head:
        raise TruncatedPayloadError("truncated extents")
    dims = struct.unpack(f"<{rank}I", buf[6:head])
    dtype = _CODE_TO_DTYPE[code]
    nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    have = len(buf) - head
    if have < nbytes:
        raise TruncatedPayloadError(f"payload has {have} bytes, expected {nbytes}")
    if have > nbytes:
        raise TrailingDataError(f"{have - nbytes} trailing bytes after payload")
    arr = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=head)
    return arr.reshape(dims).astype(dtype.newbyteorder("="), copy=True)


def write_tensor(t: np.ndarray, path: str | os.PathLike) -> None:
    data = encode_tensor(t)
    with open(path, "wb") as fh:
        fh.write(data)


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_tensor(fh.read())
