"""PTEN tensor container files.

Layout (little-endian throughout):
  bytes 0-3   magic b"PTEN"
  byte  4     version, currently 1
  byte  5     dtype code: 1 = uint8, 2 = float32
  byte  6     rank r
  next 4*r    r uint32 dimensions
  rest        row-major payload
"""

import numpy as np

MAGIC = b"PTEN"
VERSION = 1
_DTYPE_CODES = {1: np.dtype(np.uint8), 2: np.dtype("<f4")}
_CODE_FOR = {np.dtype(np.uint8): 1, np.dtype(np.float32): 2}


class PtenError(ValueError):
    """Raised when a PTEN file cannot be parsed."""


def write_pten(path, array):
    """Write a uint8 or float32 ndarray to `path` in PTEN format."""
    arr = np.asarray(array)  # tobytes() below emits C order for any layout
    if arr.dtype == np.float64:
        arr = arr.astype(np.float32)
    if arr.dtype not in _CODE_FOR:
        raise PtenError(f"{path}: unsupported dtype {arr.dtype} (only uint8 and float32)")
    if arr.ndim > 255:
        raise PtenError(f"{path}: rank {arr.ndim} exceeds 255")
    header = MAGIC + bytes([VERSION, _CODE_FOR[arr.dtype], arr.ndim])
    dims = np.asarray(arr.shape, dtype="<u4").tobytes()
    with open(path, "wb") as f:
        f.write(header)
        f.write(dims)
        f.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def read_pten(path):
    """Read a PTEN file back into an ndarray."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 7:
        raise PtenError(f"{path}: file too short for a PTEN header ({len(blob)} bytes)")
    if blob[:4] != MAGIC:
        raise PtenError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if blob[4] != VERSION:
        raise PtenError(f"{path}: unsupported version {blob[4]}, expected {VERSION}")
    code = blob[5]
    if code not in _DTYPE_CODES:
        raise PtenError(f"{path}: unknown dtype code {code}")
    rank = blob[6]
    head = 7 + 4 * rank
    if len(blob) < head:
        raise PtenError(f"{path}: truncated dimension table (rank {rank})")
    dims = np.frombuffer(blob[7:head], dtype="<u4").astype(np.int64)
    dtype = _DTYPE_CODES[code]
    expected = int(np.prod(dims)) * dtype.itemsize if rank else dtype.itemsize
    payload = blob[head:]
    if len(payload) != expected:
        raise PtenError(f"{path}: payload holds {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype=dtype).reshape(tuple(int(d) for d in dims))
    # frombuffer views are read-only; copy so callers can mutate the result
    return np.array(arr, dtype=dtype.newbyteorder("="))
