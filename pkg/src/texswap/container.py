"""Binary container for named float32 tensors.

Layout (all integers little-endian):
  magic "MSWP" | u32 version=1 | u32 tensor count
  per tensor: u16 name length | UTF-8 name | u8 rank | rank x u32 dims |
              row-major float32 payload

Round-trips are bit-exact. Writes go through a temp file and rename so a
reader never sees a partial file.
"""

import os
import struct

import numpy as np

MAGIC = b"MSWP"
VERSION = 1

# u32 dims make >4G-element axes unrepresentable anyway; this caps total
# payload so a corrupt header cannot trigger a huge allocation
MAX_ELEMENTS = 1 << 40
MAX_RANK = 8


class ContainerError(Exception):
    pass


class MagicError(ContainerError):
    pass


class VersionError(ContainerError):
    pass


class TruncatedError(ContainerError):
    pass


class ShapeError(ContainerError):
    pass


def write_tensors(path, tensors):
    """Write an ordered name->array mapping. Arrays must be finite float32."""
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype != np.float32:
            raise TypeError(f"tensor {name!r} is {arr.dtype}, expected float32")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"tensor {name!r} has non-finite values")
        if arr.ndim > MAX_RANK:
            raise ShapeError(f"tensor {name!r} rank {arr.ndim} > {MAX_RANK}")

    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", VERSION, len(tensors))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise ValueError(f"tensor name too long ({len(nb)} bytes)")
        blob += struct.pack("<H", len(nb))
        blob += nb
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.astype("<f4", copy=False).tobytes()

    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(blob)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def _take(buf, offset, n, what):
    if offset + n > len(buf):
        raise TruncatedError(f"file ends inside {what} (need {n} bytes at {offset})")
    return buf[offset:offset + n], offset + n


def read_tensors(path):
    """Read a container back into an ordered name->float32-array dict."""
    with open(path, "rb") as f:
        buf = f.read()

    off = 0
    magic, off = _take(buf, off, 4, "magic")
    if magic != MAGIC:
        raise MagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    head, off = _take(buf, off, 8, "header")
    version, count = struct.unpack("<II", head)
    if version != VERSION:
        raise VersionError(f"unsupported version {version}, expected {VERSION}")

    out = {}
    for i in range(count):
        raw, off = _take(buf, off, 2, f"name length of tensor {i}")
        (nlen,) = struct.unpack("<H", raw)
        raw, off = _take(buf, off, nlen, f"name of tensor {i}")
        name = raw.decode("utf-8")
        raw, off = _take(buf, off, 1, f"rank of {name!r}")
        rank = raw[0]
        if rank > MAX_RANK:
            raise ShapeError(f"tensor {name!r} rank {rank} > {MAX_RANK}")
        raw, off = _take(buf, off, 4 * rank, f"dims of {name!r}")
        dims = struct.unpack(f"<{rank}I", raw)
        n_elem = 1
        for d in dims:
            n_elem *= d
        if n_elem > MAX_ELEMENTS:
            raise ShapeError(f"tensor {name!r} has {n_elem} elements (cap {MAX_ELEMENTS})")
        raw, off = _take(buf, off, 4 * n_elem, f"payload of {name!r}")
        out[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32, copy=True)
    return out
