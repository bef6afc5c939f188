import struct

import numpy as np
import pytest

from texswap import container
from texswap.container import (
    MagicError,
    ShapeError,
    TruncatedError,
    VersionError,
    read_tensors,
    write_tensors,
)


def _sample_tensors(seed=0):
    rng = np.random.default_rng(seed)
    return {
        "weights": rng.standard_normal((3, 4, 5)).astype(np.float32),
        "bias": rng.standard_normal(7).astype(np.float32),
        "scalar": rng.standard_normal(1).astype(np.float32),
        "empty_axis": np.zeros((0, 3), np.float32),
    }


def test_roundtrip_bitwise(tmp_path):
    path = str(tmp_path / "a.mswp")
    tensors = _sample_tensors()
    write_tensors(path, tensors)
    back = read_tensors(path)
    assert list(back) == list(tensors)  # order preserved
    for name in tensors:
        got, want = back[name], tensors[name]
        assert got.shape == want.shape
        assert got.dtype == np.float32
        assert np.array_equal(
            got.view(np.uint32), want.view(np.uint32)
        ), f"payload of {name} not bit-identical"


def test_rewrite_identical_bytes(tmp_path):
    # same tensors in, same bytes out: no timestamps or padding jitter
    a, b = str(tmp_path / "a.mswp"), str(tmp_path / "b.mswp")
    write_tensors(a, _sample_tensors(3))
    write_tensors(b, _sample_tensors(3))
    assert open(a, "rb").read() == open(b, "rb").read()


def test_empty_mapping(tmp_path):
    path = str(tmp_path / "none.mswp")
    write_tensors(path, {})
    assert read_tensors(path) == {}


def test_header_fields(tmp_path):
    path = str(tmp_path / "hdr.mswp")
    write_tensors(path, {"x": np.ones(2, np.float32)})
    raw = open(path, "rb").read()
    assert raw[:4] == b"MSWP"
    version, count = struct.unpack("<II", raw[4:12])
    assert version == 1 and count == 1


def test_bad_magic(tmp_path):
    path = str(tmp_path / "bad.mswp")
    write_tensors(path, {"x": np.ones(2, np.float32)})
    raw = bytearray(open(path, "rb").read())
    raw[:4] = b"JUNK"
    open(path, "wb").write(raw)
    with pytest.raises(MagicError):
        read_tensors(path)


def test_bad_version(tmp_path):
    path = str(tmp_path / "v9.mswp")
    write_tensors(path, {"x": np.ones(2, np.float32)})
    raw = bytearray(open(path, "rb").read())
    raw[4:8] = struct.pack("<I", 9)
    open(path, "wb").write(raw)
    with pytest.raises(VersionError):
        read_tensors(path)


def test_truncated_payload(tmp_path):
    path = str(tmp_path / "cut.mswp")
    write_tensors(path, {"x": np.arange(100, dtype=np.float32)})
    raw = open(path, "rb").read()
    open(path, "wb").write(raw[:-17])
    with pytest.raises(TruncatedError):
        read_tensors(path)


def test_truncated_header(tmp_path):
    path = str(tmp_path / "stub.mswp")
    open(path, "wb").write(b"MS")
    with pytest.raises(TruncatedError):
        read_tensors(path)


def test_huge_dims_rejected_without_allocation(tmp_path):
    # corrupt dims that claim ~10^19 elements must fail the cap check,
    # not attempt the allocation
    path = str(tmp_path / "huge.mswp")
    blob = b"MSWP" + struct.pack("<II", 1, 1)
    blob += struct.pack("<H", 1) + b"x" + struct.pack("<B", 2)
    blob += struct.pack("<II", 0xFFFFFFFF, 0xFFFFFFFF)
    open(path, "wb").write(blob)
    with pytest.raises(ShapeError):
        read_tensors(path)


def test_excessive_rank_rejected(tmp_path):
    path = str(tmp_path / "rank.mswp")
    blob = b"MSWP" + struct.pack("<II", 1, 1)
    blob += struct.pack("<H", 1) + b"x" + struct.pack("<B", 200)
    open(path, "wb").write(blob)
    with pytest.raises(ShapeError):
        read_tensors(path)
    with pytest.raises(ShapeError):
        write_tensors(str(tmp_path / "w.mswp"), {"x": np.zeros((1,) * 9, np.float32)})


def test_write_rejects_wrong_dtype(tmp_path):
    with pytest.raises(TypeError):
        write_tensors(str(tmp_path / "f64.mswp"), {"x": np.zeros(3)})


def test_write_rejects_non_finite(tmp_path):
    bad = np.array([1.0, np.nan], np.float32)
    with pytest.raises(ValueError):
        write_tensors(str(tmp_path / "nan.mswp"), {"x": bad})


def test_failed_write_leaves_no_partial_file(tmp_path):
    path = str(tmp_path / "atomic.mswp")
    write_tensors(path, {"x": np.ones(4, np.float32)})
    before = open(path, "rb").read()
    with pytest.raises(ValueError):
        write_tensors(path, {"x": np.array([np.inf], np.float32)})
    assert open(path, "rb").read() == before


def test_error_classes_share_base():
    for cls in (MagicError, VersionError, TruncatedError, ShapeError):
        assert issubclass(cls, container.ContainerError)
