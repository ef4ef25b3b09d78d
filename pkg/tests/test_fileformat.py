import struct
import zlib

import numpy as np
import pytest

from lowra.codebook import default_codebook
from lowra.errors import FormatError
from lowra.fileformat import (
    decode_container,
    decode_tensor,
    encode_container,
    encode_tensor,
    read_container,
    read_matrix,
    read_tensor,
    write_container,
    write_tensor,
)
from lowra.lowrank import loftq_init
from lowra.quantizer import ChannelQuantizer


def sample_layers(rng, with_factors=True):
    w1 = rng.standard_normal((5, 70)).astype(np.float32)
    w2 = rng.standard_normal((3, 64)).astype(np.float32)
    q1 = ChannelQuantizer([default_codebook(p) for p in (1, 2, 4, 2, 1)], 64)
    q2 = ChannelQuantizer([default_codebook(4)] * 3, 32)
    first = q1.quantize(w1, "layers.0.q")
    if with_factors:
        first, _, _ = loftq_init(w1, q1, 2, steps=2, name="layers.0.q")
    return [first, q2.quantize(w2, "layers.0.k")]


def test_tensor_round_trip(tmp_path, rng):
    m = rng.standard_normal((3, 5)).astype(np.float32)
    write_tensor(tmp_path / "m.lwt", m)
    back = read_tensor(tmp_path / "m.lwt")
    assert back.dtype == np.float32 and back.tobytes() == m.tobytes()
    assert read_matrix(tmp_path / "m.lwt").shape == (3, 5)


def test_tensor_sizes():
    assert len(encode_tensor(np.zeros(1, dtype=np.float32))) == 4 + 1 + 1 + 8 + 4
    assert len(encode_tensor(np.zeros((1, 1), dtype=np.float32))) == 4 + 1 + 1 + 2 * 8 + 4


def test_tensor_header_layout():
    buf = encode_tensor(np.array([[1.5, -2.0]], dtype=np.float32))
    assert buf[:4] == b"LWT1" and buf[4] == 0 and buf[5] == 2
    assert struct.unpack("<QQ", buf[6:22]) == (1, 2)
    assert struct.unpack("<2f", buf[22:]) == (1.5, -2.0)


def test_tensor_errors():
    good = encode_tensor(np.ones((2, 2), dtype=np.float32))
    with pytest.raises(FormatError, match="expected 16 bytes, got 12"):
        decode_tensor(good[:-4])
    with pytest.raises(FormatError, match="magic"):
        decode_tensor(b"XXXX" + good[4:])
    with pytest.raises(FormatError, match="dtype"):
        decode_tensor(good[:4] + b"\x07" + good[5:])
    with pytest.raises(FormatError, match="newer"):
        decode_tensor(b"LWT2" + good[4:])
    with pytest.raises(FormatError, match="offset"):
        decode_tensor(good[:10])


def test_matrix_must_be_2d(tmp_path):
    write_tensor(tmp_path / "v.lwt", np.ones(3, dtype=np.float32))
    with pytest.raises(FormatError):
        read_matrix(tmp_path / "v.lwt")


def test_container_round_trip(tmp_path, rng):
    layers = sample_layers(rng)
    write_container(tmp_path / "c.lwqc", layers)
    back = read_container(tmp_path / "c.lwqc")
    assert [l.name for l in back] == ["layers.0.q", "layers.0.k"]
    for a, b in zip(layers, back):
        assert a.packed == b.packed
        assert np.array_equal(a.absmax, b.absmax)
        assert all(x == y for x, y in zip(a.codebooks, b.codebooks))
        assert a.dequantize().tobytes() == b.dequantize().tobytes()
    assert np.array_equal(back[0].factors.L1, layers[0].factors.L1)
    assert back[1].factors is None


def test_empty_container():
    buf = encode_container([])
    assert decode_container(buf) == []
    assert len(buf) == 4 + 2 + 2 + 4 + 4


def test_container_rejects_corruption(rng):
    buf = bytearray(encode_container(sample_layers(rng)))
    bad = bytes(buf[:20]) + bytes([buf[20] ^ 1]) + bytes(buf[21:])
    with pytest.raises(FormatError, match="checksum"):
        decode_container(bad)


def _reseal(body: bytes) -> bytes:
    return body + struct.pack("<I", zlib.crc32(body))


def test_container_rejects_newer_major(rng):
    body = bytearray(encode_container(sample_layers(rng))[:-4])
    body[4:6] = struct.pack("<H", 2)
    with pytest.raises(FormatError, match="newer"):
        decode_container(_reseal(bytes(body)))


def test_container_rejects_invalid_codebook(rng):
    layer = sample_layers(rng, with_factors=False)[1]
    body = bytearray(encode_container([layer])[:-4])
    name_end = 12 + 2 + len(layer.name)
    first_map = name_end + 8 + 8 + 4 + layer.rows
    body[first_map:first_map + 4] = struct.pack("<f", 5.0)  # breaks ascending order
    with pytest.raises(FormatError, match="validation"):
        decode_container(_reseal(bytes(body)))


def test_container_rejects_trailing_bytes(rng):
    body = encode_container(sample_layers(rng))[:-4] + b"\x00"
    with pytest.raises(FormatError, match="trailing"):
        decode_container(_reseal(body))


def test_container_rejects_truncation(rng):
    body = encode_container(sample_layers(rng))[:-4]
    with pytest.raises(FormatError, match="truncated"):
        decode_container(_reseal(body[:-7]))
