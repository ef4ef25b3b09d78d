"""Binary file formats: LWT1 tensors and LWQC quantized-layer containers.

LWT1 tensor (all integers little endian)::

    magic  b"LWT1"          4 bytes
    dtype  u8               0 = float32
    ndim   u8
    dims   u64 * ndim
    data   float32 * prod(dims), row major

LWQC container::

    magic b"LWQC", major u16, minor u16, layer_count u32
    per layer:
        name_len u16, name utf-8
        rows u64, cols u64, block_size u32
        precision u8 * rows
        per channel: mappings f32 * 2**b, thresholds f32 * (2**b - 1)
        absmax f32 * rows * ceil(cols / block_size)
        per channel: packed codes, ceil(cols * b / 8) bytes
        has_factors u8; if 1: rank u32, L1 f32 * rows*rank, L2 f32 * rank*cols
    crc32 u32 of every preceding byte
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import List, Sequence

import numpy as np

from .codebook import Codebook, packed_length
from .errors import FormatError, LowraError
from .lowrank import LowRankFactors
from .quantizer import QuantizedLayer
from .tensor import blocks_per_row

TENSOR_MAGIC = b"LWT"
TENSOR_VERSION = 1
CONTAINER_MAGIC = b"LWQC"
CONTAINER_MAJOR = 1
CONTAINER_MINOR = 0

DTYPE_FLOAT32 = 0


def encode_tensor(array) -> bytes:
    arr = np.ascontiguousarray(array, dtype="<f4")
    header = TENSOR_MAGIC + str(TENSOR_VERSION).encode() + struct.pack("<BB", DTYPE_FLOAT32, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + arr.tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 6:
        raise FormatError(f"tensor file too short for header: {len(buf)} bytes", offset=0)
    if buf[:3] != TENSOR_MAGIC or not buf[3:4].isdigit():
        raise FormatError(f"bad tensor magic {buf[:4]!r}", offset=0)
    version = int(buf[3:4])
    if version > TENSOR_VERSION:
        raise FormatError(f"tensor format version {version} is newer than supported {TENSOR_VERSION}", offset=3)
    dtype, ndim = struct.unpack_from("<BB", buf, 4)
    if dtype != DTYPE_FLOAT32:
        raise FormatError(f"unsupported dtype code {dtype}", offset=4)
    dims_end = 6 + 8 * ndim
    if len(buf) < dims_end:
        raise FormatError(f"header truncated: need {dims_end} bytes, have {len(buf)}", offset=6)
    dims = struct.unpack_from(f"<{ndim}Q", buf, 6)
    expected = int(np.prod(dims, dtype=np.int64)) * 4
    actual = len(buf) - dims_end
    if actual != expected:
        raise FormatError(
            f"payload length mismatch: expected {expected} bytes, got {actual}", offset=dims_end
        )
    return np.frombuffer(buf, dtype="<f4", offset=dims_end).reshape(dims).astype(np.float32)


def write_tensor(path, array) -> None:
    Path(path).write_bytes(encode_tensor(array))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def read_matrix(path) -> np.ndarray:
    arr = read_tensor(path)
    if arr.ndim != 2:
        raise FormatError(f"{path}: expected a 2-D tensor, got shape {arr.shape}")
    return arr


def _f32(values) -> bytes:
    return np.ascontiguousarray(values, dtype="<f4").tobytes()


def encode_container(layers: Sequence[QuantizedLayer]) -> bytes:
    out = bytearray(CONTAINER_MAGIC)
    out += struct.pack("<HHI", CONTAINER_MAJOR, CONTAINER_MINOR, len(layers))
    for layer in layers:
        layer.validate()
        name = layer.name.encode("utf-8")
        out += struct.pack("<H", len(name)) + name
        out += struct.pack("<QQI", layer.rows, layer.cols, layer.block_size)
        out += layer.precisions.astype(np.uint8).tobytes()
        for book in layer.codebooks:
            out += _f32(book.mappings) + _f32(book.thresholds)
        out += _f32(layer.absmax)
        for data in layer.packed:
            out += data
        if layer.factors is None:
            out += b"\x00"
        else:
            f = layer.factors
            out += b"\x01" + struct.pack("<I", f.rank) + _f32(f.L1) + _f32(f.L2)
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated while reading {what}: need {n} bytes", offset=self.pos)
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def floats(self, count: int, what: str) -> np.ndarray:
        return np.frombuffer(self.take(4 * count, what), dtype="<f4").astype(np.float32)


def decode_container(buf: bytes) -> List[QuantizedLayer]:
    if len(buf) < 16:
        raise FormatError(f"container too short: {len(buf)} bytes", offset=0)
    if buf[:4] != CONTAINER_MAGIC:
        raise FormatError(f"bad container magic {buf[:4]!r}", offset=0)
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError("container checksum mismatch", offset=len(buf) - 4)
    r = _Reader(body)
    r.take(4, "magic")
    major, _minor, count = r.unpack("<HHI", "header")
    if major > CONTAINER_MAJOR:
        raise FormatError(f"container major version {major} is newer than supported {CONTAINER_MAJOR}", offset=4)
    layers = []
    for li in range(count):
        start = r.pos
        (name_len,) = r.unpack("<H", "layer name length")
        name = r.take(name_len, "layer name").decode("utf-8")
        rows, cols, block_size = r.unpack("<QQI", f"layer {name!r} shape")
        precisions = np.frombuffer(r.take(rows, "precisions"), dtype=np.uint8)
        try:
            books = []
            for p in precisions.tolist():
                levels = 1 << p
                m = r.floats(levels, "mappings")
                t = r.floats(levels - 1, "thresholds")
                books.append(Codebook(p, m, t))
            absmax = r.floats(rows * blocks_per_row(cols, block_size), "absmax")
            packed = [r.take(packed_length(cols, p), "packed codes") for p in precisions.tolist()]
            (has_factors,) = r.unpack("<B", "factor flag")
            if has_factors not in (0, 1):
                raise FormatError(f"bad factor flag {has_factors}", offset=r.pos - 1)
            factors = None
            if has_factors:
                (rank,) = r.unpack("<I", "rank")
                l1 = r.floats(rows * rank, "L1").reshape(rows, rank)
                l2 = r.floats(rank * cols, "L2").reshape(rank, cols)
                factors = LowRankFactors(l1, l2)
            layer = QuantizedLayer(
                name, rows, cols, block_size, books,
                absmax.reshape(rows, blocks_per_row(cols, block_size)), packed, factors,
            )
            for i in range(rows):
                layer.codes(i)  # rejects nonzero pad bits
        except FormatError:
            raise
        except LowraError as exc:
            raise FormatError(f"layer {li} ({name!r}) failed validation: {exc}", offset=start) from exc
        layers.append(layer)
    if r.pos != len(body):
        raise FormatError(f"{len(body) - r.pos} trailing bytes after last layer", offset=r.pos)
    return layers


def write_container(path, layers: Sequence[QuantizedLayer]) -> None:
    Path(path).write_bytes(encode_container(layers))


def read_container(path) -> List[QuantizedLayer]:
    return decode_container(Path(path).read_bytes())
