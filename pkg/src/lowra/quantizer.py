"""Mixed-precision channelwise quantizer and the quantized layer record."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .codebook import (
    Codebook,
    CodeVector,
    PackedCodes,
    dequantize_channel,
    pack_codes,
    packed_length,
    quantize_channel,
    unpack_codes,
)
from .errors import DataError, ShapeError
from .tensor import DEFAULT_BLOCK_SIZE, AbsmaxState, as_weight_matrix, block_normalize, blocks_per_row


@dataclass
class QuantizedLayer:
    """Packed codes plus everything needed to decode them.

    ``packed[i]`` is the byte-aligned code stream of channel ``i``;
    ``factors`` optionally carries the low-rank adapter initialization.
    """

    name: str
    rows: int
    cols: int
    block_size: int
    codebooks: tuple
    absmax: np.ndarray
    packed: tuple
    factors: Optional[object] = None
    precisions: np.ndarray = field(init=False)

    def __post_init__(self):
        self.codebooks = tuple(b.astype(np.float32) for b in self.codebooks)
        self.packed = tuple(bytes(p) for p in self.packed)
        self.absmax = np.asarray(self.absmax, dtype=np.float32)
        self.precisions = np.array([b.precision for b in self.codebooks], dtype=np.uint8)
        self.validate()

    def validate(self):
        if len(self.codebooks) != self.rows or len(self.packed) != self.rows:
            raise ShapeError(
                f"layer {self.name!r}: expected {self.rows} codebooks and code streams, "
                f"got {len(self.codebooks)} and {len(self.packed)}"
            )
        expected = (self.rows, blocks_per_row(self.cols, self.block_size))
        if self.absmax.shape != expected:
            raise ShapeError(f"layer {self.name!r}: absmax shape {self.absmax.shape} != {expected}")
        if np.any(self.absmax < 0) or not np.all(np.isfinite(self.absmax)):
            raise DataError(f"layer {self.name!r}: absmax must be finite and nonnegative")
        for i, (book, data) in enumerate(zip(self.codebooks, self.packed)):
            want = packed_length(self.cols, book.precision)
            if len(data) != want:
                raise ShapeError(
                    f"layer {self.name!r} channel {i}: {len(data)} packed bytes, expected {want}"
                )
        if self.factors is not None:
            l1, l2 = self.factors.L1, self.factors.L2
            if l1.shape[0] != self.rows or l2.shape[1] != self.cols or l1.shape[1] != l2.shape[0]:
                raise ShapeError(f"layer {self.name!r}: adapter factor shapes inconsistent")

    @property
    def state(self) -> AbsmaxState:
        return AbsmaxState(self.block_size, self.absmax, self.rows, self.cols)

    def codes(self, i: int) -> CodeVector:
        return unpack_codes(PackedCodes(int(self.precisions[i]), self.cols, self.packed[i]))

    def dequantize(self) -> np.ndarray:
        out = np.empty((self.rows, self.cols), dtype=np.float32)
        for i in range(self.rows):
            out[i] = dequantize_channel(
                self.codes(i), self.codebooks[i], self.absmax[i], self.block_size
            )
        return out

    @property
    def payload_bytes(self) -> int:
        return sum(len(p) for p in self.packed)

    @property
    def code_bits(self) -> int:
        return int(self.precisions.astype(np.int64).sum()) * self.cols


class ChannelQuantizer:
    """Quantize a matrix with one codebook (and hence one precision) per row."""

    def __init__(self, codebooks: Sequence[Codebook], block_size: int = DEFAULT_BLOCK_SIZE):
        if not codebooks:
            raise ShapeError("ChannelQuantizer needs at least one codebook")
        self.codebooks = tuple(b.astype(np.float32) for b in codebooks)
        self.block_size = block_size

    @property
    def precisions(self) -> np.ndarray:
        return np.array([b.precision for b in self.codebooks], dtype=np.uint8)

    def quantize(self, matrix, name: str = "") -> QuantizedLayer:
        matrix = as_weight_matrix(matrix)
        rows, cols = matrix.shape
        if rows != len(self.codebooks):
            raise ShapeError(f"matrix has {rows} rows but quantizer has {len(self.codebooks)} codebooks")
        normalized, state = block_normalize(matrix, self.block_size)
        packed = [
            pack_codes(quantize_channel(normalized[i], book)).data
            for i, book in enumerate(self.codebooks)
        ]
        return QuantizedLayer(name, rows, cols, self.block_size, self.codebooks, state.absmax, packed)

    def reconstruct(self, matrix) -> np.ndarray:
        """Shortcut for ``quantize(matrix).dequantize()``."""
        return self.quantize(matrix).dequantize()
