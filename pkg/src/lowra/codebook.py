"""Per-channel quantization functions and the 1/2/4-bit packing layout.

A codebook holds ``2**b`` ascending mappings (decoded values) and ``2**b - 1``
ascending thresholds. A value ``x`` gets code ``j`` when
``thresholds[j-1] < x <= thresholds[j]``, with implicit outer thresholds at
-inf and +inf.

Packing layout: element ``e`` occupies bits ``[(e % k) * b, (e % k) * b + b)``
of byte ``e // k`` where ``k = 8 // b``, least significant bits first. The
last byte is zero padded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, FormatError, ShapeError

SUPPORTED_PRECISIONS = (1, 2, 4)

NF4_MAPPINGS = (
    -1.0, -0.6961928, -0.5250731, -0.3949175, -0.28444138,
    -0.18477343, -0.09105, 0.0, 0.0795803, 0.1609302,
    0.2461123, 0.33791524, 0.44070983, 0.562617, 0.72295684, 1.0,
)

# The 2-bit third level is NF4's 0.33791524; the published thresholds
# 0.16895762 / 0.66895762 are exact midpoints of this unrounded value.
NF2_MAPPINGS = (-1.0, 0.0, 0.33791524, 1.0)
NF2_THRESHOLDS = (-0.5, 0.16895762, 0.66895762)

ONE_BIT_MAPPINGS = (-1.0, 1.0)
ONE_BIT_THRESHOLDS = (0.0,)


def check_precision(precision) -> int:
    if precision not in SUPPORTED_PRECISIONS:
        raise ConfigError(
            f"unsupported precision {precision!r}; expected one of {SUPPORTED_PRECISIONS}"
        )
    return int(precision)


def midpoints(mappings) -> np.ndarray:
    mappings = np.asarray(mappings, dtype=np.float64)
    return (mappings[:-1] + mappings[1:]) / 2.0


@dataclass(frozen=True)
class Codebook:
    """Quantization function of one output channel."""

    precision: int
    mappings: np.ndarray
    thresholds: np.ndarray

    def __post_init__(self):
        check_precision(self.precision)
        # float32 books (container round trips) stay float32; anything else is float64.
        dtype = np.float32 if np.asarray(self.mappings).dtype == np.float32 else np.float64
        mappings = np.array(self.mappings, dtype=dtype)
        thresholds = np.array(self.thresholds, dtype=mappings.dtype)
        levels = 1 << self.precision
        if mappings.shape != (levels,) or thresholds.shape != (levels - 1,):
            raise ShapeError(
                f"{self.precision}-bit codebook needs {levels} mappings and "
                f"{levels - 1} thresholds, got {mappings.shape} and {thresholds.shape}"
            )
        if not (np.all(np.isfinite(mappings)) and np.all(np.isfinite(thresholds))):
            raise DataError("codebook entries must be finite")
        # Weak ordering: float32 rounding of a fitted book may create ties.
        if np.any(np.diff(mappings) < 0) or np.any(np.diff(thresholds) < 0):
            raise DataError("codebook mappings and thresholds must be ascending")
        if np.any(mappings[:-1] > thresholds) or np.any(thresholds > mappings[1:]):
            raise DataError("each threshold must lie between its neighbouring mappings")
        mappings.setflags(write=False)
        thresholds.setflags(write=False)
        object.__setattr__(self, "mappings", mappings)
        object.__setattr__(self, "thresholds", thresholds)

    @property
    def levels(self) -> int:
        return 1 << self.precision

    def astype(self, dtype) -> "Codebook":
        return Codebook(
            self.precision,
            np.asarray(self.mappings, dtype=dtype),
            np.asarray(self.thresholds, dtype=dtype),
        )

    def scaled(self, factor: float) -> "Codebook":
        return Codebook(self.precision, self.mappings * factor, self.thresholds * factor)

    def __eq__(self, other):
        if not isinstance(other, Codebook):
            return NotImplemented
        return (
            self.precision == other.precision
            and self.mappings.dtype == other.mappings.dtype
            and np.array_equal(self.mappings, other.mappings)
            and np.array_equal(self.thresholds, other.thresholds)
        )

    __hash__ = None


def default_codebook(precision: int) -> Codebook:
    """Initial codebook used to seed the Lloyd-Max learner."""
    precision = check_precision(precision)
    if precision == 1:
        return Codebook(1, ONE_BIT_MAPPINGS, ONE_BIT_THRESHOLDS)
    if precision == 2:
        return Codebook(2, NF2_MAPPINGS, NF2_THRESHOLDS)
    return Codebook(4, NF4_MAPPINGS, midpoints(NF4_MAPPINGS))


@dataclass(frozen=True)
class CodeVector:
    precision: int
    codes: np.ndarray

    def __post_init__(self):
        check_precision(self.precision)
        codes = np.asarray(self.codes)
        if codes.ndim != 1:
            raise ShapeError("codes must be 1-D")
        if codes.size and (codes.min() < 0 or codes.max() >= (1 << self.precision)):
            raise DataError(f"code out of range for {self.precision}-bit precision")
        object.__setattr__(self, "codes", codes.astype(np.uint8))

    def __len__(self):
        return self.codes.size


@dataclass(frozen=True)
class PackedCodes:
    precision: int
    element_count: int
    data: bytes


def quantize_channel(values, book: Codebook) -> CodeVector:
    """Bin each value with the half-open rule ``(theta[j-1], theta[j]]``."""
    values = np.asarray(values)
    if np.isnan(values).any():
        raise DataError("cannot quantize NaN")
    # searchsorted(side="left") counts thresholds strictly below x.
    codes = np.searchsorted(book.thresholds, values.ravel(), side="left")
    return CodeVector(book.precision, codes.astype(np.uint8))


def dequantize_channel(codes: CodeVector, book: Codebook, absmax, block_size=None) -> np.ndarray:
    """Decode codes and rescale by the per-element (or per-block) absmax.

    ``absmax`` is either one value per element, or one value per block when
    ``block_size`` is given.
    """
    if codes.precision != book.precision:
        raise DataError(
            f"codes are {codes.precision}-bit but codebook is {book.precision}-bit"
        )
    n = len(codes)
    absmax = np.asarray(absmax, dtype=np.float32)
    if block_size is not None:
        absmax = np.repeat(absmax, block_size)[:n]
    if absmax.shape != (n,):
        raise ShapeError(f"absmax covers {absmax.size} elements, codes have {n}")
    table = np.asarray(book.mappings, dtype=np.float32)
    return table[codes.codes] * absmax


def packed_length(element_count: int, precision: int) -> int:
    return -(-element_count * precision // 8)


def pack_codes(codes: CodeVector) -> PackedCodes:
    b = codes.precision
    per_byte = 8 // b
    n = len(codes)
    nbytes = packed_length(n, b)
    padded = np.zeros(nbytes * per_byte, dtype=np.uint8)
    padded[:n] = codes.codes
    shifts = (np.arange(per_byte, dtype=np.uint8) * b)
    packed = np.bitwise_or.reduce(padded.reshape(nbytes, per_byte) << shifts, axis=1)
    return PackedCodes(b, n, packed.astype(np.uint8).tobytes())


def unpack_codes(packed: PackedCodes) -> CodeVector:
    b = check_precision(packed.precision)
    n = packed.element_count
    expected = packed_length(n, b)
    if len(packed.data) != expected:
        raise FormatError(
            f"packed payload is {len(packed.data)} bytes, expected {expected} "
            f"for {n} {b}-bit codes"
        )
    per_byte = 8 // b
    raw = np.frombuffer(packed.data, dtype=np.uint8)
    shifts = np.arange(per_byte, dtype=np.uint8) * b
    mask = np.uint8((1 << b) - 1)
    codes = ((raw[:, None] >> shifts) & mask).reshape(-1)
    if np.any(codes[n:]):
        raise FormatError("nonzero pad bits in packed payload", offset=expected - 1)
    return CodeVector(b, codes[:n])
