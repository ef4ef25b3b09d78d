"""Weight matrices, groupwise absmax normalization and channel statistics.

A weight matrix is a plain 2-D ``float32`` numpy array whose rows are output
channels. Normalization blocks are contiguous runs of ``block_size`` elements
inside a row; a trailing partial block is scaled by its own absmax.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError

DEFAULT_BLOCK_SIZE = 64


def as_weight_matrix(data, name="matrix") -> np.ndarray:
    """Validate ``data`` as a finite 2-D matrix and return it as float32."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name} must have rows >= 1 and cols >= 1, got {arr.shape}")
    return arr


def blocks_per_row(cols: int, block_size: int) -> int:
    return -(-cols // block_size)


@dataclass(frozen=True)
class AbsmaxState:
    """Per-block absmax values of a normalized matrix.

    ``absmax`` has shape ``(rows, blocks_per_row)``.
    """

    block_size: int
    absmax: np.ndarray
    rows: int
    cols: int

    def __post_init__(self):
        absmax = np.asarray(self.absmax, dtype=np.float32)
        expected = (self.rows, blocks_per_row(self.cols, self.block_size))
        if absmax.shape != expected:
            raise ShapeError(f"absmax shape {absmax.shape} does not match {expected}")
        if np.any(absmax < 0) or not np.all(np.isfinite(absmax)):
            raise DataError("absmax values must be finite and nonnegative")
        object.__setattr__(self, "absmax", absmax)

    def row(self, i: int) -> np.ndarray:
        """Absmax values of row ``i``, one per block."""
        return self.absmax[i]

    def expand_row(self, i: int) -> np.ndarray:
        """Absmax of row ``i`` broadcast to one value per element."""
        return np.repeat(self.absmax[i], self.block_size)[: self.cols]

    def expand(self) -> np.ndarray:
        """Per-element absmax for the whole matrix, shape ``(rows, cols)``."""
        return np.repeat(self.absmax, self.block_size, axis=1)[:, : self.cols]


def _blocked(matrix: np.ndarray, block_size: int) -> np.ndarray:
    rows, cols = matrix.shape
    nblocks = blocks_per_row(cols, block_size)
    padded = np.zeros((rows, nblocks * block_size), dtype=matrix.dtype)
    padded[:, :cols] = matrix
    return padded.reshape(rows, nblocks, block_size)


def block_normalize(matrix, block_size: int = DEFAULT_BLOCK_SIZE):
    """Scale every block by its maximum absolute value.

    Returns ``(normalized, state)``. Normalized values lie in [-1, 1] and the
    absmax element of each nonzero block maps to exactly +-1. All-zero blocks
    stay zero and record absmax 0.
    """
    if block_size < 1:
        raise ShapeError(f"block_size must be >= 1, got {block_size}")
    matrix = as_weight_matrix(matrix)
    rows, cols = matrix.shape
    finite = np.isfinite(matrix)
    if not finite.all():
        r, c = np.argwhere(~finite)[0]
        raise DataError(
            f"non-finite value in row {r}, block {c // block_size} (column {c})"
        )
    blocks = _blocked(matrix, block_size)
    absmax = np.abs(blocks).max(axis=2)
    safe = np.where(absmax > 0, absmax, np.float32(1.0))
    normalized = (blocks / safe[:, :, None]).reshape(rows, -1)[:, :cols]
    state = AbsmaxState(block_size, absmax, rows, cols)
    return np.ascontiguousarray(normalized, dtype=np.float32), state


def block_denormalize(normalized, state: AbsmaxState) -> np.ndarray:
    """Multiply normalized values back by their block absmax."""
    normalized = as_weight_matrix(normalized, "normalized")
    if normalized.shape != (state.rows, state.cols):
        raise ShapeError(
            f"normalized shape {normalized.shape} does not match state "
            f"({state.rows}, {state.cols})"
        )
    return (normalized * state.expand()).astype(np.float32)


@dataclass(frozen=True)
class StdReport:
    mean_std_out: float
    mean_std_in: float
    ratio: float

    def format(self) -> str:
        ratio = "+Inf" if math.isinf(self.ratio) else f"{self.ratio:.4f}"
        return (
            f"mean std (output channels): {self.mean_std_out:.6g}\n"
            f"mean std (input channels):  {self.mean_std_in:.6g}\n"
            f"ratio out/in:               {ratio}"
        )


def channel_std_stats(matrix) -> StdReport:
    """Compare spread along output channels (rows) with input channels (columns).

    Uses the population standard deviation (divisor N).
    """
    matrix = as_weight_matrix(matrix).astype(np.float64)
    if matrix.shape[1] < 2:
        raise ShapeError("channel_std_stats needs at least 2 columns")
    out = float(matrix.std(axis=1).mean())
    inp = float(matrix.std(axis=0).mean())
    ratio = out / inp if inp > 0 else math.inf
    return StdReport(out, inp, ratio)
