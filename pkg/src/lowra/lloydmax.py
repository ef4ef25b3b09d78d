"""Weighted Lloyd-Max codebook learning.

Each point is a normalized weight and carries its block absmax as weight, so
blocks of larger magnitude pull the codepoints harder. One iteration bins the
points with the current thresholds, moves every codepoint to the weighted
centroid of its bin and resets the thresholds to midpoints between
consecutive codepoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .codebook import Codebook, check_precision, default_codebook, midpoints
from .errors import ConfigError, DataError, ShapeError
from .quantizer import ChannelQuantizer
from .tensor import DEFAULT_BLOCK_SIZE, as_weight_matrix, block_normalize

DEFAULT_LLOYD_ITERS = 2


@dataclass(frozen=True)
class WeightedSamples:
    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).ravel()
        weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if values.shape != weights.shape:
            raise ShapeError(f"{values.size} values but {weights.size} weights")
        if not (np.all(np.isfinite(values)) and np.all(np.isfinite(weights))):
            raise DataError("samples and weights must be finite")
        if np.any(weights < 0):
            raise DataError("weights must be nonnegative")
        if not np.any(weights > 0):
            raise DataError("at least one weight must be positive")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)

    def __len__(self):
        return self.values.size


def channel_samples(normalized_row, absmax_per_element, weight_power: int = 1) -> WeightedSamples:
    """Pair normalized values with ``absmax ** weight_power`` weights.

    ``weight_power=1`` is the default absmax weighting; ``2`` weights by
    absmax squared, which matches squared error in the original scale.
    """
    if weight_power not in (1, 2):
        raise ConfigError(f"weight_power must be 1 or 2, got {weight_power}")
    w = np.asarray(absmax_per_element, dtype=np.float64) ** weight_power
    if not np.any(w > 0):
        # All-zero channel: every value is 0 and decodes to 0 regardless.
        w = np.ones_like(w)
    return WeightedSamples(normalized_row, w)


@dataclass
class FitTrace:
    """Weighted MSE before fitting (index 0) and after each iteration."""

    mse: List[float] = field(default_factory=list)
    converged: bool = False
    iterations_run: int = 0


def bin_codes(values, thresholds) -> np.ndarray:
    return np.searchsorted(np.asarray(thresholds), values, side="left")


def weighted_mse(samples: WeightedSamples, book: Codebook) -> float:
    codes = bin_codes(samples.values, book.thresholds)
    err = samples.values - np.asarray(book.mappings, dtype=np.float64)[codes]
    return float(np.dot(samples.weights, err * err) / samples.weights.sum())


def weighted_bin_means(samples: WeightedSamples, thresholds, fallback) -> np.ndarray:
    """Weighted centroid per bin; bins without weight keep ``fallback``."""
    fallback = np.asarray(fallback, dtype=np.float64)
    codes = bin_codes(samples.values, thresholds)
    levels = fallback.size
    wsum = np.bincount(codes, weights=samples.weights, minlength=levels)
    wx = np.bincount(codes, weights=samples.weights * samples.values, minlength=levels)
    means = fallback.copy()
    nonempty = wsum > 0
    means[nonempty] = wx[nonempty] / wsum[nonempty]
    return means


def lloyd_fit_channel(
    samples: WeightedSamples, init: Codebook, max_iters: int = DEFAULT_LLOYD_ITERS
) -> Tuple[Codebook, FitTrace]:
    """Fit one channel's codebook starting from ``init``.

    Stops after ``max_iters`` iterations or as soon as an iteration fails to
    lower the weighted MSE, and returns the last codebook computed.
    """
    if max_iters < 1:
        raise ConfigError("max_iters must be >= 1")
    book = init.astype(np.float64)
    trace = FitTrace(mse=[weighted_mse(samples, book)])
    for _ in range(max_iters):
        mappings = weighted_bin_means(samples, book.thresholds, book.mappings)
        book = Codebook(book.precision, mappings, midpoints(mappings))
        trace.mse.append(weighted_mse(samples, book))
        trace.iterations_run += 1
        if trace.mse[-1] >= trace.mse[-2]:
            trace.converged = True
            break
    return book, trace


def average_thresholds(
    codebooks: Sequence[Codebook], samples: Sequence[WeightedSamples]
) -> Tuple[np.ndarray, List[Codebook]]:
    """Share one threshold vector across a layer and refit the mappings.

    The shared thresholds are the elementwise mean over channels. Every
    channel then takes one M-step under them. A bin left empty keeps its old
    codepoint, clipped into the bin so thresholds still separate codepoints.
    """
    if not codebooks:
        raise ShapeError("average_thresholds needs at least one codebook")
    if len(codebooks) != len(samples):
        raise ShapeError(f"{len(codebooks)} codebooks but {len(samples)} sample sets")
    precisions = {b.precision for b in codebooks}
    if len(precisions) != 1:
        raise ShapeError(f"codebooks mix precisions {sorted(precisions)}")
    (precision,) = precisions
    stacked = np.stack([np.asarray(b.thresholds, dtype=np.float64) for b in codebooks])
    shared = stacked.mean(axis=0)
    lower = np.concatenate(([-np.inf], shared))
    upper = np.concatenate((shared, [np.inf]))
    refitted = []
    for book, s in zip(codebooks, samples):
        prior = np.clip(np.asarray(book.mappings, dtype=np.float64), lower, upper)
        mappings = weighted_bin_means(s, shared, prior)
        refitted.append(Codebook(precision, mappings, shared))
    return shared, refitted


@dataclass
class MseTable:
    """Reconstruction MSE of every channel at every allowed precision.

    ``mse[i, k]`` is the error of channel ``i`` at ``precisions[k]``, measured
    in the original (denormalized) scale. ``params`` holds each channel's
    parameter count.
    """

    precisions: tuple
    mse: np.ndarray
    params: np.ndarray

    def __post_init__(self):
        self.precisions = tuple(int(p) for p in self.precisions)
        self.mse = np.asarray(self.mse, dtype=np.float64)
        self.params = np.asarray(self.params, dtype=np.int64)
        if self.mse.shape != (self.params.size, len(self.precisions)):
            raise ShapeError(
                f"mse table shape {self.mse.shape} does not match "
                f"{self.params.size} channels x {len(self.precisions)} precisions"
            )
        if np.any(self.mse < 0) or not np.all(np.isfinite(self.mse)):
            raise DataError("mse entries must be finite and nonnegative")

    @property
    def channels(self) -> int:
        return self.params.size

    def column(self, precision: int) -> np.ndarray:
        return self.mse[:, self.precisions.index(precision)]

    def restrict(self, precisions) -> "MseTable":
        """Keep only the columns for ``precisions`` (in the given order)."""
        missing = [p for p in precisions if p not in self.precisions]
        if missing:
            raise ConfigError(f"mse table has no column for precisions {missing}")
        idx = [self.precisions.index(p) for p in precisions]
        return MseTable(tuple(precisions), self.mse[:, idx], self.params)

    @classmethod
    def concat(cls, tables: Sequence["MseTable"]) -> "MseTable":
        if not tables:
            raise ShapeError("no tables to concatenate")
        precisions = tables[0].precisions
        if any(t.precisions != precisions for t in tables):
            raise ShapeError("tables use different precision sets")
        return cls(
            precisions,
            np.concatenate([t.mse for t in tables]),
            np.concatenate([t.params for t in tables]),
        )


def fit_layer_codebooks(
    matrix,
    precision: int,
    block_size: int = DEFAULT_BLOCK_SIZE,
    lloyd_iters: int = DEFAULT_LLOYD_ITERS,
    weight_power: int = 1,
) -> List[Codebook]:
    """Lloyd-Max fit of every row at one precision followed by threshold averaging."""
    precision = check_precision(precision)
    normalized, state = block_normalize(matrix, block_size)
    weights = state.expand()
    init = default_codebook(precision)
    samples = [channel_samples(normalized[i], weights[i], weight_power) for i in range(normalized.shape[0])]
    fitted = [lloyd_fit_channel(s, init, lloyd_iters)[0] for s in samples]
    _, books = average_thresholds(fitted, samples)
    return books


def build_mse_table(
    matrix,
    precisions: Sequence[int] = (1, 2, 4),
    block_size: int = DEFAULT_BLOCK_SIZE,
    lloyd_iters: int = DEFAULT_LLOYD_ITERS,
    weight_power: int = 1,
) -> Tuple[MseTable, Dict[int, List[Codebook]]]:
    """Fit codebooks at each precision and measure per-channel MSE.

    Returns the table and ``{precision: [float32 codebook per channel]}``; the
    errors are measured with exactly those float32 codebooks.
    """
    matrix = as_weight_matrix(matrix)
    if not precisions:
        raise ConfigError("precisions must be nonempty")
    precisions = tuple(check_precision(p) for p in precisions)
    original = matrix.astype(np.float64)
    columns = []
    books = {}
    for p in precisions:
        fitted = [b.astype(np.float32) for b in fit_layer_codebooks(matrix, p, block_size, lloyd_iters, weight_power)]
        recon = ChannelQuantizer(fitted, block_size).reconstruct(matrix).astype(np.float64)
        columns.append(((original - recon) ** 2).mean(axis=1))
        books[p] = fitted
    table = MseTable(precisions, np.stack(columns, axis=1), np.full(matrix.shape[0], matrix.shape[1]))
    return table, books
