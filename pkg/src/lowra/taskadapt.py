"""Refine codepoints for a downstream loss while thresholds stay fixed.

The bins are frozen, so every element keeps its bin and the gradient of a
codepoint is the sum of the loss gradients of its members (straight-through
estimation of the binning step).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Protocol, Tuple

import numpy as np

from .errors import DataError, ShapeError
from .lloydmax import bin_codes


@dataclass(frozen=True)
class BinMembership:
    bins: np.ndarray  # bin index per element
    levels: int

    @classmethod
    def from_thresholds(cls, values, thresholds) -> "BinMembership":
        values = np.asarray(values, dtype=np.float64).ravel()
        thresholds = np.asarray(thresholds, dtype=np.float64)
        return cls(bin_codes(values, thresholds), thresholds.size + 1)

    def members(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.bins == j)

    def __len__(self):
        return self.bins.size


class LossOracle(Protocol):
    def __call__(self, reconstructed: np.ndarray) -> Tuple[float, np.ndarray]:
        """Return ``(loss, dloss/dreconstructed)`` for the current values."""


class WeightedMseLoss:
    """``sum(w * (q - x)**2) / sum(w)``; unit weights give the plain MSE."""

    def __init__(self, targets, weights=None):
        self.targets = np.asarray(targets, dtype=np.float64).ravel()
        if weights is None:
            weights = np.ones_like(self.targets)
        self.weights = np.asarray(weights, dtype=np.float64).ravel()
        if self.weights.shape != self.targets.shape:
            raise ShapeError("weights and targets differ in length")
        self.total = float(self.weights.sum())
        if self.total <= 0:
            raise DataError("weights must have positive sum")

    def __call__(self, reconstructed):
        err = np.asarray(reconstructed, dtype=np.float64) - self.targets
        loss = float(np.dot(self.weights, err * err) / self.total)
        return loss, 2.0 * self.weights * err / self.total

    def safe_step_size(self, membership: BinMembership) -> float:
        """Half the inverse of the largest per-codepoint curvature ``2 W_j / sum(w)``."""
        bin_weight = np.bincount(membership.bins, weights=self.weights, minlength=membership.levels)
        return self.total / (4.0 * float(bin_weight.max()))


def mse_loss(targets) -> WeightedMseLoss:
    return WeightedMseLoss(targets)


class FixedGradientOracle:
    """Wrap externally computed per-element gradients (e.g. from a file)."""

    def __init__(self, gradients, loss: float = 0.0):
        self.gradients = np.asarray(gradients, dtype=np.float64).ravel()
        self.loss = loss

    def __call__(self, reconstructed):
        if np.asarray(reconstructed).size != self.gradients.size:
            raise ShapeError("gradient file does not match the number of elements")
        return self.loss, self.gradients


def codepoint_gradient(membership: BinMembership, elem_grads) -> np.ndarray:
    """Per-bin sum of element gradients; empty bins get 0."""
    elem_grads = np.asarray(elem_grads, dtype=np.float64).ravel()
    if elem_grads.size != len(membership):
        raise ShapeError(f"{elem_grads.size} gradients for {len(membership)} elements")
    return np.bincount(membership.bins, weights=elem_grads, minlength=membership.levels)


@dataclass
class RefineResult:
    mappings: np.ndarray
    losses: List[float] = field(default_factory=list)
    clamped: bool = False


def refine_codepoints(
    values,
    thresholds,
    init_mappings,
    oracle: Callable,
    step_size: float,
    steps: int,
    membership: Optional[BinMembership] = None,
) -> RefineResult:
    """Plain gradient descent on the codepoints of a fixed partition.

    ``losses[0]`` is the loss at ``init_mappings`` and ``losses[t]`` after
    step ``t``. If the final codepoints leave their bins they are clamped
    back in, with a warning. ``membership`` may be passed to reuse stored
    codes instead of re-binning ``values``.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if step_size <= 0:
        raise ValueError("step_size must be positive")
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if membership is None:
        membership = BinMembership.from_thresholds(values, thresholds)
    mappings = np.array(init_mappings, dtype=np.float64)
    if mappings.size != membership.levels:
        raise ShapeError(f"{mappings.size} mappings for {membership.levels} bins")
    result = RefineResult(mappings)
    for _ in range(steps):
        loss, grads = oracle(mappings[membership.bins])
        if not np.isfinite(loss) or not np.all(np.isfinite(grads)):
            raise DataError(f"non-finite loss or gradient after {len(result.losses)} steps: {result.losses}")
        result.losses.append(float(loss))
        mappings = mappings - step_size * codepoint_gradient(membership, grads)
    final_loss, _ = oracle(mappings[membership.bins])
    result.losses.append(float(final_loss))
    lower = np.concatenate(([-np.inf], thresholds))
    upper = np.concatenate((thresholds, [np.inf]))
    clipped = np.clip(mappings, lower, upper)
    if not np.array_equal(clipped, mappings):
        warnings.warn("refined codepoints crossed their fixed thresholds; clamped into bins")
        result.clamped = True
    result.mappings = clipped
    return result
