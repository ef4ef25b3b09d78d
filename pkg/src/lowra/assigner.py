"""Channelwise precision assignment under a hard bit budget.

Channels are grouped by parameter count, the budget is split in proportion
to each group's parameter mass, and inside each group the channels are
clustered on their MSE features. A cluster-level integer program picks how
many channels of each cluster get each bit width; an assignment solve then
decides which channels those are.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional, Sequence

import numpy as np

from .codebook import check_precision
from .errors import ConfigError, InfeasibleBudgetError, ShapeError, SolverTimeout
from .ilp import OPTIMAL, ClusterQuota, assign_within_cluster, solve_cluster_ilp
from .kmeans import DEFAULT_CLUSTERS, DEFAULT_MAX_ITER, kmeans_cluster
from .lloydmax import MseTable

log = logging.getLogger(__name__)


@dataclass
class ChannelGroup:
    gid: int
    members: np.ndarray
    omega: int

    @property
    def mass(self) -> int:
        return int(self.members.size) * self.omega


@dataclass
class GroupResult:
    group: ChannelGroup
    budget: int
    n_clusters: int
    quota: ClusterQuota

    @property
    def status(self) -> str:
        return self.quota.status


@dataclass
class PrecisionAssignment:
    bits: np.ndarray
    params: np.ndarray
    total_sse: float
    bits_used: int
    budget: int
    target_bpp: float
    groups: List[GroupResult] = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return int(self.params.sum())

    @property
    def achieved_bpp(self) -> float:
        return self.bits_used / self.total_params

    @property
    def status(self) -> str:
        if all(g.status == OPTIMAL for g in self.groups):
            return OPTIMAL
        return "FEASIBLE"

    def summary(self) -> dict:
        return {
            "target_bpp": self.target_bpp,
            "achieved_bpp": self.achieved_bpp,
            "budget_bits": self.budget,
            "bits_used": self.bits_used,
            "total_sse": self.total_sse,
            "status": self.status,
            "channels_per_precision": {
                int(p): int((self.bits == p).sum()) for p in np.unique(self.bits)
            },
        }


def default_precisions(target_bpp: float) -> tuple:
    """{2, 4} at or above 2 bpp, {1, 2, 4} below."""
    return (2, 4) if target_bpp >= 2.0 else (1, 2, 4)


def bit_budget(target_bpp: float, total_params: int) -> int:
    """floor(target_bpp * total_params), using the decimal value of ``target_bpp``."""
    return int(Fraction(str(target_bpp)) * total_params // 1)


def split_and_budget(params, total_budget: int, min_precision: int = 1):
    """Group channels by parameter count and split the budget by mass.

    Each group gets ``floor(B * W_k / W_sum)`` bits; the few leftover bits go
    to the group with the largest mass.
    """
    params = np.asarray(params, dtype=np.int64)
    if params.ndim != 1 or params.size == 0 or np.any(params < 1):
        raise ShapeError("params must be a nonempty vector of positive counts")
    w_sum = int(params.sum())
    if total_budget < min_precision * w_sum:
        raise InfeasibleBudgetError(
            f"budget of {total_budget} bits cannot hold {w_sum} parameters at "
            f"{min_precision} bit(s)",
            min_bpp=float(min_precision),
        )
    groups = [
        ChannelGroup(gid, np.flatnonzero(params == omega), int(omega))
        for gid, omega in enumerate(np.unique(params))
    ]
    budgets = [total_budget * g.mass // w_sum for g in groups]
    largest = max(range(len(groups)), key=lambda k: (groups[k].mass, -k))
    budgets[largest] += total_budget - sum(budgets)
    return groups, budgets


def _assign_group(table: MseTable, group: ChannelGroup, budget: int, k: int, seed: int, max_iter: int):
    feats = table.mse[group.members]
    model = kmeans_cluster(feats, k, max_iter=max_iter, seed=seed)
    clusters = [group.members[model.members(c)] for c in range(model.k)]
    sizes = np.array([c.size for c in clusters], dtype=np.int64)
    costs = np.stack([table.mse[c].mean(axis=0) * group.omega for c in clusters])
    omegas = np.full(len(clusters), group.omega, dtype=np.int64)
    try:
        quota = solve_cluster_ilp(costs, sizes, omegas, table.precisions, budget)
    except SolverTimeout as exc:
        log.warning("group %d: %s; using the feasible incumbent", group.gid, exc)
        quota = exc.incumbent
    bits = {}
    for members, y in zip(clusters, quota.y):
        choice = assign_within_cluster(table.mse[members], y)
        for ch, kidx in zip(members.tolist(), choice.tolist()):
            bits[ch] = table.precisions[kidx]
    return bits, GroupResult(group, budget, len(clusters), quota)


def assign_precisions(
    mse_table: MseTable,
    target_bpp: float,
    allowed: Optional[Sequence[int]] = None,
    k_per_group: int = DEFAULT_CLUSTERS,
    seed: int = 0,
    max_iter: int = DEFAULT_MAX_ITER,
) -> PrecisionAssignment:
    """Pick one bit width per channel minimizing total SSE within the budget."""
    if allowed is None:
        allowed = default_precisions(target_bpp)
    allowed = tuple(sorted({check_precision(p) for p in allowed}))
    if not allowed:
        raise ConfigError("allowed precision set is empty")
    table = mse_table.restrict(allowed)
    total = int(table.params.sum())
    budget = bit_budget(target_bpp, total)
    if budget < allowed[0] * total:
        raise InfeasibleBudgetError(
            f"target {target_bpp} bpp is below the smallest allowed precision {allowed[0]}",
            min_bpp=float(allowed[0]),
        )
    groups, budgets = split_and_budget(table.params, budget, allowed[0])
    bits = np.zeros(table.channels, dtype=np.int64)
    results = []
    for group, b_k in zip(groups, budgets):
        chosen, result = _assign_group(table, group, b_k, k_per_group, seed, max_iter)
        for ch, p in chosen.items():
            bits[ch] = p
        results.append(result)
    cols = np.searchsorted(np.asarray(allowed), bits)
    sse = float((table.mse[np.arange(table.channels), cols] * table.params).sum())
    used = int((bits * table.params).sum())
    return PrecisionAssignment(bits, table.params.copy(), sse, used, budget, float(target_bpp), results)
