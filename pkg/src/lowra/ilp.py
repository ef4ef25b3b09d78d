"""Exact solvers for the two integer programs of the precision assigner.

Cluster level: choose how many channels ``y[c, p]`` of each cluster get each
precision, minimizing ``sum(cost[c, p] * y[c, p])`` under a total bit budget.
It is solved exactly by dynamic programming over the budget, measured in
units of the gcd of all ``beta(p) * omega_c`` bit costs.

Intra cluster: place concrete channels on the quota. This is a
transportation problem and is solved as a rectangular assignment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InfeasibleBudgetError, ShapeError, SolverTimeout

OPTIMAL = "OPTIMAL"
FEASIBLE = "FEASIBLE"
INFEASIBLE = "INFEASIBLE"

DEFAULT_MAX_WORK = 4_000_000_000  # DP cell updates before giving up


@dataclass
class ClusterQuota:
    y: np.ndarray  # (clusters, precisions) channel counts
    precisions: tuple
    objective: float
    bits: int
    status: str = OPTIMAL

    @property
    def proven_optimal(self) -> bool:
        return self.status == OPTIMAL


def _compositions(total: int, parts: int) -> np.ndarray:
    """All nonnegative integer vectors of length ``parts`` summing to ``total``."""
    if parts == 1:
        return np.array([[total]], dtype=np.int64)
    if parts == 2:
        first = np.arange(total + 1, dtype=np.int64)
        return np.stack([first, total - first], axis=1)
    rows = []
    for first in range(total + 1):
        rest = _compositions(total - first, parts - 1)
        rows.append(np.hstack([np.full((rest.shape[0], 1), first, dtype=np.int64), rest]))
    return np.vstack(rows)


def _quota_bits(y, omegas, precisions) -> int:
    beta = np.asarray(precisions, dtype=np.int64)
    return int((y.astype(np.int64) * beta[None, :] * np.asarray(omegas, dtype=np.int64)[:, None]).sum())


def _quota_cost(y, costs) -> float:
    return float(sum(float(costs[c, p]) * int(y[c, p]) for c in range(y.shape[0]) for p in range(y.shape[1])))


def _greedy_quota(costs, sizes, omegas, beta, budget) -> np.ndarray:
    """Feasible quota: start at the lowest precision, then repeatedly move
    channels along the move with the best cost drop per extra bit."""
    k_min = int(beta.argmin())
    y = np.zeros(costs.shape, dtype=np.int64)
    y[:, k_min] = sizes
    left = budget - int((sizes * omegas).sum()) * int(beta[k_min])
    extra = (beta[None, None, :] - beta[None, :, None]) * omegas[:, None, None]  # (C, from, to)
    gain = costs[:, :, None] - costs[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        rate = np.where(extra > 0, gain / np.where(extra > 0, extra, 1), -np.inf)
    while True:
        ok = (rate > 0) & (extra <= left) & (y[:, :, None] > 0)
        if not ok.any():
            return y
        c, a, b = np.unravel_index(np.argmax(np.where(ok, rate, -np.inf)), rate.shape)
        n = min(int(y[c, a]), left // int(extra[c, a, b]))
        y[c, a] -= n
        y[c, b] += n
        left -= n * int(extra[c, a, b])


def solve_cluster_ilp(
    costs,
    sizes: Sequence[int],
    omegas: Sequence[int],
    precisions: Sequence[int],
    budget: int,
    max_work: int = DEFAULT_MAX_WORK,
) -> ClusterQuota:
    """Minimize total cluster cost subject to the bit budget.

    ``costs[c, k]`` is the per-channel cost of cluster ``c`` at
    ``precisions[k]``. Ties in cost are broken toward fewer bits.
    """
    costs = np.asarray(costs, dtype=np.float64)
    sizes = np.asarray(sizes, dtype=np.int64)
    omegas = np.asarray(omegas, dtype=np.int64)
    precisions = tuple(int(p) for p in precisions)
    if costs.shape != (sizes.size, len(precisions)) or omegas.shape != sizes.shape:
        raise ShapeError(
            f"costs {costs.shape}, sizes {sizes.shape}, omegas {omegas.shape} and "
            f"{len(precisions)} precisions are inconsistent"
        )
    n_clusters, n_prec = costs.shape
    beta = np.asarray(precisions, dtype=np.int64)
    k_min = int(beta.argmin())
    total_params = int((sizes * omegas).sum())
    min_bits = int(beta[k_min]) * total_params
    if budget < min_bits:
        raise InfeasibleBudgetError(
            f"budget {budget} bits is below the {min_bits} bits needed at {beta[k_min]}-bit",
            min_bpp=float(beta[k_min]),
        )
    if n_clusters == 0:
        return ClusterQuota(np.zeros((0, n_prec), dtype=np.int64), precisions, 0.0, 0)

    unit_costs = [int(b) * int(w) for b in beta for w in omegas]
    g = reduce(math.gcd, unit_costs)
    extra_per = (beta[None, :] - beta[k_min]) * omegas[:, None] // g  # (C, P)
    max_extra = int((sizes * extra_per.max(axis=1)).sum())
    slack = min((budget - min_bits) // g, max_extra)

    # Each cluster touches one DP row per distinct extra count; enumerating
    # its compositions costs C(S + P - 1, P - 1) as well.
    reach = np.minimum(sizes * extra_per.max(axis=1) + 1, slack + 1)
    work = int(reach.sum()) * (slack + 1) + sum(math.comb(int(s) + n_prec - 1, n_prec - 1) for s in sizes)
    if work > max_work:
        incumbent = _greedy_quota(costs, sizes, omegas, beta, budget)
        raise SolverTimeout(
            f"exact budget DP needs about {work:.3g} updates (limit {max_work:.3g})",
            incumbent=ClusterQuota(
                incumbent, precisions, _quota_cost(incumbent, costs),
                _quota_bits(incumbent, omegas, precisions), FEASIBLE,
            ),
        )

    dp = np.full(slack + 1, np.inf)
    dp[0] = 0.0
    choices = []  # per cluster: (extra values, option index per state)
    options = []
    for c in range(n_clusters):
        comp = _compositions(int(sizes[c]), n_prec)
        extra = comp @ extra_per[c]
        cost = comp.astype(np.float64) @ costs[c]
        # Cheapest composition for every reachable extra-unit count.
        order = np.lexsort((np.arange(extra.size), cost, extra))
        uniq, first = np.unique(extra[order], return_index=True)
        best = order[first]
        new = np.full(slack + 1, np.inf)
        pick = np.full(slack + 1, -1, dtype=np.int64)
        for e, idx in zip(uniq.tolist(), best.tolist()):
            if e > slack:
                break
            cand = dp[: slack + 1 - e] + cost[idx]
            target = new[e:]
            better = cand < target
            target[better] = cand[better]
            pick[e:][better] = idx
        dp = new
        choices.append((extra, pick))
        options.append(comp)

    finite = np.isfinite(dp)
    u = int(np.flatnonzero(dp == dp[finite].min())[0])
    y = np.zeros((n_clusters, n_prec), dtype=np.int64)
    for c in range(n_clusters - 1, -1, -1):
        extra, pick = choices[c]
        idx = int(pick[u])
        y[c] = options[c][idx]
        u -= int(extra[idx])
    return ClusterQuota(y, precisions, _quota_cost(y, costs), _quota_bits(y, omegas, precisions), OPTIMAL)


def assign_within_cluster(mse_rows, quota) -> np.ndarray:
    """Place each channel on one precision so that counts match ``quota``.

    ``mse_rows[i, k]`` is the error of channel ``i`` at precision index ``k``.
    Returns the chosen precision index per channel; the placement minimizes
    the summed error exactly.
    """
    mse_rows = np.asarray(mse_rows, dtype=np.float64)
    quota = np.asarray(quota, dtype=np.int64)
    if mse_rows.ndim != 2 or quota.shape != (mse_rows.shape[1],):
        raise ShapeError(f"mse rows {mse_rows.shape} and quota {quota.shape} are inconsistent")
    if np.any(quota < 0) or int(quota.sum()) != mse_rows.shape[0]:
        raise ShapeError(
            f"quota {quota.tolist()} does not sum to cluster size {mse_rows.shape[0]}"
        )
    slots = np.repeat(np.arange(quota.size), quota)
    rows, cols = linear_sum_assignment(mse_rows[:, slots])
    out = np.empty(mse_rows.shape[0], dtype=np.int64)
    out[rows] = slots[cols]
    return out
