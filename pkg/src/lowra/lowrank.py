"""Truncated SVD and low-rank initializers that absorb quantization error.

The SVD is a one-sided (Hestenes) Jacobi iteration. Column pairs are
rotated in round-robin order, with each round's disjoint pairs vectorized
together, until every pair is orthogonal to machine precision. Large
matrices first shrink to a small block by subspace iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import ConfigError
from .quantizer import ChannelQuantizer
from .tensor import as_weight_matrix

DEFAULT_LOFTQ_STEPS = 5


@dataclass
class LowRankFactors:
    """``L1 @ L2`` approximates a matrix; all singular-value scale sits in L1."""

    L1: np.ndarray
    L2: np.ndarray

    @property
    def rank(self) -> int:
        return self.L1.shape[1]

    def product(self) -> np.ndarray:
        return np.asarray(self.L1, dtype=np.float64) @ np.asarray(self.L2, dtype=np.float64)

    def astype(self, dtype) -> "LowRankFactors":
        return LowRankFactors(np.asarray(self.L1, dtype=dtype), np.asarray(self.L2, dtype=dtype))


@dataclass
class InitReport:
    method: str
    residuals: List[float] = field(default_factory=list)
    steps: int = 0
    warnings: List[str] = field(default_factory=list)

    @property
    def final_residual(self) -> float:
        return self.residuals[-1]


def _round_robin(n: int):
    """Yield rounds of disjoint index pairs covering every pair once."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    m = len(players)
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(a, b) if a < b else (b, a) for a, b in pairs if a >= 0 and b >= 0]
        yield np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])
        players = [players[0], players[-1]] + players[1:-1]


def jacobi_svd(a, tol: float = 1e-15, max_sweeps: int = 60):
    """Thin SVD ``a = U diag(s) Vt`` by one-sided Jacobi rotations.

    Returns ``(AV, s, V)`` where ``AV = U diag(s)`` has orthogonal columns,
    all sorted by descending singular value.
    """
    a = np.asarray(a, dtype=np.float64)
    transposed = a.shape[1] > a.shape[0]
    # Work on rows of x (= columns of the tall matrix) so pair slices are contiguous.
    x = np.array(a if transposed else a.T, dtype=np.float64, order="C")
    n = x.shape[0]
    v = np.eye(n)
    rounds = [r for r in _round_robin(n) if r[0].size]
    for _ in range(max_sweeps):
        rotated = False
        for i, j in rounds:
            xi, xj = x[i], x[j]
            alpha = np.einsum("km,km->k", xi, xi)
            beta = np.einsum("km,km->k", xj, xj)
            gamma = np.einsum("km,km->k", xi, xj)
            active = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            if not active.any():
                continue
            rotated = True
            if not active.all():
                i, j = i[active], j[active]
                xi, xj = xi[active], xj[active]
                alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = (1.0 / np.sqrt(1.0 + t * t))[:, None]
            s = c * t[:, None]
            x[i] = c * xi - s * xj
            x[j] = s * xi + c * xj
            vi, vj = v[i], v[j]
            v[i] = c * vi - s * vj
            v[j] = s * vi + c * vj
        if not rotated:
            break
    sing = np.sqrt(np.einsum("km,km->k", x, x))
    order = np.argsort(-sing, kind="stable")
    x, sing, v = x[order], sing[order], v[order]
    if transposed:
        # x holds rows of A^T V' = U' S, so A = V' S U'^T and A U' = V' S.
        u = np.where(sing[:, None] > 0, x / np.where(sing > 0, sing, 1.0)[:, None], 0.0)
        return v.T * sing, sing, u.T
    return x.T.copy(), sing, v.T.copy()


def _orthonormal(y):
    """Orthonormal basis of the column space of ``y`` plus its singular values."""
    us, s, _ = jacobi_svd(y)
    keep = s > s[0] * 1e-14 if s.size and s[0] > 0 else np.zeros(s.shape, bool)
    return us[:, keep] / s[keep], s


JACOBI_LIMIT = 256
SUBSPACE_TOL = 1e-13
SUBSPACE_MAX_ITERS = 500


def _subspace_svd(a, rank: int, seed: int = 0):
    """Top-``rank`` SVD by block subspace iteration with Jacobi on small blocks."""
    limit = min(a.shape)
    k = min(limit, rank + max(10, rank))
    rng = np.random.default_rng(seed)
    q, _ = _orthonormal(a @ rng.standard_normal((a.shape[1], k)))
    prev = None
    for _ in range(SUBSPACE_MAX_ITERS):
        z, _ = _orthonormal(a.T @ q)
        q, s = _orthonormal(a @ z)
        top = s[:rank]
        if prev is not None and np.all(np.abs(top - prev) <= SUBSPACE_TOL * max(top[0], 1e-300)):
            break
        prev = top
    bs, _, vb = jacobi_svd(q.T @ a)  # q^T a = Ub S Vb^T, so a ~ (q Ub S) Vb^T
    return (q @ bs)[:, :rank], vb[:, :rank].T


def truncated_svd(matrix, rank: int, report: Optional[InitReport] = None) -> LowRankFactors:
    """Best rank-``rank`` approximation in Frobenius norm as ``L1 @ L2``.

    ``L1 = U_r diag(s_r)`` and ``L2 = V_r^T``. A rank above ``min(shape)`` is
    clamped, with a note added to ``report`` when one is given. Large
    matrices with a comparatively small rank use subspace iteration.
    """
    if rank < 1:
        raise ConfigError(f"rank must be >= 1, got {rank}")
    a = np.asarray(matrix, dtype=np.float64)
    limit = min(a.shape)
    if rank > limit:
        if report is not None:
            report.warnings.append(f"rank {rank} clamped to {limit}")
        rank = limit
    if limit > JACOBI_LIMIT and 4 * rank <= limit:
        l1, l2 = _subspace_svd(a, rank)
        return LowRankFactors(np.ascontiguousarray(l1), np.ascontiguousarray(l2))
    us, _, v = jacobi_svd(a)
    return LowRankFactors(us[:, :rank].copy(), v[:, :rank].T.copy())


def _residual(w, q_hat, factors: Optional[LowRankFactors]) -> float:
    r = w - q_hat
    if factors is not None:
        r = r - factors.product()
    return float(np.linalg.norm(r))


def loftq_init(
    matrix, quantizer: ChannelQuantizer, rank: int, steps: int = DEFAULT_LOFTQ_STEPS, name: str = ""
):
    """Alternate quantizing ``W - L1 L2`` with a rank-r SVD of the error.

    Starts from zero factors and returns the last quantized layer, the last
    factors and the residual trajectory ``||W - Q_t - L1 L2||_F``. The
    quantizer's codebooks and precisions are reused at every step.
    """
    if steps < 1:
        raise ConfigError("LoftQ needs at least one step")
    w = as_weight_matrix(matrix).astype(np.float64)
    report = InitReport("loftq")
    factors = None
    layer = None
    for _ in range(steps):
        target = w if factors is None else w - factors.product()
        layer = quantizer.quantize(target, name)
        q_hat = layer.dequantize().astype(np.float64)
        factors = truncated_svd(w - q_hat, rank, report)
        report.residuals.append(_residual(w, q_hat, factors))
        report.steps += 1
    layer.factors = factors.astype(np.float32)
    return layer, factors, report


def pissa_init(matrix, quantizer: ChannelQuantizer, rank: int, name: str = ""):
    """SVD of the unquantized weight first, then quantize the residual once."""
    w = as_weight_matrix(matrix).astype(np.float64)
    report = InitReport("pissa")
    factors = truncated_svd(w, rank, report)
    layer = quantizer.quantize(w - factors.product(), name)
    q_hat = layer.dequantize().astype(np.float64)
    report.residuals.append(_residual(w, q_hat, factors))
    report.steps = 1
    layer.factors = factors.astype(np.float32)
    return layer, factors, report


def quantize_only_residual(matrix, quantizer: ChannelQuantizer) -> float:
    """``||W - dequant(quant(W))||_F`` with zero adapters."""
    w = as_weight_matrix(matrix).astype(np.float64)
    return _residual(w, quantizer.reconstruct(w).astype(np.float64), None)
