"""Memory footprint estimates for quantized linear layers plus adapters.

Only linear layers are counted. Adapters are 16-bit; in finetune mode each
adapter also carries a 16-bit gradient, two 32-bit optimizer moments, and
a 16-bit input activation of ``batch x seq_len x cols``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .codebook import packed_length
from .errors import ConfigError, ShapeError
from .tensor import DEFAULT_BLOCK_SIZE, blocks_per_row

ADAPTER_BYTES = 2
GRAD_BYTES = 2
MOMENT_BYTES = 4
ACTIVATION_BYTES = 2
DEFAULT_RANK = 64
DEFAULT_SEQ_LEN = 512
DEFAULT_BATCH = 1

LayerDims = Tuple[str, int, int]  # (name, rows, cols)


def llama2_7b_linear_dims(n_layers: int = 32) -> List[LayerDims]:
    """Linear projections of LLaMA-2-7B (hidden 4096, MLP 11008)."""
    hidden, mlp = 4096, 11008
    dims = []
    for i in range(n_layers):
        for proj in ("q_proj", "k_proj", "v_proj", "o_proj"):
            dims.append((f"layers.{i}.self_attn.{proj}", hidden, hidden))
        dims.append((f"layers.{i}.mlp.gate_proj", mlp, hidden))
        dims.append((f"layers.{i}.mlp.up_proj", mlp, hidden))
        dims.append((f"layers.{i}.mlp.down_proj", hidden, mlp))
    return dims


def llama2_13b_linear_dims() -> List[LayerDims]:
    hidden, mlp = 5120, 13824
    dims = []
    for i in range(40):
        for proj in ("q_proj", "k_proj", "v_proj", "o_proj"):
            dims.append((f"layers.{i}.self_attn.{proj}", hidden, hidden))
        dims.append((f"layers.{i}.mlp.gate_proj", mlp, hidden))
        dims.append((f"layers.{i}.mlp.up_proj", mlp, hidden))
        dims.append((f"layers.{i}.mlp.down_proj", hidden, mlp))
    return dims


MODEL_DIMS = {"llama2-7b": llama2_7b_linear_dims, "llama2-13b": llama2_13b_linear_dims}


@dataclass
class LayerMemory:
    name: str
    params: int
    packed: int
    absmax: int
    codebooks: int
    adapters: int
    adapter_grads: int = 0
    optimizer: int = 0
    activations: int = 0

    @property
    def total(self) -> int:
        return (
            self.packed + self.absmax + self.codebooks + self.adapters
            + self.adapter_grads + self.optimizer + self.activations
        )


@dataclass
class MemoryReport:
    mode: str
    rank: int
    layers: List[LayerMemory] = field(default_factory=list)

    def _sum(self, attr: str) -> int:
        return sum(getattr(l, attr) for l in self.layers)

    @property
    def totals(self) -> Dict[str, int]:
        keys = ("params", "packed", "absmax", "codebooks", "adapters", "adapter_grads", "optimizer", "activations")
        out = {k: self._sum(k) for k in keys}
        out["total"] = sum(l.total for l in self.layers)
        return out

    @property
    def base_bytes(self) -> int:
        t = self.totals
        return t["packed"] + t["absmax"] + t["codebooks"]

    @property
    def effective_bpp(self) -> float:
        """Bits per base parameter including absmax and codebook overhead."""
        return 8.0 * self.base_bytes / self.totals["params"]

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "rank": self.rank,
            "totals": self.totals,
            "effective_bpp": self.effective_bpp,
            "layers": [asdict(l) | {"total": l.total} for l in self.layers],
        }

    def format(self) -> str:
        t = self.totals
        mib = 1024 * 1024
        lines = [f"memory estimate ({self.mode}, rank {self.rank}, {len(self.layers)} linear layers)"]
        for key in ("packed", "absmax", "codebooks", "adapters", "adapter_grads", "optimizer", "activations", "total"):
            if self.mode == "inference" and key in ("adapter_grads", "optimizer", "activations"):
                continue
            lines.append(f"  {key:<14}{t[key]:>16,d} bytes  {t[key] / mib:>12.2f} MiB")
        lines.append(f"  effective bpp (base weights incl. overhead): {self.effective_bpp:.4f}")
        return "\n".join(lines)


def estimate_memory(
    dims: Sequence[LayerDims],
    bits: Sequence,
    rank: int = DEFAULT_RANK,
    mode: str = "inference",
    block_size: int = DEFAULT_BLOCK_SIZE,
    seq_len: int = DEFAULT_SEQ_LEN,
    batch: int = DEFAULT_BATCH,
) -> MemoryReport:
    """Estimate bytes per layer.

    ``bits`` is either one entry per layer holding a per-channel precision
    array, or one int per layer for uniform precision.
    """
    if mode not in ("inference", "finetune"):
        raise ConfigError(f"mode must be 'inference' or 'finetune', got {mode!r}")
    if len(bits) != len(dims):
        raise ShapeError(f"{len(bits)} precision entries for {len(dims)} layers")
    report = MemoryReport(mode, rank)
    for (name, rows, cols), b in zip(dims, bits):
        b = np.asarray(b, dtype=np.int64)
        if b.ndim == 0:
            b = np.full(rows, int(b))
        if b.shape != (rows,):
            raise ShapeError(f"layer {name}: {b.size} precisions for {rows} channels")
        levels = np.left_shift(1, b)
        packed = sum(packed_length(cols, int(p)) * int(n) for p, n in zip(*np.unique(b, return_counts=True)))
        adapters = rank * (rows + cols) * ADAPTER_BYTES
        layer = LayerMemory(
            name=name,
            params=rows * cols,
            packed=int(packed),
            absmax=rows * blocks_per_row(cols, block_size) * 4,
            codebooks=int((2 * levels - 1).sum()) * 4,
            adapters=adapters,
        )
        if mode == "finetune":
            layer.adapter_grads = rank * (rows + cols) * GRAD_BYTES
            layer.optimizer = rank * (rows + cols) * 2 * MOMENT_BYTES
            layer.activations = batch * seq_len * cols * ACTIVATION_BYTES
        report.layers.append(layer)
    return report


def uniform_bits(dims: Sequence[LayerDims], precision: int) -> List[int]:
    return [precision] * len(dims)


def split_bits(dims: Sequence[LayerDims], flat_bits) -> List[np.ndarray]:
    """Cut a model-wide per-channel precision vector into per-layer pieces."""
    flat_bits = np.asarray(flat_bits)
    out, start = [], 0
    for _, rows, _ in dims:
        out.append(flat_bits[start : start + rows])
        start += rows
    if start != flat_bits.size:
        raise ShapeError(f"{flat_bits.size} channel precisions for {start} channels")
    return out
