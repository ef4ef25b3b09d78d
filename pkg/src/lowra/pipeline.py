"""End-to-end pipeline: fit codebooks, assign precisions, quantize, init adapters."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .assigner import PrecisionAssignment, assign_precisions, default_precisions
from .codebook import Codebook
from .errors import InfeasibleBudgetError, LowraError, StageError
from .ilp import OPTIMAL
from .kmeans import DEFAULT_CLUSTERS
from .lloydmax import DEFAULT_LLOYD_ITERS, MseTable, build_mse_table
from .lowrank import DEFAULT_LOFTQ_STEPS, loftq_init, pissa_init
from .memory import estimate_memory
from .quantizer import ChannelQuantizer, QuantizedLayer
from .tensor import DEFAULT_BLOCK_SIZE, as_weight_matrix

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    target_bpp: float
    precisions: Optional[Tuple[int, ...]] = None
    block_size: int = DEFAULT_BLOCK_SIZE
    lloyd_iters: int = DEFAULT_LLOYD_ITERS
    clusters_per_group: int = DEFAULT_CLUSTERS
    rank: int = 0
    loftq_steps: int = DEFAULT_LOFTQ_STEPS
    init_method: str = "loftq"
    seed: int = 0
    weight_power: int = 1

    def allowed(self) -> Tuple[int, ...]:
        if self.precisions:
            return tuple(sorted(set(self.precisions)))
        return default_precisions(self.target_bpp)


@dataclass
class PipelineResult:
    layers: List[QuantizedLayer]
    assignment: PrecisionAssignment
    report: dict = field(default_factory=dict)


def _stage(name):
    def wrap(fn):
        def run(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except InfeasibleBudgetError:
                raise
            except LowraError as exc:
                raise StageError(name, exc) from exc
        return run
    return wrap


@_stage("fit-maps")
def fit_maps(named, config: PipelineConfig):
    tables, books = [], []
    for name, w in named:
        table, layer_books = build_mse_table(
            w, config.allowed(), config.block_size, config.lloyd_iters, config.weight_power
        )
        log.info("fitted codebooks for %s %s", name, w.shape)
        tables.append(table)
        books.append(layer_books)
    return tables, books


@_stage("assign")
def assign(tables: Sequence[MseTable], config: PipelineConfig) -> PrecisionAssignment:
    return assign_precisions(
        MseTable.concat(tables), config.target_bpp, config.allowed(),
        config.clusters_per_group, config.seed,
    )


def select_codebooks(layer_books: Dict[int, List[Codebook]], bits) -> List[Codebook]:
    return [layer_books[int(b)][i] for i, b in enumerate(bits)]


@_stage("quantize")
def quantize_layers(named, books, assignment: PrecisionAssignment, config: PipelineConfig):
    out, residuals = [], {}
    start = 0
    for (name, w), layer_books in zip(named, books):
        bits = assignment.bits[start : start + w.shape[0]]
        start += w.shape[0]
        quantizer = ChannelQuantizer(select_codebooks(layer_books, bits), config.block_size)
        if config.rank > 0:
            init = loftq_init if config.init_method == "loftq" else pissa_init
            kwargs = {"steps": config.loftq_steps} if config.init_method == "loftq" else {}
            layer, _, report = init(w, quantizer, config.rank, name=name, **kwargs)
            residuals[name] = report.residuals
        else:
            layer = quantizer.quantize(w, name)
        out.append(layer)
    return out, residuals


def run_pipeline(named: Sequence[Tuple[str, np.ndarray]], config: PipelineConfig) -> PipelineResult:
    """Run every stage on ``[(layer_name, matrix), ...]``."""
    named = [(name, as_weight_matrix(w, name)) for name, w in named]
    tables, books = fit_maps(named, config)
    assignment = assign(tables, config)
    layers, residuals = quantize_layers(named, books, assignment, config)

    per_layer = []
    for (name, w), layer in zip(named, layers):
        recon = layer.dequantize().astype(np.float64)
        if layer.factors is not None:
            recon = recon + layer.factors.product()
        per_layer.append({
            "name": name,
            "shape": list(w.shape),
            "sse": float(((w.astype(np.float64) - recon) ** 2).sum()),
            "bpp": layer.code_bits / (w.shape[0] * w.shape[1]),
            "residuals": residuals.get(name, []),
        })
    dims = [(name, w.shape[0], w.shape[1]) for name, w in named]
    memory = estimate_memory(
        dims, [l.precisions for l in layers], rank=config.rank, block_size=config.block_size
    )
    report = {
        "config": asdict(config),
        "assignment": assignment.summary(),
        "solver_status": [g.status for g in assignment.groups],
        "layers": per_layer,
        "memory": memory.to_dict()["totals"] | {"effective_bpp": memory.effective_bpp},
    }
    return PipelineResult(layers, assignment, report)


def format_report(report: dict) -> str:
    a = report["assignment"]
    status = "OPTIMAL" if all(s == OPTIMAL for s in report["solver_status"]) else "FEASIBLE"
    lines = [
        f"target bpp:   {a['target_bpp']}",
        f"achieved bpp: {a['achieved_bpp']:.6f} ({a['bits_used']} / {a['budget_bits']} budget bits)",
        f"solver:       {status} ({len(report['solver_status'])} group(s))",
        f"assigned SSE: {a['total_sse']:.6g}",
        "precision counts: " + ", ".join(f"{p}-bit x{n}" for p, n in sorted(a["channels_per_precision"].items())),
        "layers:",
    ]
    for l in report["layers"]:
        res = f" residuals {[round(r, 6) for r in l['residuals']]}" if l["residuals"] else ""
        lines.append(f"  {l['name']:<24} {l['shape'][0]}x{l['shape'][1]}  bpp {l['bpp']:.4f}  sse {l['sse']:.6g}{res}")
    m = report["memory"]
    lines.append(
        f"memory: packed {m['packed']} B, absmax {m['absmax']} B, codebooks {m['codebooks']} B, "
        f"adapters {m['adapters']} B, total {m['total']} B, effective bpp {m['effective_bpp']:.4f}"
    )
    return "\n".join(lines)
