"""Mixed-precision quantization of LoRA base weights.

Per-channel weighted Lloyd-Max codebooks, budgeted precision assignment,
bit-exact 1/2/4-bit packing and low-rank adapter initialization.
"""

from .assigner import PrecisionAssignment, assign_precisions, split_and_budget
from .codebook import (
    Codebook,
    CodeVector,
    PackedCodes,
    default_codebook,
    dequantize_channel,
    pack_codes,
    quantize_channel,
    unpack_codes,
)
from .errors import (
    ConfigError,
    DataError,
    FormatError,
    InfeasibleBudgetError,
    LowraError,
    ShapeError,
    SolverTimeout,
    StageError,
)
from .fileformat import read_container, read_tensor, write_container, write_tensor
from .ilp import ClusterQuota, assign_within_cluster, solve_cluster_ilp
from .kmeans import ClusterModel, kmeans_cluster
from .lloydmax import (
    FitTrace,
    MseTable,
    WeightedSamples,
    average_thresholds,
    build_mse_table,
    lloyd_fit_channel,
)
from .lowrank import InitReport, LowRankFactors, loftq_init, pissa_init, truncated_svd
from .memory import MemoryReport, estimate_memory
from .pipeline import PipelineConfig, run_pipeline
from .quantizer import ChannelQuantizer, QuantizedLayer
from .taskadapt import BinMembership, codepoint_gradient, refine_codepoints
from .tensor import AbsmaxState, StdReport, block_denormalize, block_normalize, channel_std_stats

__version__ = "0.1.0"

__all__ = [
    "AbsmaxState",
    "assign_precisions",
    "assign_within_cluster",
    "average_thresholds",
    "BinMembership",
    "block_denormalize",
    "block_normalize",
    "build_mse_table",
    "channel_std_stats",
    "ChannelQuantizer",
    "ClusterModel",
    "ClusterQuota",
    "Codebook",
    "codepoint_gradient",
    "CodeVector",
    "ConfigError",
    "DataError",
    "default_codebook",
    "dequantize_channel",
    "estimate_memory",
    "FitTrace",
    "FormatError",
    "InfeasibleBudgetError",
    "InitReport",
    "kmeans_cluster",
    "lloyd_fit_channel",
    "loftq_init",
    "LowraError",
    "LowRankFactors",
    "MemoryReport",
    "MseTable",
    "pack_codes",
    "PackedCodes",
    "PipelineConfig",
    "pissa_init",
    "PrecisionAssignment",
    "quantize_channel",
    "QuantizedLayer",
    "read_container",
    "read_tensor",
    "refine_codepoints",
    "run_pipeline",
    "ShapeError",
    "solve_cluster_ilp",
    "SolverTimeout",
    "split_and_budget",
    "StageError",
    "StdReport",
    "truncated_svd",
    "unpack_codes",
    "WeightedSamples",
    "write_container",
    "write_tensor",
]
