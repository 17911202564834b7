"""Tucker compression of 3D (video) CNNs.

Decomposes convolution kernels and linear weights with partial Tucker
decomposition at VBMF-selected ranks, rewrites each layer as a sequence of
cheaper convolutions, and quantifies the savings with an exact
parameter/FLOP cost model and a wall-clock benchmark harness.
"""

from .bench import TimingResult, bench_forward
from .compress import (
    CompressedLayerGroup,
    CompressionPlan,
    CompressionRecord,
    PlanEntry,
    compress_network,
    default_plan,
    lift_linear_to_conv,
    rewrite_tucker1,
    rewrite_tucker2,
)
from .cost import (
    CostReport,
    LayerCost,
    cost_conv_original,
    cost_conv_tucker2,
    cost_tucker1,
    ratio_bound,
    report,
)
from .modelio import load_model, save_model
from .network import (
    ConvKernel,
    LayerSpec,
    NetworkSpec,
    conv3d_forward,
    count_multiplies,
    forward,
    infer_shapes,
    pointwise_forward,
)
from .reference import reference_network, reference_plan, small_reference_network
from .tensor import SvdResult, fold, frobenius_norm, mode_multiply, svd, unfold
from .tucker import TuckerFactors, partial_tucker, reconstruct, tucker1_kernel, tucker2_kernel
from .vbmf import RankEstimate, estimate_rank, estimate_ranks_for_conv

__version__ = "0.1.0"

__all__ = [
    "TimingResult",
    "bench_forward",
    "CompressedLayerGroup",
    "CompressionPlan",
    "CompressionRecord",
    "PlanEntry",
    "compress_network",
    "default_plan",
    "lift_linear_to_conv",
    "rewrite_tucker1",
    "rewrite_tucker2",
    "CostReport",
    "LayerCost",
    "cost_conv_original",
    "cost_conv_tucker2",
    "cost_tucker1",
    "ratio_bound",
    "report",
    "load_model",
    "save_model",
    "ConvKernel",
    "LayerSpec",
    "NetworkSpec",
    "conv3d_forward",
    "count_multiplies",
    "forward",
    "infer_shapes",
    "pointwise_forward",
    "reference_network",
    "reference_plan",
    "small_reference_network",
    "SvdResult",
    "fold",
    "frobenius_norm",
    "mode_multiply",
    "svd",
    "unfold",
    "TuckerFactors",
    "partial_tucker",
    "reconstruct",
    "tucker1_kernel",
    "tucker2_kernel",
    "RankEstimate",
    "estimate_rank",
    "estimate_ranks_for_conv",
]
