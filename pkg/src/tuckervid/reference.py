"""Reference network configurations.

``reference_network`` is a best-effort reconstruction of a small video
classifier for 4-channel 28x120x160 clips: two 3D convolutions with ReLU
and max pooling, then three linear layers.  Kernel extents, channel counts
and the flattened feature size (4x9x9x16 = 5184) are fixed; the exact pool
windows are NOT ground truth, they are merely chosen so the shapes compose
(any choice reproducing the same feature sizes gives identical parameter
counts).  Weights are random, so the network is useful for cost
accounting, equivalence checks and benchmarking, not for classification.

``small_reference_network`` keeps the same layer sequence at a fraction of
the input size, for fast tests and demos.
"""

from __future__ import annotations

import numpy as np

from .compress import CompressionPlan, PlanEntry, default_plan
from .network import ConvKernel, LayerSpec, NetworkSpec

__all__ = [
    "reference_network",
    "small_reference_network",
    "reference_plan",
    "reference_ranks",
    "write_ranks_file",
]

# Stock rank choices shipped with the reference architecture; the final
# classifier stays uncompressed.
REFERENCE_RANKS: dict[str, tuple[int, ...]] = {
    "C1": (2, 2),
    "C2": (2, 3),
    "L1": (4, 7),
    "L2": (1,),
}


def _conv(rng, name, taps, s, t, stride=(1, 1, 1), padding=(0, 0, 0)) -> LayerSpec:
    fan_in = taps[0] * taps[1] * taps[2] * s
    weights = rng.standard_normal(taps + (s, t)) / np.sqrt(fan_in)
    bias = 0.1 * rng.standard_normal(t)
    return LayerSpec.conv3d(name, ConvKernel(weights, stride=stride, padding=padding, bias=bias))


def _linear(rng, name, n_in, n_out) -> LayerSpec:
    weight = rng.standard_normal((n_out, n_in)) / np.sqrt(n_in)
    bias = 0.1 * rng.standard_normal(n_out)
    return LayerSpec.linear(name, weight, bias=bias)


def reference_network(seed: int = 0) -> NetworkSpec:
    """The full-size reconstructed architecture with seeded random weights."""
    rng = np.random.default_rng(seed)
    layers = [
        _conv(rng, "C1", (5, 11, 11), 4, 6, stride=(1, 1, 1), padding=(2, 5, 5)),
        LayerSpec.relu("relu1"),
        LayerSpec.maxpool3d("pool1", (2, 3, 4)),
        _conv(rng, "C2", (3, 5, 5), 6, 16),
        LayerSpec.relu("relu2"),
        LayerSpec.maxpool3d("pool2", (3, 4, 4)),
        LayerSpec.flatten("flatten"),
        _linear(rng, "L1", 4 * 9 * 9 * 16, 128),
        LayerSpec.relu("relu3"),
        _linear(rng, "L2", 128, 84),
        LayerSpec.relu("relu4"),
        _linear(rng, "L3", 84, 2),
    ]
    net = NetworkSpec(layers=layers, input_shape=(28, 120, 160, 4))
    net.validate()
    return net


def small_reference_network(seed: int = 0) -> NetworkSpec:
    """Same layer sequence as :func:`reference_network` at 8x24x32 input."""
    rng = np.random.default_rng(seed)
    layers = [
        _conv(rng, "C1", (3, 5, 5), 4, 6, padding=(1, 2, 2)),
        LayerSpec.relu("relu1"),
        LayerSpec.maxpool3d("pool1", (2, 2, 2)),
        _conv(rng, "C2", (3, 3, 3), 6, 16, padding=(1, 1, 1)),
        LayerSpec.relu("relu2"),
        LayerSpec.maxpool3d("pool2", (2, 2, 2)),
        LayerSpec.flatten("flatten"),
        _linear(rng, "L1", 2 * 6 * 8 * 16, 32),
        LayerSpec.relu("relu3"),
        _linear(rng, "L2", 32, 12),
        LayerSpec.relu("relu4"),
        _linear(rng, "L3", 12, 2),
    ]
    net = NetworkSpec(layers=layers, input_shape=(8, 24, 32, 4))
    net.validate()
    return net


def reference_ranks() -> dict[str, tuple[int, ...]]:
    return dict(REFERENCE_RANKS)


def reference_plan(net: NetworkSpec, ranks: dict[str, tuple[int, ...]] | None = None) -> CompressionPlan:
    """The per-layer plan shipped with the reference model: explicit ranks,
    Tucker-2 on C1 included.

    Layers named in ``ranks`` get an explicit strategy (two ranks mean
    Tucker-2, one rank Tucker-1); everything else follows the stock plan.
    """
    if ranks is None:
        ranks = reference_ranks()
    base = default_plan(net)
    entries = []
    for entry in base.entries:
        if entry.layer in ranks:
            r = tuple(ranks[entry.layer])
            strategy = "tucker2" if len(r) == 2 else "tucker1"
            entries.append(PlanEntry(layer=entry.layer, strategy=strategy, ranks=r))
        else:
            entries.append(entry)
    return CompressionPlan(entries)


def write_ranks_file(path, ranks: dict[str, tuple[int, ...]] | None = None) -> None:
    """Write a rank-override file (one ``name rank(s)`` line per layer)."""
    if ranks is None:
        ranks = reference_ranks()
    lines = [f"{name} {' '.join(str(r) for r in rs)}" for name, rs in ranks.items()]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
