"""Closed-form parameter and FLOP accounting for original and compressed layers.

Multiplication counts are output-indexed: a convolution with ``S`` input
channels, ``T`` output channels, ``kernel_voxels`` taps per filter and
``out_voxels`` output positions per channel performs
``S * T * kernel_voxels * out_voxels`` scalar multiplications, which is
correct for any stride and padding.  The ``flops`` field uses the
convention ``2 * mults`` (one multiply plus one accumulate) and additionally
counts one add per output element when a bias is present; reports also show
the raw multiplication column so either convention can be read off.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import LayerSpec, NetworkSpec, infer_shapes

__all__ = [
    "LayerCost",
    "CostRow",
    "CostReport",
    "cost_conv_original",
    "cost_conv_tucker2",
    "cost_tucker1",
    "cost_linear_original",
    "cost_pointwise",
    "ratio_bound",
    "layer_cost",
    "network_cost",
    "report",
    "format_quantity",
]


@dataclass
class LayerCost:
    """Stored values, multiplications and FLOPs for one layer or group."""

    params: int
    mults: int
    flops: int
    breakdown: list[tuple[str, "LayerCost"]] = field(default_factory=list)

    def __add__(self, other: "LayerCost") -> "LayerCost":
        return LayerCost(
            params=self.params + other.params,
            mults=self.mults + other.mults,
            flops=self.flops + other.flops,
        )


def _cost(params: int, mults: int, bias_adds: int = 0) -> LayerCost:
    return LayerCost(params=int(params), mults=int(mults), flops=int(2 * mults + bias_adds))


def cost_conv_original(s: int, t: int, kernel_voxels: int, out_voxels: int, bias: bool = True) -> LayerCost:
    """Cost of a plain convolution: ``S*T*kernel_voxels`` weights applied at
    every output position."""
    params = s * t * kernel_voxels + (t if bias else 0)
    mults = s * t * kernel_voxels * out_voxels
    return _cost(params, mults, t * out_voxels if bias else 0)


def cost_pointwise(s: int, r: int, out_voxels: int, bias: bool = False) -> LayerCost:
    """Cost of a 1x1x1 channel-mixing convolution ``s -> r`` channels."""
    params = s * r + (r if bias else 0)
    mults = s * r * out_voxels
    return _cost(params, mults, r * out_voxels if bias else 0)


def cost_linear_original(in_features: int, out_features: int, bias: bool = True) -> LayerCost:
    params = in_features * out_features + (out_features if bias else 0)
    mults = in_features * out_features
    return _cost(params, mults, out_features if bias else 0)


def cost_conv_tucker2(
    s: int,
    t: int,
    rs: int,
    rt: int,
    kernel_voxels: int,
    in_voxels: int,
    out_voxels: int,
    bias: bool = True,
) -> LayerCost:
    """Cost of the three-convolution Tucker-2 rewrite.

    The breakdown lists the input mixer, the core convolution and the
    output mixer separately.
    """
    if not (1 <= rs <= s and 1 <= rt <= t):
        raise ValueError(f"ranks ({rs}, {rt}) out of bounds for channels ({s}, {t})")
    reduce = cost_pointwise(s, rs, in_voxels)
    core = cost_conv_original(rs, rt, kernel_voxels, out_voxels, bias=False)
    expand = cost_pointwise(rt, t, out_voxels, bias=bias)
    total = reduce + core + expand
    total.breakdown = [("reduce", reduce), ("core", core), ("expand", expand)]
    return total


def cost_tucker1(
    in_size: int,
    out_size: int,
    r: int,
    kernel_voxels: int = 1,
    out_voxels: int = 1,
    bias: bool = True,
) -> LayerCost:
    """Cost of the two-layer Tucker-1 rewrite.

    With ``kernel_voxels == out_voxels == 1`` this is the linear case
    (``in*r + r*out`` weights); larger values give the convolutional case
    (core conv followed by a pointwise expansion).
    """
    if not 1 <= r <= out_size:
        raise ValueError(f"rank {r} out of bounds for {out_size} outputs")
    core = LayerCost(
        params=in_size * r * kernel_voxels,
        mults=in_size * r * kernel_voxels * out_voxels,
        flops=2 * in_size * r * kernel_voxels * out_voxels,
    )
    expand = cost_pointwise(r, out_size, out_voxels, bias=bias)
    total = core + expand
    total.breakdown = [("core", core), ("expand", expand)]
    return total


def ratio_bound(s: int, t: int, rs: int, rt: int) -> float:
    """Upper bound on both improvement ratios: ``S*T / (Rs*Rt)``."""
    if min(s, t, rs, rt) < 1:
        raise ValueError("dimensions and ranks must be positive")
    return (s * t) / (rs * rt)


# ---------------------------------------------------------------------------
# per-network accounting
# ---------------------------------------------------------------------------

def layer_cost(layer: LayerSpec, out_shape: tuple[int, ...]) -> LayerCost:
    """Closed-form cost of one layer given its output shape."""
    if layer.kind == "conv3d":
        k = layer.kernel
        out_voxels = int(np.prod(out_shape[:3]))
        return cost_conv_original(
            k.in_channels, k.out_channels, k.tap_count, out_voxels, bias=k.bias is not None
        )
    if layer.kind == "pointwise_conv":
        out_voxels = int(np.prod(out_shape[:3]))
        return cost_pointwise(
            layer.mixer.shape[1],
            layer.mixer.shape[0],
            out_voxels,
            bias=layer.mixer_bias is not None,
        )
    if layer.kind == "linear":
        return cost_linear_original(
            layer.weight.shape[1], layer.weight.shape[0], bias=layer.bias is not None
        )
    return LayerCost(params=0, mults=0, flops=0)


def network_cost(net: NetworkSpec) -> list[tuple[str, LayerCost]]:
    shapes = infer_shapes(net)
    return [(layer.name, layer_cost(layer, shape)) for layer, shape in zip(net.layers, shapes)]


def _ratio(original: int, compressed: int) -> float:
    if compressed == 0:
        return 1.0 if original == 0 else float("inf")
    return original / compressed


@dataclass
class CostRow:
    """One report row: an original layer against its replacement group."""

    name: str
    original: LayerCost
    compressed: LayerCost
    strategy: str = "-"
    ranks: tuple[int, ...] | None = None
    time_original_ms: tuple[float, float] | None = None
    time_compressed_ms: tuple[float, float] | None = None
    time_breakdown_ms: list[float] | None = None

    @property
    def param_ratio(self) -> float:
        return _ratio(self.original.params, self.compressed.params)

    @property
    def flops_ratio(self) -> float:
        return _ratio(self.original.flops, self.compressed.flops)

    @property
    def mults_ratio(self) -> float:
        return _ratio(self.original.mults, self.compressed.mults)


@dataclass
class CostReport:
    """Per-layer cost comparison; totals are column sums, never ratio averages."""

    rows: list[CostRow]
    total_original: LayerCost
    total_compressed: LayerCost
    total_time_original_ms: tuple[float, float] | None = None
    total_time_compressed_ms: tuple[float, float] | None = None

    @property
    def total_param_ratio(self) -> float:
        return _ratio(self.total_original.params, self.total_compressed.params)

    @property
    def total_flops_ratio(self) -> float:
        return _ratio(self.total_original.flops, self.total_compressed.flops)

    @property
    def total_mults_ratio(self) -> float:
        return _ratio(self.total_original.mults, self.total_compressed.mults)

    def to_records(self) -> list[dict]:
        records = []
        for row in self.rows:
            records.append(
                {
                    "record": "layer",
                    "name": row.name,
                    "strategy": row.strategy,
                    "ranks": list(row.ranks) if row.ranks else None,
                    "params_original": row.original.params,
                    "params_compressed": row.compressed.params,
                    "mults_original": row.original.mults,
                    "mults_compressed": row.compressed.mults,
                    "flops_original": row.original.flops,
                    "flops_compressed": row.compressed.flops,
                    "flops_breakdown": [c.flops for _, c in row.compressed.breakdown] or None,
                    "param_ratio": row.param_ratio,
                    "flops_ratio": row.flops_ratio,
                    "time_original_ms": list(row.time_original_ms) if row.time_original_ms else None,
                    "time_compressed_ms": list(row.time_compressed_ms) if row.time_compressed_ms else None,
                    "time_breakdown_ms": row.time_breakdown_ms,
                }
            )
        records.append(
            {
                "record": "total",
                "params_original": self.total_original.params,
                "params_compressed": self.total_compressed.params,
                "mults_original": self.total_original.mults,
                "mults_compressed": self.total_compressed.mults,
                "flops_original": self.total_original.flops,
                "flops_compressed": self.total_compressed.flops,
                "param_ratio": self.total_param_ratio,
                "flops_ratio": self.total_flops_ratio,
                "time_original_ms": list(self.total_time_original_ms)
                if self.total_time_original_ms
                else None,
                "time_compressed_ms": list(self.total_time_compressed_ms)
                if self.total_time_compressed_ms
                else None,
            }
        )
        return records

    def format_text(self) -> str:
        """Aligned text table with K/M rounding (one decimal)."""
        headers = ["layer", "comp", "ranks", "weights", "flops (2*mults+bias)", "impr"]
        show_time = any(row.time_original_ms for row in self.rows)
        if show_time:
            headers.append("cpu time (ms)")
        lines = []
        for row in self.rows:
            orig = [
                row.name,
                "-",
                "-",
                format_quantity(row.original.params),
                format_quantity(row.original.flops),
                "",
            ]
            ranks = "/".join(str(r) for r in row.ranks) if row.ranks else "-"
            comp_flops = format_quantity(row.compressed.flops)
            if row.compressed.breakdown:
                parts = _format_breakdown(
                    row.compressed.flops, [c.flops for _, c in row.compressed.breakdown]
                )
                comp_flops += f" (={parts})"
            comp = [
                "  comp",
                row.strategy,
                ranks,
                format_quantity(row.compressed.params),
                comp_flops,
                f"x{row.param_ratio:.2f} / x{row.flops_ratio:.2f}",
            ]
            if show_time:
                orig.append(_format_time(row.time_original_ms))
                comp_time = _format_time(row.time_compressed_ms)
                if row.time_breakdown_ms:
                    comp_time += " (=" + "+".join(f"{t:.2f}" for t in row.time_breakdown_ms) + ")"
                comp.append(comp_time)
            lines.append(orig)
            lines.append(comp)
        total = [
            "TOTAL",
            "-",
            "-",
            f"{format_quantity(self.total_original.params)} -> "
            f"{format_quantity(self.total_compressed.params)}",
            f"{format_quantity(self.total_original.flops)} -> "
            f"{format_quantity(self.total_compressed.flops)}",
            f"x{self.total_param_ratio:.2f} / x{self.total_flops_ratio:.2f}",
        ]
        if show_time:
            total.append(
                f"{_format_time(self.total_time_original_ms)} -> "
                f"{_format_time(self.total_time_compressed_ms)}"
            )
        lines.append(total)

        widths = [max(len(headers[i]), *(len(l[i]) for l in lines)) for i in range(len(headers))]
        fmt = "  ".join(f"{{:<{w}}}" for w in widths)
        out = [fmt.format(*headers), fmt.format(*["-" * w for w in widths])]
        out.extend(fmt.format(*line) for line in lines)
        return "\n".join(out)


def _format_time(t: tuple[float, float] | None) -> str:
    if t is None:
        return "-"
    return f"{t[0]:.2f} +- {t[1]:.2f}"


def format_quantity(value: int | float) -> str:
    """K/M rounding with one decimal, as used in the comparison table."""
    value = float(value)
    if value >= 1e6:
        return f"{value / 1e6:.1f}M"
    if value >= 1e3:
        return f"{value / 1e3:.1f}K"
    return f"{value:.0f}"


def _format_breakdown(total: int, parts: list[int]) -> str:
    """Per-sublayer terms in the same unit as the formatted total."""
    unit = 1e6 if total >= 1e6 else 1e3 if total >= 1e3 else 1.0
    if unit == 1.0:
        return "+".join(f"{p:.0f}" for p in parts)
    return "+".join(f"{p / unit:.1f}" for p in parts)


def _group_key(name: str) -> str:
    return name.split("/", 1)[0]


def report(
    net: NetworkSpec,
    compressed_net: NetworkSpec,
    timings: tuple | None = None,
) -> CostReport:
    """Build the per-layer comparison between a network and its rewrite.

    Compressed layers are matched to originals by name prefix (replacement
    layers are named ``<original>/<role>``).  Only parameterized rows are
    shown; totals are independent column sums over all layers.  ``timings``
    is an optional ``(original, compressed)`` pair of
    :class:`~tuckervid.bench.TimingResult`.
    """
    original_costs = network_cost(net)
    compressed_costs = network_cost(compressed_net)

    groups: dict[str, list[tuple[str, LayerCost]]] = {}
    order: list[str] = []
    for name, cost in compressed_costs:
        key = _group_key(name)
        groups.setdefault(key, []).append((name, cost))
        if key not in order:
            order.append(key)
    for name, _ in original_costs:
        if name not in groups:
            raise ValueError(f"no compressed counterpart for layer {name!r}")

    time_orig = {lt.name: (lt.mean_ms, lt.std_ms) for lt in timings[0].layers} if timings else {}
    time_comp = {lt.name: (lt.mean_ms, lt.std_ms) for lt in timings[1].layers} if timings else {}

    rows = []
    for name, orig_cost in original_costs:
        members = groups[name]
        if orig_cost.params == 0 and all(c.params == 0 for _, c in members):
            continue  # parameter-free glue (relu/pool/flatten) stays out of the table
        combined = LayerCost(params=0, mults=0, flops=0)
        for member_name, member_cost in members:
            combined = combined + member_cost
        if len(members) > 1:
            combined.breakdown = [(n.split("/", 1)[1], c) for n, c in members]
            strategy = "tucker2" if len(members) == 3 else "tucker1"
            ranks = _infer_group_ranks(compressed_net, [n for n, _ in members], strategy)
        else:
            strategy, ranks = "-", None
        row = CostRow(
            name=name,
            original=orig_cost,
            compressed=combined,
            strategy=strategy,
            ranks=ranks,
        )
        if timings:
            row.time_original_ms = time_orig.get(name)
            member_names = [n for n, _ in members]
            member_times = [time_comp[n] for n in member_names if n in time_comp]
            if len(member_names) > 1 and member_times:
                row.time_breakdown_ms = [t[0] for t in member_times]
                mean = sum(t[0] for t in member_times)
                var = sum(t[1] ** 2 for t in member_times)
                row.time_compressed_ms = (mean, float(np.sqrt(var)))
            else:
                row.time_compressed_ms = time_comp.get(name)
        rows.append(row)

    total_original = LayerCost(params=0, mults=0, flops=0)
    for _, cost in original_costs:
        total_original = total_original + cost
    total_compressed = LayerCost(params=0, mults=0, flops=0)
    for _, cost in compressed_costs:
        total_compressed = total_compressed + cost

    report_obj = CostReport(
        rows=rows,
        total_original=total_original,
        total_compressed=total_compressed,
    )
    if timings:
        report_obj.total_time_original_ms = (timings[0].total_mean_ms, timings[0].total_std_ms)
        report_obj.total_time_compressed_ms = (timings[1].total_mean_ms, timings[1].total_std_ms)
    return report_obj


def _infer_group_ranks(
    net: NetworkSpec, member_names: list[str], strategy: str
) -> tuple[int, ...] | None:
    # The core layer's channel extents are the Tucker ranks.
    for name in member_names:
        if not name.endswith("/core"):
            continue
        layer = net.layer(name)
        if layer.kind == "conv3d":
            if strategy == "tucker2":
                return (layer.kernel.in_channels, layer.kernel.out_channels)
            return (layer.kernel.out_channels,)
        if layer.kind == "linear":
            return (layer.weight.shape[0],)
    return None
