"""One-shot whole-network compression.

Each eligible layer's kernel is decomposed and the layer is rewritten as a
sequence of cheaper convolutions with the same semantics at full rank:

* Tucker-2 on a conv kernel yields ``[pointwise S->Rs] -> [conv
  D_F x D_H x D_W, Rs->Rt, original stride/padding] -> [pointwise Rt->T]``;
* Tucker-1 yields ``[conv with core] -> [pointwise]`` for convolutions and
  ``[linear in->r] -> [linear r->out]`` for 2-mode weights;
* the first linear layer can be lifted to a convolution covering its whole
  incoming feature map so that Tucker-2 applies to it as well.

The bias always moves to the last replacement layer.  Rank choices come
from an explicit plan or from VBMF, and a no-gain guard downgrades any
rewrite that would not shrink the parameter count.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .network import ConvKernel, LayerSpec, NetworkSpec, infer_shapes
from .tucker import (
    DEFAULT_MAX_ITERS,
    DEFAULT_TOL,
    tucker1_kernel,
    tucker2_kernel,
)
from .vbmf import estimate_rank, estimate_ranks_for_conv

__all__ = [
    "PlanEntry",
    "CompressionPlan",
    "CompressedLayerGroup",
    "LayerOutcome",
    "CompressionRecord",
    "default_plan",
    "rewrite_tucker2",
    "rewrite_tucker1",
    "lift_linear_to_conv",
    "compress_network",
    "layer_param_count",
]

STRATEGIES = ("tucker2", "tucker1", "skip")


@dataclass
class PlanEntry:
    """Per-layer strategy; ``ranks=None`` means choose ranks via VBMF."""

    layer: str
    strategy: str
    ranks: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r} for layer {self.layer!r}")
        if self.ranks is not None:
            self.ranks = tuple(int(r) for r in self.ranks)
            expected = {"tucker2": 2, "tucker1": 1}.get(self.strategy)
            if expected is not None and len(self.ranks) != expected:
                raise ValueError(
                    f"layer {self.layer!r}: {self.strategy} takes {expected} rank(s), "
                    f"got {self.ranks}"
                )
            if any(r < 1 for r in self.ranks):
                raise ValueError(f"layer {self.layer!r}: ranks must be >= 1")


@dataclass
class CompressionPlan:
    """Strategy and ranks for every layer of a network, each exactly once."""

    entries: list[PlanEntry]

    def entry(self, name: str) -> PlanEntry:
        for e in self.entries:
            if e.layer == name:
                return e
        raise KeyError(f"plan has no entry for layer {name!r}")

    def check_covers(self, net: NetworkSpec) -> None:
        plan_names = [e.layer for e in self.entries]
        net_names = [l.name for l in net.layers]
        if sorted(plan_names) != sorted(set(plan_names)):
            dupes = sorted({n for n in plan_names if plan_names.count(n) > 1})
            raise ValueError(f"plan lists layers more than once: {dupes}")
        missing = [n for n in net_names if n not in plan_names]
        unknown = [n for n in plan_names if n not in net_names]
        if missing or unknown:
            raise ValueError(
                f"plan/network mismatch: missing {missing or 'none'}, unknown {unknown or 'none'}"
            )


def default_plan(net: NetworkSpec) -> CompressionPlan:
    """The stock one-shot assignment.

    Tucker-2 on every convolution except the first, and on the first linear
    layer (lifted to a convolution); Tucker-1 on the first convolution and
    on intermediate linear layers; the final classifier layer and all
    parameter-free layers are skipped.  Ranks are left to VBMF.
    """
    conv_names = [l.name for l in net.layers if l.kind == "conv3d"]
    linear_names = [l.name for l in net.layers if l.kind == "linear"]
    entries = []
    for layer in net.layers:
        strategy = "skip"
        if layer.kind == "conv3d":
            strategy = "tucker1" if layer.name == conv_names[0] else "tucker2"
        elif layer.kind == "linear":
            if layer.name == linear_names[0] and len(linear_names) > 1:
                strategy = "tucker2"
            elif layer.name != linear_names[-1]:
                strategy = "tucker1"
        entries.append(PlanEntry(layer=layer.name, strategy=strategy))
    return CompressionPlan(entries)


@dataclass
class CompressedLayerGroup:
    """Replacement layers for one original layer, with factor provenance.

    ``roles`` maps each replacement layer name to which factor it carries
    (``input_factor``, ``core``, ``output_factor``).
    """

    original: str
    layers: list[LayerSpec]
    roles: dict[str, str]
    strategy: str
    ranks: tuple[int, ...]


@dataclass
class LayerOutcome:
    name: str
    planned: str
    applied: str
    ranks: tuple[int, ...] | None
    params_before: int
    params_after: int
    downgraded: bool = False
    reason: str | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "planned": self.planned,
            "applied": self.applied,
            "ranks": list(self.ranks) if self.ranks is not None else None,
            "params_before": self.params_before,
            "params_after": self.params_after,
            "downgraded": self.downgraded,
            "reason": self.reason,
        }


@dataclass
class CompressionRecord:
    """What happened to each layer during a compression pass."""

    layers: list[LayerOutcome] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"layers": [o.to_dict() for o in self.layers]}

    @classmethod
    def from_dict(cls, data: dict) -> "CompressionRecord":
        return cls(
            layers=[
                LayerOutcome(
                    name=d["name"],
                    planned=d["planned"],
                    applied=d["applied"],
                    ranks=tuple(d["ranks"]) if d["ranks"] is not None else None,
                    params_before=d["params_before"],
                    params_after=d["params_after"],
                    downgraded=d["downgraded"],
                    reason=d["reason"],
                )
                for d in data["layers"]
            ]
        )


def layer_param_count(layer: LayerSpec) -> int:
    """Stored values (weights plus biases) of a single layer."""
    if layer.kind == "conv3d":
        k = layer.kernel
        return k.weights.size + (k.bias.size if k.bias is not None else 0)
    if layer.kind == "pointwise_conv":
        return layer.mixer.size + (layer.mixer_bias.size if layer.mixer_bias is not None else 0)
    if layer.kind == "linear":
        return layer.weight.size + (layer.bias.size if layer.bias is not None else 0)
    return 0


def group_param_count(group: CompressedLayerGroup) -> int:
    return sum(layer_param_count(l) for l in group.layers)


# ---------------------------------------------------------------------------
# layer rewrites
# ---------------------------------------------------------------------------

def rewrite_tucker2(
    layer: LayerSpec,
    rs: int,
    rt: int,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> CompressedLayerGroup:
    """Rewrite a conv3d layer as pointwise -> core conv -> pointwise.

    The first pointwise applies the transposed input-channel factor, the
    middle convolution carries the core with the original stride and
    padding (the pointwise layers never resample), and the last pointwise
    applies the output-channel factor together with the original bias.
    """
    if layer.kind != "conv3d":
        raise ValueError(f"layer {layer.name!r}: tucker2 rewrite needs a conv3d layer")
    k = layer.kernel
    if not (1 <= rs <= k.in_channels and 1 <= rt <= k.out_channels):
        raise ValueError(
            f"layer {layer.name!r}: ranks ({rs}, {rt}) out of bounds for "
            f"channels ({k.in_channels}, {k.out_channels})"
        )
    factors = tucker2_kernel(k.weights, rs, rt, max_iters=max_iters, tol=tol)
    u_s = factors.factor(3)
    u_t = factors.factor(4)
    reduce_name = f"{layer.name}/reduce"
    core_name = f"{layer.name}/core"
    expand_name = f"{layer.name}/expand"
    layers = [
        LayerSpec.pointwise(reduce_name, u_s.T),
        LayerSpec.conv3d(
            core_name,
            ConvKernel(factors.core, stride=k.stride, padding=k.padding),
        ),
        LayerSpec.pointwise(expand_name, u_t, bias=k.bias),
    ]
    roles = {reduce_name: "input_factor", core_name: "core", expand_name: "output_factor"}
    return CompressedLayerGroup(layer.name, layers, roles, "tucker2", (rs, rt))


def rewrite_tucker1(
    layer: LayerSpec,
    r: int,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> CompressedLayerGroup:
    """Rewrite one layer with a single output-mode factor.

    conv3d: ``[conv with core, S->r, original stride/padding] ->
    [pointwise r->T with bias]``.  linear: ``[linear in->r, no bias] ->
    [linear r->out with bias]``.
    """
    core_name = f"{layer.name}/core"
    expand_name = f"{layer.name}/expand"
    roles = {core_name: "core", expand_name: "output_factor"}
    if layer.kind == "conv3d":
        k = layer.kernel
        if not 1 <= r <= k.out_channels:
            raise ValueError(
                f"layer {layer.name!r}: rank {r} out of bounds for {k.out_channels} output channels"
            )
        factors = tucker1_kernel(k.weights, mode=4, r=r, max_iters=max_iters, tol=tol)
        layers = [
            LayerSpec.conv3d(
                core_name,
                ConvKernel(factors.core, stride=k.stride, padding=k.padding),
            ),
            LayerSpec.pointwise(expand_name, factors.factor(4), bias=k.bias),
        ]
        return CompressedLayerGroup(layer.name, layers, roles, "tucker1", (r,))
    if layer.kind == "linear":
        out_features = layer.weight.shape[0]
        if not 1 <= r <= out_features:
            raise ValueError(
                f"layer {layer.name!r}: rank {r} out of bounds for {out_features} outputs"
            )
        factors = tucker1_kernel(layer.weight, mode=0, r=r, max_iters=max_iters, tol=tol)
        layers = [
            LayerSpec.linear(core_name, factors.core),
            LayerSpec.linear(expand_name, factors.factor(0), bias=layer.bias),
        ]
        return CompressedLayerGroup(layer.name, layers, roles, "tucker1", (r,))
    raise ValueError(f"layer {layer.name!r}: tucker1 rewrite needs conv3d or linear")


def lift_linear_to_conv(layer: LayerSpec, feature_shape) -> LayerSpec:
    """Reshape a linear layer into a convolution covering its feature map.

    ``feature_shape`` is the ``(F, H, W, S)`` shape feeding the flatten
    that precedes the layer; the lifted kernel has shape
    ``(F, H, W, S, out)`` with stride 1 and no padding, so its output is a
    ``(1, 1, 1, out)`` map that flattens back to the original vector.
    """
    if layer.kind != "linear":
        raise ValueError(f"layer {layer.name!r}: only linear layers can be lifted")
    f, h, w, s = (int(v) for v in feature_shape)
    in_features = layer.weight.shape[1]
    if in_features != f * h * w * s:
        raise ValueError(
            f"layer {layer.name!r}: weight expects {in_features} features but the "
            f"feature map {feature_shape} flattens to {f * h * w * s}"
        )
    out_features = layer.weight.shape[0]
    # Flatten order is channel-slowest then f, h, w, so the weight reshapes
    # to (out, S, F, H, W) before moving out to the trailing kernel mode.
    weights = layer.weight.reshape(out_features, s, f, h, w).transpose(2, 3, 4, 1, 0)
    kernel = ConvKernel(np.ascontiguousarray(weights), stride=(1, 1, 1), padding=(0, 0, 0), bias=layer.bias)
    return LayerSpec.conv3d(layer.name, kernel)


# ---------------------------------------------------------------------------
# whole-network pass
# ---------------------------------------------------------------------------

def _resolve_tucker2_ranks(entry: PlanEntry, kernel: ConvKernel) -> tuple[int, int]:
    if entry.ranks is not None:
        return entry.ranks[0], entry.ranks[1]
    return estimate_ranks_for_conv(kernel.weights)


def _resolve_tucker1_rank(entry: PlanEntry, layer: LayerSpec) -> int:
    if entry.ranks is not None:
        return entry.ranks[0]
    if layer.kind == "conv3d":
        from .tensor import unfold

        rank = estimate_rank(unfold(layer.kernel.weights, 4)).rank
    else:
        rank = estimate_rank(layer.weight).rank
    if rank < 1:
        warnings.warn(
            f"VBMF estimated rank 0 for layer {entry.layer!r}; clamping to 1",
            stacklevel=2,
        )
        rank = 1
    return rank


def compress_network(
    net: NetworkSpec,
    plan: CompressionPlan | None = None,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
    no_gain_guard: bool = True,
) -> tuple[NetworkSpec, CompressionRecord]:
    """Apply the one-shot compression pass to a whole network.

    Returns the rewritten network plus a record of the strategy, ranks and
    any no-gain downgrades per layer.  The output network accepts the same
    inputs as the original and passes shape inference.  With
    ``no_gain_guard=False`` rewrites are kept even when they do not shrink
    the parameter count (useful for algebraic equivalence checks at full
    rank).
    """
    net.validate()
    if plan is None:
        plan = default_plan(net)
    plan.check_covers(net)

    out_shapes = infer_shapes(net)
    in_shapes = [net.input_shape] + out_shapes[:-1]

    record = CompressionRecord()
    new_layers: list[LayerSpec] = []
    index = 0
    while index < len(net.layers):
        layer = net.layers[index]
        entry = plan.entry(layer.name)

        # A flatten directly followed by a tucker2-planned linear layer is
        # rewritten jointly: the lifted conv group consumes the unflattened
        # feature map and the flatten moves after it.
        if (
            layer.kind == "flatten"
            and index + 1 < len(net.layers)
            and net.layers[index + 1].kind == "linear"
            and plan.entry(net.layers[index + 1].name).strategy == "tucker2"
        ):
            linear = net.layers[index + 1]
            feature_shape = in_shapes[index]
            group, outcome = _compress_one(
                lift_linear_to_conv(linear, feature_shape),
                plan.entry(linear.name),
                max_iters,
                tol,
                params_before=layer_param_count(linear),
                no_gain_guard=no_gain_guard,
            )
            if group is None:  # no-gain downgrade keeps the original pair
                new_layers.extend([layer, linear])
            else:
                new_layers.extend(group)
                new_layers.append(layer)
            record.layers.append(
                LayerOutcome(
                    name=layer.name,
                    planned="skip",
                    applied="skip",
                    ranks=None,
                    params_before=0,
                    params_after=0,
                )
            )
            record.layers.append(outcome)
            index += 2
            continue

        if entry.strategy == "skip" or layer.kind not in ("conv3d", "linear"):
            applied = "skip"
            reason = None
            if entry.strategy != "skip":
                applied, reason = "skip", f"{entry.strategy} does not apply to {layer.kind}"
            params = layer_param_count(layer)
            record.layers.append(
                LayerOutcome(
                    name=layer.name,
                    planned=entry.strategy,
                    applied=applied,
                    ranks=None,
                    params_before=params,
                    params_after=params,
                    downgraded=entry.strategy != "skip",
                    reason=reason,
                )
            )
            new_layers.append(layer)
            index += 1
            continue

        if entry.strategy == "tucker2" and layer.kind == "linear":
            raise ValueError(
                f"layer {layer.name!r}: tucker2 on a linear layer requires it to "
                "directly follow the flatten layer"
            )

        group, outcome = _compress_one(
            layer, entry, max_iters, tol, params_before=layer_param_count(layer),
            no_gain_guard=no_gain_guard,
        )
        new_layers.extend(group if group is not None else [layer])
        record.layers.append(outcome)
        index += 1

    compressed = net.replace_layers(new_layers)
    infer_shapes(compressed)
    return compressed, record


def _compress_one(
    layer: LayerSpec,
    entry: PlanEntry,
    max_iters: int,
    tol: float,
    params_before: int,
    no_gain_guard: bool = True,
) -> tuple[list[LayerSpec] | None, LayerOutcome]:
    """Rewrite one layer; a ``None`` group means the no-gain guard fired."""
    try:
        if entry.strategy == "tucker2":
            rs, rt = _resolve_tucker2_ranks(entry, layer.kernel)
            group = rewrite_tucker2(layer, rs, rt, max_iters=max_iters, tol=tol)
        else:
            r = _resolve_tucker1_rank(entry, layer)
            group = rewrite_tucker1(layer, r, max_iters=max_iters, tol=tol)
    except ValueError as exc:
        raise ValueError(f"layer {entry.layer!r}: {exc}") from exc

    params_after = group_param_count(group)
    if no_gain_guard and params_after >= params_before:
        outcome = LayerOutcome(
            name=entry.layer,
            planned=entry.strategy,
            applied="skip",
            ranks=group.ranks,
            params_before=params_before,
            params_after=params_before,
            downgraded=True,
            reason=(
                f"no gain: compressed parameter count {params_after} >= "
                f"original {params_before}"
            ),
        )
        return None, outcome

    outcome = LayerOutcome(
        name=entry.layer,
        planned=entry.strategy,
        applied=entry.strategy,
        ranks=group.ranks,
        params_before=params_before,
        params_after=params_after,
    )
    return group.layers, outcome
