"""Layer-graph representation of video CNNs and the reference inference engine.

Activations are laid out ``(F, H, W, S)`` (frames, height, width, channels)
and convolution kernels ``(D_F, D_H, D_W, S, T)``.  A convolution output
voxel at 0-based position ``out`` along a dimension with stride ``stride``
and padding ``pad`` reads source index ``out * stride + tap - pad`` for tap
offset ``tap``; out-of-range sources contribute zero.  All forward
operations are pure functions, so concurrent evaluation of a shared
network is safe.
"""

from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass, field, replace

import numpy as np

from .tensor import as_tensor

__all__ = [
    "ConvKernel",
    "LayerSpec",
    "NetworkSpec",
    "LAYER_KINDS",
    "conv3d_forward",
    "pointwise_forward",
    "maxpool3d_forward",
    "linear_forward",
    "flatten_activation",
    "forward",
    "infer_shapes",
    "count_multiplies",
    "MultiplyCounter",
]

LAYER_KINDS = ("conv3d", "pointwise_conv", "maxpool3d", "relu", "flatten", "linear")


# ---------------------------------------------------------------------------
# multiply counting (debug instrumentation)
# ---------------------------------------------------------------------------

class MultiplyCounter:
    """Accumulates the number of scalar multiplications the engine performs."""

    def __init__(self) -> None:
        self.count = 0


_counter_var: contextvars.ContextVar[MultiplyCounter | None] = contextvars.ContextVar(
    "tuckervid_multiply_counter", default=None
)


@contextlib.contextmanager
def count_multiplies():
    """Context manager that counts multiplies executed by forward passes.

    Counts are charged at each matrix-product dispatch site as the product
    of the contraction dimensions, i.e. exactly the scalar multiplications
    the contraction performs.
    """
    counter = MultiplyCounter()
    token = _counter_var.set(counter)
    try:
        yield counter
    finally:
        _counter_var.reset(token)


def _charge(n: int) -> None:
    counter = _counter_var.get()
    if counter is not None:
        counter.count += int(n)


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

def _triple(value) -> tuple[int, int, int]:
    if np.isscalar(value):
        value = (value, value, value)
    t = tuple(int(v) for v in value)
    if len(t) != 3:
        raise ValueError(f"expected 3 entries per (F, H, W) dimension, got {value!r}")
    return t


@dataclass
class ConvKernel:
    """A 5-way convolution kernel with stride and padding metadata.

    ``weights`` has shape ``(D_F, D_H, D_W, S, T)``; ``bias``, when present,
    has length ``T`` and is added per output channel.
    """

    weights: np.ndarray
    stride: tuple[int, int, int] = (1, 1, 1)
    padding: tuple[int, int, int] = (0, 0, 0)
    bias: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.weights = as_tensor(self.weights, ndim=5)
        self.stride = _triple(self.stride)
        self.padding = _triple(self.padding)
        if any(d < 1 for d in self.weights.shape):
            raise ValueError("kernel mode sizes must all be >= 1")
        if any(s < 1 for s in self.stride):
            raise ValueError("strides must be >= 1")
        if any(p < 0 for p in self.padding):
            raise ValueError("paddings must be >= 0")
        if self.bias is not None:
            self.bias = np.ascontiguousarray(self.bias, dtype=np.float64).reshape(-1)
            if self.bias.shape[0] != self.out_channels:
                raise ValueError(
                    f"bias length {self.bias.shape[0]} != output channels {self.out_channels}"
                )

    @property
    def taps(self) -> tuple[int, int, int]:
        return self.weights.shape[:3]

    @property
    def tap_count(self) -> int:
        df, dh, dw = self.taps
        return df * dh * dw

    @property
    def in_channels(self) -> int:
        return self.weights.shape[3]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[4]


@dataclass
class LayerSpec:
    """One layer of the network: a kind plus its kind-specific parameters."""

    name: str
    kind: str
    kernel: ConvKernel | None = None
    mixer: np.ndarray | None = None
    mixer_bias: np.ndarray | None = None
    window: tuple[int, int, int] | None = None
    pool_stride: tuple[int, int, int] | None = None
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv3d" and self.kernel is None:
            raise ValueError(f"layer {self.name!r}: conv3d requires a kernel")
        if self.kind == "pointwise_conv":
            if self.mixer is None:
                raise ValueError(f"layer {self.name!r}: pointwise_conv requires a mixer")
            self.mixer = as_tensor(self.mixer, ndim=2)
            if self.mixer_bias is not None:
                self.mixer_bias = np.ascontiguousarray(
                    self.mixer_bias, dtype=np.float64
                ).reshape(-1)
                if self.mixer_bias.shape[0] != self.mixer.shape[0]:
                    raise ValueError(f"layer {self.name!r}: bias/mixer size mismatch")
        if self.kind == "maxpool3d":
            if self.window is None:
                raise ValueError(f"layer {self.name!r}: maxpool3d requires a window")
            self.window = _triple(self.window)
            self.pool_stride = self.window if self.pool_stride is None else _triple(self.pool_stride)
        if self.kind == "linear":
            if self.weight is None:
                raise ValueError(f"layer {self.name!r}: linear requires a weight matrix")
            self.weight = as_tensor(self.weight, ndim=2)
            if self.bias is not None:
                self.bias = np.ascontiguousarray(self.bias, dtype=np.float64).reshape(-1)
                if self.bias.shape[0] != self.weight.shape[0]:
                    raise ValueError(f"layer {self.name!r}: bias/weight size mismatch")

    # Readable constructors -------------------------------------------------

    @classmethod
    def conv3d(cls, name: str, kernel: ConvKernel) -> "LayerSpec":
        return cls(name=name, kind="conv3d", kernel=kernel)

    @classmethod
    def pointwise(cls, name: str, mixer, bias=None) -> "LayerSpec":
        return cls(name=name, kind="pointwise_conv", mixer=mixer, mixer_bias=bias)

    @classmethod
    def maxpool3d(cls, name: str, window, stride=None) -> "LayerSpec":
        return cls(name=name, kind="maxpool3d", window=window, pool_stride=stride)

    @classmethod
    def relu(cls, name: str) -> "LayerSpec":
        return cls(name=name, kind="relu")

    @classmethod
    def flatten(cls, name: str) -> "LayerSpec":
        return cls(name=name, kind="flatten")

    @classmethod
    def linear(cls, name: str, weight, bias=None) -> "LayerSpec":
        return cls(name=name, kind="linear", weight=weight, bias=bias)


@dataclass
class NetworkSpec:
    """Ordered layer list plus the declared input shape ``(F, H, W, S)``."""

    layers: list[LayerSpec]
    input_shape: tuple[int, int, int, int]

    def __post_init__(self) -> None:
        self.input_shape = tuple(int(v) for v in self.input_shape)
        if len(self.input_shape) != 4 or any(v < 1 for v in self.input_shape):
            raise ValueError(f"input shape must be 4 positive extents, got {self.input_shape}")
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ValueError("layer names must be unique")

    def validate(self) -> None:
        """Shape-check the whole graph and the flatten placement rule."""
        infer_shapes(self)
        linear_idx = [i for i, l in enumerate(self.layers) if l.kind == "linear"]
        flatten_idx = [i for i, l in enumerate(self.layers) if l.kind == "flatten"]
        if linear_idx:
            if len(flatten_idx) != 1:
                raise ValueError(
                    f"expected exactly one flatten before the linear stage, found {len(flatten_idx)}"
                )
            if flatten_idx[0] > min(linear_idx):
                raise ValueError("flatten must precede every linear layer")
        elif len(flatten_idx) > 1:
            raise ValueError("at most one flatten layer is allowed")

    def layer(self, name: str) -> LayerSpec:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(f"no layer named {name!r}")

    def replace_layers(self, layers: list[LayerSpec]) -> "NetworkSpec":
        return replace(self, layers=layers)


# ---------------------------------------------------------------------------
# forward operations
# ---------------------------------------------------------------------------

def _conv_out_size(size: int, tap: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - tap) // stride + 1


def conv3d_forward(x: np.ndarray, k: ConvKernel) -> np.ndarray:
    """3D convolution of ``x`` ``(F, H, W, S)`` into ``(F', H', W', T)``.

    Zero padding; see the module docstring for the source-index map.  The
    kernel is applied tap by tap: for each filter offset the strided window
    of the padded input is contracted against the kernel's ``(S, T)`` slab,
    which keeps memory bounded for large inputs.
    """
    x = as_tensor(x, ndim=4)
    if x.shape[3] != k.in_channels:
        raise ValueError(f"input has {x.shape[3]} channels, kernel expects {k.in_channels}")
    taps = k.taps
    out_sizes = tuple(
        _conv_out_size(x.shape[d], taps[d], k.stride[d], k.padding[d]) for d in range(3)
    )
    if any(o < 1 for o in out_sizes):
        raise ValueError(
            f"non-positive output size {out_sizes} for input {x.shape[:3]}, "
            f"taps {taps}, stride {k.stride}, padding {k.padding}"
        )

    pf, ph, pw = k.padding
    padded = np.zeros(
        (x.shape[0] + 2 * pf, x.shape[1] + 2 * ph, x.shape[2] + 2 * pw, x.shape[3])
    )
    padded[pf : pf + x.shape[0], ph : ph + x.shape[1], pw : pw + x.shape[2], :] = x

    n_out = int(np.prod(out_sizes))
    acc = np.zeros((n_out, k.out_channels))
    sf, sh, sw = k.stride
    of, oh, ow = out_sizes
    for i in range(taps[0]):
        for j in range(taps[1]):
            for l in range(taps[2]):
                window = padded[
                    i : i + sf * of : sf,
                    j : j + sh * oh : sh,
                    l : l + sw * ow : sw,
                    :,
                ]
                acc += window.reshape(n_out, -1) @ k.weights[i, j, l]
                _charge(n_out * k.in_channels * k.out_channels)
    y = acc.reshape(out_sizes + (k.out_channels,))
    if k.bias is not None:
        y = y + k.bias
    return y


def pointwise_forward(x: np.ndarray, u: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Per-voxel channel mixing: ``y[..., r] = sum_s u[r, s] * x[..., s]``.

    Equivalent to a 1x1x1 convolution with mixing matrix ``u`` of shape
    ``(out_channels, in_channels)``; spatial and temporal extents are
    unchanged.
    """
    x = as_tensor(x, ndim=4)
    u = as_tensor(u, ndim=2)
    if u.shape[1] != x.shape[3]:
        raise ValueError(f"mixer expects {u.shape[1]} channels, input has {x.shape[3]}")
    y = x @ u.T
    _charge(int(np.prod(x.shape[:3])) * u.shape[0] * u.shape[1])
    if bias is not None:
        y = y + np.asarray(bias, dtype=np.float64)
    return y


def maxpool3d_forward(x: np.ndarray, window, stride=None) -> np.ndarray:
    """Window maxima over the three volumetric dimensions, per channel."""
    x = as_tensor(x, ndim=4)
    window = _triple(window)
    stride = window if stride is None else _triple(stride)
    out_sizes = tuple((x.shape[d] - window[d]) // stride[d] + 1 for d in range(3))
    if any(w > s for w, s in zip(window, x.shape[:3])) or any(o < 1 for o in out_sizes):
        raise ValueError(f"pool window {window} does not fit input {x.shape[:3]}")
    view = np.lib.stride_tricks.sliding_window_view(x, window, axis=(0, 1, 2))
    view = view[:: stride[0], :: stride[1], :: stride[2]]
    return np.ascontiguousarray(view.max(axis=(4, 5, 6)))


def flatten_activation(x: np.ndarray) -> np.ndarray:
    """Flatten ``(F, H, W, S)`` to a vector, channel slowest, then f, h, w."""
    x = as_tensor(x, ndim=4)
    return np.ascontiguousarray(x.transpose(3, 0, 1, 2)).reshape(-1)


def linear_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Affine map ``y = W @ x + b`` for a flat feature vector."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    weight = as_tensor(weight, ndim=2)
    if weight.shape[1] != x.shape[0]:
        raise ValueError(f"weight expects {weight.shape[1]} features, input has {x.shape[0]}")
    y = weight @ x
    _charge(weight.shape[0] * weight.shape[1])
    if bias is not None:
        y = y + np.asarray(bias, dtype=np.float64)
    return y


def apply_layer(layer: LayerSpec, x: np.ndarray) -> np.ndarray:
    """Apply one layer, wrapping shape errors with the layer name."""
    try:
        if layer.kind == "conv3d":
            return conv3d_forward(x, layer.kernel)
        if layer.kind == "pointwise_conv":
            return pointwise_forward(x, layer.mixer, layer.mixer_bias)
        if layer.kind == "maxpool3d":
            return maxpool3d_forward(x, layer.window, layer.pool_stride)
        if layer.kind == "relu":
            return np.maximum(x, 0.0)
        if layer.kind == "flatten":
            return flatten_activation(x)
        if layer.kind == "linear":
            return linear_forward(x, layer.weight, layer.bias)
    except ValueError as exc:
        raise ValueError(f"layer {layer.name!r}: {exc}") from exc
    raise ValueError(f"layer {layer.name!r}: unknown kind {layer.kind!r}")


def forward(net: NetworkSpec, x: np.ndarray) -> np.ndarray:
    """Run ``x`` through every layer of ``net`` in order."""
    x = as_tensor(x)
    if x.shape != net.input_shape:
        raise ValueError(f"input shape {x.shape} != declared {net.input_shape}")
    for layer in net.layers:
        x = apply_layer(layer, x)
    return x


# ---------------------------------------------------------------------------
# shape inference
# ---------------------------------------------------------------------------

def _infer_layer_shape(layer: LayerSpec, shape: tuple[int, ...]) -> tuple[int, ...]:
    if layer.kind in ("conv3d", "pointwise_conv", "maxpool3d"):
        if len(shape) != 4:
            raise ValueError(f"expects a 4-mode activation, got shape {shape}")
    if layer.kind == "conv3d":
        k = layer.kernel
        if shape[3] != k.in_channels:
            raise ValueError(f"input has {shape[3]} channels, kernel expects {k.in_channels}")
        out = tuple(
            _conv_out_size(shape[d], k.taps[d], k.stride[d], k.padding[d]) for d in range(3)
        )
        if any(o < 1 for o in out):
            raise ValueError(f"non-positive output size {out}")
        return out + (k.out_channels,)
    if layer.kind == "pointwise_conv":
        if shape[3] != layer.mixer.shape[1]:
            raise ValueError(
                f"input has {shape[3]} channels, mixer expects {layer.mixer.shape[1]}"
            )
        return shape[:3] + (layer.mixer.shape[0],)
    if layer.kind == "maxpool3d":
        out = tuple(
            (shape[d] - layer.window[d]) // layer.pool_stride[d] + 1 for d in range(3)
        )
        if any(w > s for w, s in zip(layer.window, shape[:3])) or any(o < 1 for o in out):
            raise ValueError(f"pool window {layer.window} does not fit input {shape[:3]}")
        return out + (shape[3],)
    if layer.kind == "relu":
        return shape
    if layer.kind == "flatten":
        if len(shape) != 4:
            raise ValueError(f"expects a 4-mode activation, got shape {shape}")
        return (int(np.prod(shape)),)
    if layer.kind == "linear":
        if len(shape) != 1:
            raise ValueError(f"expects a flat feature vector, got shape {shape}")
        if shape[0] != layer.weight.shape[1]:
            raise ValueError(
                f"input has {shape[0]} features, weight expects {layer.weight.shape[1]}"
            )
        return (layer.weight.shape[0],)
    raise ValueError(f"unknown kind {layer.kind!r}")


def infer_shapes(net: NetworkSpec) -> list[tuple[int, ...]]:
    """Per-layer output shapes; fails at the first inconsistent layer."""
    shape: tuple[int, ...] = net.input_shape
    shapes = []
    for layer in net.layers:
        try:
            shape = _infer_layer_shape(layer, shape)
        except ValueError as exc:
            raise ValueError(f"layer {layer.name!r}: {exc}") from exc
        shapes.append(shape)
    return shapes
