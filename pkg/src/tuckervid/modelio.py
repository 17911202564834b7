"""Model serialization: a JSON manifest plus a raw binary weight blob.

The manifest is human-readable and records the layer graph, the declared
input shape ``(F, H, W, S)`` and, for parameterized layers, the offset and
length of the layer's segment in the weight blob (both counted in float32
elements).  Segments appear in manifest order and must not overlap.

The blob is little-endian IEEE-754 float32: a 20-byte header (magic
``TVWB``, format version, element count, CRC-32 of the payload) followed by
the payload.  Per layer the element order is:

* conv3d kernels ``(t, s, i, j, l)`` slowest-to-fastest, then the bias;
* pointwise mixers row-major ``(out, in)``, then the bias;
* linear weights row-major ``(out, in)``, then the bias.

Weights are float32 on disk only; everything is widened to float64 on load.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .network import ConvKernel, LayerSpec, NetworkSpec, infer_shapes

__all__ = ["ModelIOError", "save_model", "load_model", "write_blob", "read_blob"]

MAGIC = b"TVWB"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQI")  # magic, version, element count, crc32


class ModelIOError(ValueError):
    """Raised for malformed manifests or corrupt weight blobs."""


def write_blob(path, values: np.ndarray) -> None:
    values = np.ascontiguousarray(values, dtype="<f4")
    payload = values.tobytes()
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, values.size, zlib.crc32(payload))
    Path(path).write_bytes(header + payload)


def read_blob(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ModelIOError(f"{path}: truncated weight blob")
    magic, version, count, checksum = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ModelIOError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ModelIOError(f"{path}: unsupported blob version {version}")
    payload = raw[_HEADER.size :]
    if len(payload) != 4 * count:
        raise ModelIOError(f"{path}: payload holds {len(payload)} bytes, expected {4 * count}")
    if zlib.crc32(payload) != checksum:
        raise ModelIOError(f"{path}: checksum mismatch, blob is corrupt")
    return np.frombuffer(payload, dtype="<f4").astype(np.float64)


def _layer_values(layer: LayerSpec) -> np.ndarray | None:
    if layer.kind == "conv3d":
        k = layer.kernel
        parts = [k.weights.transpose(4, 3, 0, 1, 2).ravel()]
        if k.bias is not None:
            parts.append(k.bias)
        return np.concatenate(parts)
    if layer.kind == "pointwise_conv":
        parts = [layer.mixer.ravel()]
        if layer.mixer_bias is not None:
            parts.append(layer.mixer_bias)
        return np.concatenate(parts)
    if layer.kind == "linear":
        parts = [layer.weight.ravel()]
        if layer.bias is not None:
            parts.append(layer.bias)
        return np.concatenate(parts)
    return None


def _layer_record(layer: LayerSpec, offset: int, length: int) -> dict:
    record: dict = {"name": layer.name, "kind": layer.kind}
    if layer.kind == "conv3d":
        k = layer.kernel
        record.update(
            taps=list(k.taps),
            in_channels=k.in_channels,
            out_channels=k.out_channels,
            stride=list(k.stride),
            padding=list(k.padding),
            bias=k.bias is not None,
        )
    elif layer.kind == "pointwise_conv":
        record.update(
            in_channels=layer.mixer.shape[1],
            out_channels=layer.mixer.shape[0],
            bias=layer.mixer_bias is not None,
        )
    elif layer.kind == "maxpool3d":
        record.update(window=list(layer.window), stride=list(layer.pool_stride))
    elif layer.kind == "linear":
        record.update(
            in_features=layer.weight.shape[1],
            out_features=layer.weight.shape[0],
            bias=layer.bias is not None,
        )
    if layer.kind in ("conv3d", "pointwise_conv", "linear"):
        record.update(offset=offset, length=length)
    return record


def save_model(net: NetworkSpec, manifest_path, blob_path) -> None:
    """Write ``net`` as a manifest and weight blob (see module docstring)."""
    infer_shapes(net)
    segments = []
    records = []
    offset = 0
    for layer in net.layers:
        values = _layer_values(layer)
        length = values.size if values is not None else 0
        records.append(_layer_record(layer, offset, length))
        if values is not None:
            segments.append(values)
            offset += length
    manifest = {
        "format_version": FORMAT_VERSION,
        "input_shape": list(net.input_shape),
        "layers": records,
    }
    Path(manifest_path).write_text(json.dumps(manifest, indent=2) + "\n")
    values = np.concatenate(segments) if segments else np.zeros(0)
    write_blob(blob_path, values)


@dataclass
class _Segment:
    record: dict
    offset: int
    length: int


def _expected_length(record: dict) -> int:
    kind = record["kind"]
    if kind == "conv3d":
        taps = record["taps"]
        n = taps[0] * taps[1] * taps[2] * record["in_channels"] * record["out_channels"]
        return n + (record["out_channels"] if record["bias"] else 0)
    if kind == "pointwise_conv":
        n = record["in_channels"] * record["out_channels"]
        return n + (record["out_channels"] if record["bias"] else 0)
    if kind == "linear":
        n = record["in_features"] * record["out_features"]
        return n + (record["out_features"] if record["bias"] else 0)
    return 0


def _build_layer(record: dict, values: np.ndarray | None) -> LayerSpec:
    kind = record["kind"]
    name = record["name"]
    if kind == "conv3d":
        taps = tuple(record["taps"])
        s, t = record["in_channels"], record["out_channels"]
        n_weights = taps[0] * taps[1] * taps[2] * s * t
        weights = values[:n_weights].reshape(t, s, *taps).transpose(2, 3, 4, 1, 0)
        bias = values[n_weights:] if record["bias"] else None
        kernel = ConvKernel(
            np.ascontiguousarray(weights),
            stride=tuple(record["stride"]),
            padding=tuple(record["padding"]),
            bias=bias,
        )
        return LayerSpec.conv3d(name, kernel)
    if kind == "pointwise_conv":
        s, t = record["in_channels"], record["out_channels"]
        mixer = values[: s * t].reshape(t, s)
        bias = values[s * t :] if record["bias"] else None
        return LayerSpec.pointwise(name, mixer, bias=bias)
    if kind == "maxpool3d":
        return LayerSpec.maxpool3d(name, tuple(record["window"]), tuple(record["stride"]))
    if kind == "relu":
        return LayerSpec.relu(name)
    if kind == "flatten":
        return LayerSpec.flatten(name)
    if kind == "linear":
        n_in, n_out = record["in_features"], record["out_features"]
        weight = values[: n_in * n_out].reshape(n_out, n_in)
        bias = values[n_in * n_out :] if record["bias"] else None
        return LayerSpec.linear(name, weight, bias=bias)
    raise ModelIOError(f"layer {name!r}: unknown kind {kind!r}")


def load_model(manifest_path, blob_path=None) -> NetworkSpec:
    """Load a manifest (and blob) back into a :class:`NetworkSpec`.

    With ``blob_path=None`` all weights are zero-filled; geometry-only
    loads are enough for cost accounting but not for inference or VBMF.
    """
    try:
        manifest = json.loads(Path(manifest_path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelIOError(f"{manifest_path}: invalid JSON ({exc})") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ModelIOError(
            f"{manifest_path}: unsupported manifest version {manifest.get('format_version')!r}"
        )
    try:
        input_shape = tuple(manifest["input_shape"])
        layer_records = manifest["layers"]
    except KeyError as exc:
        raise ModelIOError(f"{manifest_path}: missing field {exc}") from exc

    segments = []
    cursor = 0
    for record in layer_records:
        expected = _expected_length(record)
        if expected == 0:
            segments.append(_Segment(record, 0, 0))
            continue
        try:
            offset, length = int(record["offset"]), int(record["length"])
        except KeyError as exc:
            raise ModelIOError(
                f"{manifest_path}: layer {record.get('name')!r} missing {exc}"
            ) from exc
        if length != expected:
            raise ModelIOError(
                f"{manifest_path}: layer {record.get('name')!r} declares {length} values, "
                f"dimensions imply {expected}"
            )
        if offset < cursor:
            raise ModelIOError(
                f"{manifest_path}: layer {record.get('name')!r} segment overlaps its predecessor"
            )
        cursor = offset + length
        segments.append(_Segment(record, offset, length))

    if blob_path is not None:
        values = read_blob(blob_path)
        if cursor > values.size:
            raise ModelIOError(
                f"{blob_path}: blob holds {values.size} values, manifest needs {cursor}"
            )
    else:
        values = np.zeros(cursor)

    layers = []
    for seg in segments:
        chunk = values[seg.offset : seg.offset + seg.length] if seg.length else None
        try:
            layers.append(_build_layer(seg.record, chunk))
        except (ValueError, KeyError) as exc:
            if isinstance(exc, ModelIOError):
                raise
            raise ModelIOError(
                f"{manifest_path}: layer {seg.record.get('name')!r}: {exc}"
            ) from exc

    net = NetworkSpec(layers=layers, input_shape=input_shape)
    try:
        infer_shapes(net)
    except ValueError as exc:
        raise ModelIOError(f"{manifest_path}: inconsistent shapes ({exc})") from exc
    return net
