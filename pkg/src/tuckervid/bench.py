"""Wall-clock measurement of network forward passes.

Each measured run executes one instrumented end-to-end pass: the total is
the outer interval of the whole pass (so it includes inter-layer glue and
is never less than the sum of the per-layer intervals), and per-layer
times are the inner intervals.  Warmup passes are excluded.  Output values
must be bit-identical across repetitions; the harness checks this, which
doubles as a race detector when the BLAS backend threads.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .network import NetworkSpec, apply_layer
from .tensor import as_tensor

__all__ = ["LayerTiming", "TimingResult", "bench_forward"]


@dataclass
class LayerTiming:
    name: str
    mean_ms: float
    std_ms: float


@dataclass
class TimingResult:
    """Per-layer and end-to-end timing statistics in milliseconds."""

    layers: list[LayerTiming]
    total_mean_ms: float
    total_std_ms: float
    runs: int
    warmup: int
    single_thread: bool

    def to_dict(self) -> dict:
        return {
            "layers": [
                {"name": t.name, "mean_ms": t.mean_ms, "std_ms": t.std_ms} for t in self.layers
            ],
            "total_mean_ms": self.total_mean_ms,
            "total_std_ms": self.total_std_ms,
            "runs": self.runs,
            "warmup": self.warmup,
            "single_thread": self.single_thread,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TimingResult":
        return cls(
            layers=[
                LayerTiming(d["name"], d["mean_ms"], d["std_ms"]) for d in data["layers"]
            ],
            total_mean_ms=data["total_mean_ms"],
            total_std_ms=data["total_std_ms"],
            runs=data["runs"],
            warmup=data["warmup"],
            single_thread=data["single_thread"],
        )


def _mean_std(samples: np.ndarray) -> tuple[float, float]:
    return float(np.mean(samples)), float(np.std(samples, ddof=1))


def bench_forward(
    net: NetworkSpec,
    x: np.ndarray,
    runs: int = 500,
    warmup: int = 10,
    single_thread: bool = False,
) -> TimingResult:
    """Time ``runs`` forward passes of ``net`` on ``x`` after ``warmup`` passes.

    Reports the sample mean and sample standard deviation per layer and for
    the end-to-end pass.  ``single_thread=True`` pins the BLAS pools to one
    thread for the duration of the measurement.
    """
    if runs < 2:
        raise ValueError("runs must be >= 2 so the standard deviation is defined")
    if warmup < 0:
        raise ValueError("warmup must be >= 0")
    x = as_tensor(x)
    if x.shape != net.input_shape:
        raise ValueError(f"input shape {x.shape} != declared {net.input_shape}")

    n_layers = len(net.layers)
    layer_samples = np.zeros((runs, n_layers))
    total_samples = np.zeros(runs)
    reference_output: bytes | None = None

    def one_pass(record: np.ndarray | None) -> np.ndarray:
        value = x
        for idx, layer in enumerate(net.layers):
            t0 = time.perf_counter()
            value = apply_layer(layer, value)
            t1 = time.perf_counter()
            if record is not None:
                record[idx] = (t1 - t0) * 1e3
        return value

    def measure() -> None:
        nonlocal reference_output
        for _ in range(warmup):
            one_pass(None)
        for run in range(runs):
            start = time.perf_counter()
            out = one_pass(layer_samples[run])
            total_samples[run] = (time.perf_counter() - start) * 1e3
            digest = np.ascontiguousarray(out).tobytes()
            if reference_output is None:
                reference_output = digest
            elif digest != reference_output:
                raise RuntimeError("forward output changed between benchmark repetitions")

    if single_thread:
        with threadpool_limits(limits=1):
            measure()
    else:
        measure()

    layers = []
    for idx, layer in enumerate(net.layers):
        mean, std = _mean_std(layer_samples[:, idx])
        layers.append(LayerTiming(layer.name, mean, std))
    total_mean, total_std = _mean_std(total_samples)
    return TimingResult(
        layers=layers,
        total_mean_ms=total_mean,
        total_std_ms=total_std,
        runs=runs,
        warmup=warmup,
        single_thread=single_thread,
    )
