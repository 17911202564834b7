import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tuckervid.network import ConvKernel


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_kernel(rng, taps=(3, 5, 5), s=6, t=16, stride=(1, 1, 1), padding=(0, 0, 0), bias=True):
    weights = rng.standard_normal(tuple(taps) + (s, t))
    b = rng.standard_normal(t) if bias else None
    return ConvKernel(weights, stride=stride, padding=padding, bias=b)


def planted_kernel(rng, taps=(3, 5, 5), s=6, t=16, rs=2, rt=3, noise=0.0):
    """Kernel that exactly satisfies the Tucker-2 model at ranks (rs, rt)."""
    core = rng.standard_normal(tuple(taps) + (rs, rt))
    u, _ = np.linalg.qr(rng.standard_normal((s, rs)))
    v, _ = np.linalg.qr(rng.standard_normal((t, rt)))
    w = np.einsum("ijlab,sa,tb->ijlst", core, u, v)
    if noise:
        scale = np.linalg.norm(w) / np.sqrt(w.size)
        w = w + noise * scale * rng.standard_normal(w.shape)
    return w
