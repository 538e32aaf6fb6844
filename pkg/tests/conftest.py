"""Shared test helpers: naive oracles kept independent of the library paths."""

from __future__ import annotations

import numpy as np
import pytest

from p2msim.events import EventStream


def naive_bin(stream: EventStream, t_intg_us: int) -> np.ndarray:
    """Per-event loop binning oracle, shape [n_win, 2, H, W]."""
    import math

    n_win = math.ceil(stream.duration_us / t_intg_us)
    out = np.zeros((n_win, 2, stream.height, stream.width), dtype=np.int64)
    for e in stream:
        out[e.t // t_intg_us, e.polarity, e.y, e.x] += 1
    return out


def naive_conv(counts: np.ndarray, weights: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Six-loop cross-correlation oracle; counts [2,H,W], weights [F,2,k,k]."""
    n_f, _, k, _ = weights.shape
    _, h, w = counts.shape
    if pad:
        counts = np.pad(counts, ((0, 0), (pad, pad), (pad, pad)))
    h_out = (h + 2 * pad - k) // stride + 1
    w_out = (w + 2 * pad - k) // stride + 1
    out = np.zeros((n_f, h_out, w_out))
    for f in range(n_f):
        for oy in range(h_out):
            for ox in range(w_out):
                acc = 0.0
                for p in range(2):
                    for ty in range(k):
                        for tx in range(k):
                            acc += (
                                weights[f, p, ty, tx]
                                * counts[p, oy * stride + ty, ox * stride + tx]
                            )
                out[f, oy, ox] = acc
    return out


def random_stream(
    gen: np.random.Generator,
    width: int = 16,
    height: int = 16,
    max_events: int = 1000,
    max_t: int = 50_000,
) -> EventStream:
    n = int(gen.integers(0, max_events + 1))
    t = np.sort(gen.integers(0, max_t, size=n).astype(np.int64), kind="stable")
    return EventStream.from_arrays(
        width,
        height,
        t,
        gen.integers(0, width, size=n),
        gen.integers(0, height, size=n),
        gen.integers(0, 2, size=n),
    )


@pytest.fixture
def gen() -> np.random.Generator:
    return np.random.default_rng(0xC0FFEE)
