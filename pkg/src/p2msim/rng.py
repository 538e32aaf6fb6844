"""Deterministic random streams.

Process-variation draws are keyed by (seed, kernel id) through a Philox
counter-based generator, so the i-th draw for a given kernel is a pure
function of (seed, kernel_id, i). Results are identical no matter how the
work is split across threads or how many units consume the stream.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def philox(seed: int, tag: int = 0) -> np.random.Generator:
    """Generator keyed by (seed, tag)."""
    key = np.array([seed & _MASK64, tag & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# Key-space tags; keep distinct so derived streams never collide.
TAG_VARIATION = 0x5641_5249  # per-kernel weight-variation draws
TAG_SYNTH = 0x53_594E


def variation_draws(seed: int, kernel_id: int, n: int) -> np.ndarray:
    """First ``n`` standard-normal draws of the (seed, kernel_id) stream."""
    if n <= 0:
        return np.zeros(0, dtype=np.float64)
    gen = np.random.Generator(
        np.random.Philox(
            key=np.array(
                [seed & _MASK64, (TAG_VARIATION ^ kernel_id) & _MASK64],
                dtype=np.uint64,
            )
        )
    )
    return gen.standard_normal(n)
