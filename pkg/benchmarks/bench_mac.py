#!/usr/bin/env python3
"""Benchmark the compiled MAC kernel against the pure-Python fallback.

Both implementations are run on the same stimulus; outputs are checked
bit-for-bit before timings are reported.

Usage: python benchmarks/bench_mac.py [--events N] [--repeat R]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from p2msim import _mac_fallback
from p2msim.conv import ConvSpec
from p2msim.events import synth_poisson, window_count
from p2msim.mac import CircuitConfig, derive_leakage, random_kernels
from p2msim.rng import variation_draws

try:
    from p2msim import _mac_core
except ImportError:
    _mac_core = None


def prepare(n_events_target: int, seed: int = 42):
    width = height = 24
    duration_us = 500_000
    t_intg_us = 10_000
    rate = n_events_target / (2 * width * height * duration_us * 1e-6)
    stream = synth_poisson(np.full((2, height, width), rate), duration_us, seed)
    spec = ConvSpec(out_channels=4)
    circuit = CircuitConfig(variation_sigma=0.03)
    kernels = random_kernels(4, 3, 0.4, seed)

    n_win = window_count(stream.duration_us, t_intg_us)
    h_out, w_out = spec.out_hw(height, width)
    boundaries = np.arange(n_win + 1, dtype=np.int64) * t_intg_us
    win_start = np.searchsorted(stream.t, boundaries).astype(np.int64)
    max_ev = int(np.max(np.diff(win_start)))
    draws = np.stack([variation_draws(seed, k.id, max_ev) for k in kernels])
    weights = np.ascontiguousarray(np.stack([k.weights for k in kernels]))
    leaks = [derive_leakage(k, circuit) for k in kernels]
    args = (
        stream.t, stream.x, stream.y, stream.polarity,
        win_start, 0, n_win, t_intg_us,
        weights,
        np.array([l.g_p for l in leaks]),
        np.array([l.g_n for l in leaks]),
        np.array([l.i_null for l in leaks]),
        draws,
        circuit.c_k, circuit.v_dd, circuit.v_precharge, circuit.k_step,
        circuit.v_th, circuit.variation_sigma, 0,
        spec.stride, spec.padding, h_out, w_out,
    )
    shape = (n_win, 4, h_out, w_out)
    return stream, args, shape


def run(impl, args, shape):
    spikes = np.zeros(shape, dtype=np.uint8)
    impl.run_windows(*args, spikes, None)
    return spikes


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--events", type=int, default=150_000)
    parser.add_argument("--repeat", type=int, default=3)
    opts = parser.parse_args()

    stream, args, shape = prepare(opts.events)
    print(f"stimulus: {len(stream)} events, {shape[0]} windows, "
          f"{shape[1]}x{shape[2]}x{shape[3]} units")

    ref = run(_mac_fallback, args, shape)
    if _mac_core is not None:
        assert np.array_equal(run(_mac_core, args, shape), ref), "backends disagree"
        print("compiled and fallback outputs are bit-identical")

    results = {}
    for name, impl in (("fallback", _mac_fallback), ("compiled", _mac_core)):
        if impl is None:
            print(f"{name:>9}: not available")
            continue
        best = min(
            _timed(lambda: run(impl, args, shape)) for _ in range(opts.repeat)
        )
        results[name] = best
        print(f"{name:>9}: {best * 1e3:9.1f} ms   "
              f"({len(stream) / best:,.0f} events/s)")
    if len(results) == 2:
        print(f"  speedup: {results['fallback'] / results['compiled']:.1f}x")


def _timed(fn) -> float:
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


if __name__ == "__main__":
    main()
