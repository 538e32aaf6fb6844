"""Tile the pixel array with MAC units: event-driven first-layer conv.

The hot loop lives in a compiled Cython kernel when available, with a
bit-identical pure-Python fallback selected at import (set
``P2M_FORCE_FALLBACK=1`` to force the fallback). Work is split across
threads by contiguous window ranges; every unit's arithmetic is
identical regardless of the split, so results are schedule-independent.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import mac
from .errors import GeometryError, InvalidParameterError, ShapeMismatchError
from .events import BinnedFrame, EventStream, window_count
from .mac import CircuitConfig, Kernel, VoltageTrace, derive_leakage
from .rng import variation_draws

if os.environ.get("P2M_FORCE_FALLBACK") == "1":  # pragma: no cover
    from . import _mac_fallback as _impl

    BACKEND = "fallback"
else:
    try:
        from . import _mac_core as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:  # pragma: no cover
        from . import _mac_fallback as _impl  # type: ignore[no-redef]

        BACKEND = "fallback"


def backend_name() -> str:
    """Which kernel implementation was selected at import."""
    return BACKEND


@dataclass(frozen=True)
class ConvSpec:
    """First-layer convolution geometry; input channels fixed at 2."""

    k: int = 3
    stride: int = 1
    padding: int = 0
    out_channels: int = 4

    def __post_init__(self) -> None:
        if self.k < 1 or self.k % 2 == 0:
            raise InvalidParameterError("kernel size must be odd and >= 1")
        if self.stride < 1:
            raise InvalidParameterError("stride must be >= 1")
        if self.padding < 0:
            raise InvalidParameterError("padding must be >= 0")
        if self.out_channels < 1:
            raise InvalidParameterError("out_channels must be >= 1")

    def out_hw(self, height: int, width: int) -> tuple[int, int]:
        h = (height + 2 * self.padding - self.k) // self.stride + 1
        w = (width + 2 * self.padding - self.k) // self.stride + 1
        if h < 1 or w < 1:
            raise GeometryError(
                f"conv output {h}x{w} not positive for input {height}x{width}"
            )
        return h, w


@dataclass(frozen=True)
class SpikeFrame:
    """Per-window activation map [out_channels, H_out, W_out].

    Binary straight out of the first layer; small non-negative counts
    after temporal rebinning.
    """

    window_index: int
    values: np.ndarray = field(repr=False)


def _check_kernels(kernels: list[Kernel], spec: ConvSpec) -> None:
    if len(kernels) != spec.out_channels:
        raise ShapeMismatchError(
            f"{len(kernels)} kernels for {spec.out_channels} output channels"
        )
    for kn in kernels:
        if kn.k != spec.k:
            raise ShapeMismatchError(
                f"kernel {kn.id} is {kn.k}x{kn.k}, conv spec wants {spec.k}x{spec.k}"
            )


def resolve_threads(threads: int | None) -> int:
    """None -> P2M_THREADS env var -> auto; 0 means auto."""
    if threads is None:
        raw = os.environ.get("P2M_THREADS", "0")
        try:
            threads = int(raw)
        except ValueError:
            raise InvalidParameterError(f"P2M_THREADS={raw!r} is not an integer")
    if threads < 0:
        raise InvalidParameterError("thread count must be >= 0")
    if threads == 0:
        threads = min(os.cpu_count() or 1, 8)
    return threads


def p2m_conv(
    stream: EventStream,
    kernels: list[Kernel],
    spec: ConvSpec,
    circuit: CircuitConfig,
    t_intg_us: int,
    seed: int,
    threads: int | None = None,
    trace_units: list[tuple[int, int, int]] | None = None,
    collect_vpre: bool = False,
):
    """Event-driven analog convolution over all integration windows.

    Returns the list of binary SpikeFrames; with ``trace_units`` given
    (entries (filter, oy, ox)), returns (frames, traces) where traces
    maps each unit to its per-window VoltageTrace list. With
    ``collect_vpre`` returns (frames, vpre-array) instead.
    """
    if t_intg_us <= 0:
        raise InvalidParameterError("t_intg_us must be >= 1")
    _check_kernels(kernels, spec)
    h_out, w_out = spec.out_hw(stream.height, stream.width)
    n_win = window_count(stream.duration_us, t_intg_us)
    n_f = spec.out_channels

    spikes = np.zeros((n_win, n_f, h_out, w_out), dtype=np.uint8)
    vpre = np.zeros((n_win, n_f, h_out, w_out), dtype=np.float64) if collect_vpre else None
    if n_win == 0:
        frames = []
    else:
        boundaries = np.arange(n_win + 1, dtype=np.int64) * t_intg_us
        win_start = np.searchsorted(stream.t, boundaries, side="left").astype(
            np.int64
        )
        max_ev = int(np.max(np.diff(win_start))) if n_win else 0
        if circuit.variation_sigma != 0.0 and max_ev > 0:
            draws = np.stack(
                [variation_draws(seed, kn.id, max_ev) for kn in kernels]
            )
        else:
            draws = np.zeros((n_f, 0), dtype=np.float64)

        weights = np.ascontiguousarray(
            np.stack([kn.weights for kn in kernels]), dtype=np.float64
        )
        leaks = [derive_leakage(kn, circuit) for kn in kernels]
        g_p = np.array([l.g_p for l in leaks])
        g_n = np.array([l.g_n for l in leaks])
        i_null = np.array([l.i_null for l in leaks])

        def run_range(lo: int, hi: int) -> None:
            _impl.run_windows(
                stream.t,
                stream.x,
                stream.y,
                stream.polarity,
                win_start,
                lo,
                hi,
                t_intg_us,
                weights,
                g_p,
                g_n,
                i_null,
                draws,
                circuit.c_k,
                circuit.v_dd,
                circuit.v_precharge,
                circuit.k_step,
                circuit.v_th,
                circuit.variation_sigma,
                1 if circuit.nonlinear_step else 0,
                spec.stride,
                spec.padding,
                h_out,
                w_out,
                spikes,
                vpre,
            )

        n_threads = resolve_threads(threads)
        if n_threads <= 1 or n_win == 1:
            run_range(0, n_win)
        else:
            n_chunks = min(n_threads, n_win)
            edges = np.linspace(0, n_win, n_chunks + 1, dtype=int)
            with ThreadPoolExecutor(max_workers=n_threads) as pool:
                list(
                    pool.map(
                        lambda be: run_range(be[0], be[1]),
                        zip(edges[:-1], edges[1:]),
                    )
                )
        frames = [SpikeFrame(w, spikes[w]) for w in range(n_win)]

    if trace_units is not None:
        traces = {
            unit: _unit_traces(stream, kernels, spec, circuit, t_intg_us, seed, unit)
            for unit in trace_units
        }
        return frames, traces
    if collect_vpre:
        return frames, vpre
    return frames


def unit_events(
    stream: EventStream,
    spec: ConvSpec,
    oy: int,
    ox: int,
    w_lo_us: int,
    w_hi_us: int,
) -> list[tuple[int, int, tuple[int, int]]]:
    """Events of one receptive field within [w_lo_us, w_hi_us), as
    (t, polarity, (tap_row, tap_col)) ready for integrate_window."""
    y0 = oy * spec.stride - spec.padding
    x0 = ox * spec.stride - spec.padding
    lo = int(np.searchsorted(stream.t, w_lo_us, side="left"))
    hi = int(np.searchsorted(stream.t, w_hi_us, side="left"))
    out = []
    for i in range(lo, hi):
        ty = int(stream.y[i]) - y0
        tx = int(stream.x[i]) - x0
        if 0 <= ty < spec.k and 0 <= tx < spec.k:
            out.append((int(stream.t[i]), int(stream.polarity[i]), (ty, tx)))
    return out


def _unit_traces(
    stream: EventStream,
    kernels: list[Kernel],
    spec: ConvSpec,
    circuit: CircuitConfig,
    t_intg_us: int,
    seed: int,
    unit: tuple[int, int, int],
) -> list[VoltageTrace]:
    f, oy, ox = unit
    n_win = window_count(stream.duration_us, t_intg_us)
    traces = []
    for w in range(n_win):
        evs = unit_events(
            stream, spec, oy, ox, w * t_intg_us, (w + 1) * t_intg_us
        )
        _, trace = mac.integrate_window(
            kernels[f], evs, w * t_intg_us, t_intg_us, circuit, seed
        )
        traces.append(trace)
    return traces


def digital_conv_reference(
    frames: list[BinnedFrame] | np.ndarray,
    kernels: list[Kernel],
    spec: ConvSpec,
) -> list[np.ndarray]:
    """Multi-bit digital first layer: 2-D cross-correlation of binned
    counts with kernel weights, summed over both polarity channels."""
    _check_kernels(kernels, spec)
    if isinstance(frames, np.ndarray):
        counts = frames
    else:
        counts = np.stack([f.counts for f in frames]) if frames else np.zeros(
            (0, 2, spec.k, spec.k)
        )
    if counts.ndim != 4 or counts.shape[1] != 2:
        raise ShapeMismatchError("binned counts must have shape [n, 2, H, W]")
    weights = np.stack([kn.weights for kn in kernels])  # [F, 2, k, k]
    out = []
    for n in range(counts.shape[0]):
        grid = counts[n].astype(np.float64)
        if spec.padding:
            grid = np.pad(
                grid,
                ((0, 0), (spec.padding, spec.padding), (spec.padding, spec.padding)),
            )
        windows = np.lib.stride_tricks.sliding_window_view(
            grid, (spec.k, spec.k), axis=(1, 2)
        )[:, :: spec.stride, :: spec.stride]
        out.append(np.einsum("pyxuv,fpuv->fyx", windows, weights))
    return out


def temporal_rebin(
    frames: list[SpikeFrame], ratio: int, binary: bool = False
) -> list[SpikeFrame]:
    """Reduce groups of ``ratio`` consecutive frames into coarse frames.

    Count mode (default) sums element-wise and conserves total spikes;
    binary mode ORs instead. A trailing partial group reduces over what
    remains.
    """
    if ratio < 1:
        raise InvalidParameterError("rebin ratio must be >= 1")
    out = []
    for start in range(0, len(frames), ratio):
        group = frames[start : start + ratio]
        acc = np.sum([g.values.astype(np.int64) for g in group], axis=0)
        if binary:
            acc = (acc > 0).astype(np.uint8)
        out.append(SpikeFrame(start // ratio, acc))
    return out


def frames_to_array(frames: list[SpikeFrame]) -> np.ndarray:
    if not frames:
        return np.zeros((0, 0, 0, 0), dtype=np.int64)
    return np.stack([f.values.astype(np.int64) for f in frames])


def spike_frames_csv(frames: list[SpikeFrame]) -> str:
    """Sparse CSV dump: a dims header line, then only nonzero entries."""
    if frames:
        c, h, w = frames[0].values.shape
    else:
        c = h = w = 0
    lines = [f"# dims windows={len(frames)} channels={c} height={h} width={w}"]
    lines.append("window,channel,y,x,value")
    for fr in frames:
        ch, yy, xx = np.nonzero(fr.values)
        vals = fr.values[ch, yy, xx]
        for j in range(len(ch)):
            lines.append(
                f"{fr.window_index},{int(ch[j])},{int(yy[j])},{int(xx[j])},{int(vals[j])}"
            )
    return "\n".join(lines) + "\n"
