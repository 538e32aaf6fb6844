"""Inference-only spiking CNN backend for layers after the in-pixel conv.

Reference topology: four conv blocks (conv -> folded BN -> LIF ->
maxpool 2) followed by linear -> LIF -> linear. The first block's conv
and activation happen in the pixel array, so this module consumes those
spike frames directly; only the first block's pooling runs here.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagicError,
    InvalidParameterError,
    ShapeMismatchError,
    TruncatedFileError,
)
from .rng import philox

_WEIGHTS_MAGIC = b"P2MW"
_WEIGHTS_VERSION = 1


@dataclass(frozen=True)
class LifParams:
    tau: float = 2.0  # per-step membrane time constant
    v_th: float = 1.0  # spike threshold (hard reset to 0)

    def __post_init__(self) -> None:
        if self.tau < 1.0:
            raise InvalidParameterError("tau must be >= 1")
        if self.v_th <= 0.0:
            raise InvalidParameterError("v_th must be > 0")


@dataclass
class LifState:
    v: np.ndarray  # membrane potentials, zeroed at sequence start

    @staticmethod
    def zeros(shape: tuple[int, ...]) -> "LifState":
        return LifState(np.zeros(shape, dtype=np.float64))


def lif_step(
    state: LifState, x: np.ndarray, params: LifParams
) -> tuple[LifState, np.ndarray]:
    """One LIF update: v += (x - v)/tau, spike at v >= v_th, hard reset."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != state.v.shape:
        raise ShapeMismatchError(
            f"input shape {x.shape} != state shape {state.v.shape}"
        )
    v = state.v + (x - state.v) / params.tau
    spikes = (v >= params.v_th).astype(np.uint8)
    v = np.where(spikes, 0.0, v)
    return LifState(v), spikes


def bn_fold(
    conv_w: np.ndarray,
    conv_b: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    mu: np.ndarray,
    var: np.ndarray,
    eps: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Fold batch-norm into the preceding conv's weights and bias."""
    var = np.asarray(var, dtype=np.float64)
    if np.any(var + eps <= 0):
        raise InvalidParameterError("BN variance + eps must be positive")
    scale = gamma / np.sqrt(var + eps)
    w = conv_w * scale.reshape(-1, *([1] * (conv_w.ndim - 1)))
    b = beta + (conv_b - mu) * scale
    return w, b


def maxpool_spikes(grid: np.ndarray, window: int = 2) -> np.ndarray:
    """Max over window x window blocks; an odd trailing edge is truncated."""
    c, h, w = grid.shape
    h2, w2 = h // window, w // window
    trimmed = grid[:, : h2 * window, : w2 * window]
    blocks = trimmed.reshape(c, h2, window, w2, window)
    return blocks.max(axis=(2, 4))


@dataclass(frozen=True)
class NetworkSpec:
    """Backend topology derived from the first layer's output geometry.

    ``channels[0]`` is the in-pixel layer's filter count; each further
    entry adds a conv block (3x3, pad 1, stride 1) running here.
    """

    input_hw: tuple[int, int]
    channels: tuple[int, ...] = (4, 32, 64, 128)
    hidden: int = 512
    classes: int = 10
    pool: int = 2

    def __post_init__(self) -> None:
        if len(self.channels) < 2:
            raise InvalidParameterError("need at least one backend conv block")
        h, w = self.block_hw(len(self.channels) - 1)
        if h < 1 or w < 1:
            raise ShapeMismatchError(
                f"network collapses to {h}x{w}; fewer blocks or larger input needed"
            )

    def block_hw(self, i: int) -> tuple[int, int]:
        """Spatial dims after block i's pooling (block 0 = in-pixel layer)."""
        h, w = self.input_hw
        for _ in range(i + 1):
            h, w = h // self.pool, w // self.pool
        return h, w

    @property
    def flat_dim(self) -> int:
        h, w = self.block_hw(len(self.channels) - 1)
        return self.channels[-1] * h * w

    def weight_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Ordered tensor name/shape table backing the P2MW bundle."""
        shapes: list[tuple[str, tuple[int, ...]]] = []
        for i in range(1, len(self.channels)):
            c_in, c_out = self.channels[i - 1], self.channels[i]
            shapes += [
                (f"conv{i + 1}.w", (c_out, c_in, 3, 3)),
                (f"conv{i + 1}.b", (c_out,)),
                (f"bn{i + 1}.gamma", (c_out,)),
                (f"bn{i + 1}.beta", (c_out,)),
                (f"bn{i + 1}.mu", (c_out,)),
                (f"bn{i + 1}.var", (c_out,)),
                (f"bn{i + 1}.eps", (1,)),
            ]
        shapes += [
            ("fc1.w", (self.hidden, self.flat_dim)),
            ("fc1.b", (self.hidden,)),
            ("fc2.w", (self.classes, self.hidden)),
            ("fc2.b", (self.classes,)),
        ]
        return shapes


@dataclass
class WeightBundle:
    """Ordered tensors matching NetworkSpec.weight_shapes()."""

    tensors: dict[str, np.ndarray] = field(repr=False)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    @staticmethod
    def random(spec: NetworkSpec, seed: int, gain: float = 1.0) -> "WeightBundle":
        """He-style random init; BN params near identity."""
        gen = philox(seed, 0x574254)
        tensors: dict[str, np.ndarray] = {}
        for name, shape in spec.weight_shapes():
            if name.endswith(".w"):
                fan_in = int(np.prod(shape[1:]))
                tensors[name] = gen.normal(0.0, gain / np.sqrt(fan_in), shape)
            elif name.endswith(".gamma"):
                tensors[name] = np.ones(shape)
            elif name.endswith(".var"):
                tensors[name] = np.ones(shape)
            elif name.endswith(".eps"):
                tensors[name] = np.full(shape, 1e-5)
            else:
                tensors[name] = np.zeros(shape)
        return WeightBundle(tensors)


def save_weights(bundle: WeightBundle, spec: NetworkSpec) -> bytes:
    """P2MW container: magic, u16 version, u32 tensor count, per-tensor
    u32 rank + u32 dims, then all values as little-endian float64."""
    shapes = spec.weight_shapes()
    out = bytearray()
    out += _WEIGHTS_MAGIC
    out += struct.pack("<HI", _WEIGHTS_VERSION, len(shapes))
    for name, shape in shapes:
        t = bundle[name]
        if tuple(t.shape) != shape:
            raise ShapeMismatchError(f"{name}: shape {t.shape}, spec wants {shape}")
        out += struct.pack("<I", t.ndim)
        out += struct.pack(f"<{t.ndim}I", *t.shape)
    for name, _ in shapes:
        out += np.ascontiguousarray(bundle[name], dtype="<f8").tobytes()
    return bytes(out)


def load_weights(data: bytes, spec: NetworkSpec) -> WeightBundle:
    if len(data) < 10:
        raise TruncatedFileError("weight bundle shorter than its header")
    if data[:4] != _WEIGHTS_MAGIC:
        raise BadMagicError(f"bad weight magic {data[:4]!r}")
    version, count = struct.unpack_from("<HI", data, 4)
    if version != _WEIGHTS_VERSION:
        raise InvalidParameterError(f"unsupported weight version {version}")
    shapes = spec.weight_shapes()
    if count != len(shapes):
        raise ShapeMismatchError(
            f"bundle holds {count} tensors, network spec wants {len(shapes)}"
        )
    off = 10
    read_shapes: list[tuple[int, ...]] = []
    for name, want in shapes:
        if off + 4 > len(data):
            raise TruncatedFileError(f"{name}: shape table truncated")
        (rank,) = struct.unpack_from("<I", data, off)
        off += 4
        if off + 4 * rank > len(data):
            raise TruncatedFileError(f"{name}: shape table truncated")
        dims = struct.unpack_from(f"<{rank}I", data, off)
        off += 4 * rank
        if dims != want:
            raise ShapeMismatchError(f"{name}: file shape {dims}, spec wants {want}")
        read_shapes.append(dims)
    tensors: dict[str, np.ndarray] = {}
    for (name, _), dims in zip(shapes, read_shapes):
        n = int(np.prod(dims))
        nbytes = 8 * n
        if off + nbytes > len(data):
            raise TruncatedFileError(f"{name}: value block truncated")
        tensors[name] = (
            np.frombuffer(data[off : off + nbytes], dtype="<f8").reshape(dims).copy()
        )
        off += nbytes
    if off != len(data):
        raise TruncatedFileError(f"{len(data) - off} trailing bytes after values")
    return WeightBundle(tensors)


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, pad: int = 1) -> np.ndarray:
    """Plain cross-correlation, stride 1."""
    if x.shape[0] != w.shape[1]:
        raise ShapeMismatchError(
            f"input has {x.shape[0]} channels, weights want {w.shape[1]}"
        )
    k = w.shape[2]
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
    return np.einsum("cyxuv,fcuv->fyx", windows, w) + b.reshape(-1, 1, 1)


@dataclass
class BackendStats:
    """Per-layer, per-timestep spike counts (layer 0 = in-pixel output)."""

    per_step: np.ndarray  # [timesteps, n_layers] int64

    @property
    def layer_totals(self) -> np.ndarray:
        return self.per_step.sum(axis=0)

    @property
    def timesteps(self) -> int:
        return self.per_step.shape[0]


def run_network(
    input_frames: np.ndarray,
    spec: NetworkSpec,
    weights: WeightBundle,
    lif_params: LifParams,
) -> tuple[np.ndarray, BackendStats]:
    """Propagate [T, C, H, W] first-layer frames through the backend.

    LIF state persists across timesteps; the classification score is the
    accumulated final-linear pre-activation per class.
    """
    frames = np.asarray(input_frames, dtype=np.float64)
    if frames.ndim != 4:
        raise ShapeMismatchError("input frames must be [T, C, H, W]")
    t_steps, c_in, h, w = frames.shape
    if c_in != spec.channels[0] or (h, w) != spec.input_hw:
        raise ShapeMismatchError(
            f"frames are [{c_in}, {h}, {w}], spec wants "
            f"[{spec.channels[0]}, {spec.input_hw[0]}, {spec.input_hw[1]}]"
        )
    n_blocks = len(spec.channels) - 1
    folded = []
    for i in range(1, n_blocks + 1):
        wf, bf = bn_fold(
            weights[f"conv{i + 1}.w"],
            weights[f"conv{i + 1}.b"],
            weights[f"bn{i + 1}.gamma"],
            weights[f"bn{i + 1}.beta"],
            weights[f"bn{i + 1}.mu"],
            weights[f"bn{i + 1}.var"],
            float(weights[f"bn{i + 1}.eps"][0]),
        )
        folded.append((wf, bf))

    conv_states = [
        LifState.zeros((spec.channels[i + 1],) + spec.block_hw(i))
        for i in range(n_blocks)
    ]
    fc_state = LifState.zeros((spec.hidden,))
    logits = np.zeros(spec.classes)
    per_step = np.zeros((t_steps, n_blocks + 2), dtype=np.int64)

    for t in range(t_steps):
        x = maxpool_spikes(frames[t], spec.pool)
        per_step[t, 0] = int(frames[t].sum())
        for i, (wf, bf) in enumerate(folded):
            pre = conv2d(x, wf, bf, pad=1)
            conv_states[i], spikes = lif_step(conv_states[i], pre, lif_params)
            x = maxpool_spikes(spikes, spec.pool)
            per_step[t, i + 1] = int(spikes.sum())
        flat = x.reshape(-1)
        pre = weights["fc1.w"] @ flat + weights["fc1.b"]
        fc_state, fc_spikes = lif_step(fc_state, pre, lif_params)
        per_step[t, n_blocks + 1] = int(fc_spikes.sum())
        logits += weights["fc2.w"] @ fc_spikes + weights["fc2.b"]

    return logits, BackendStats(per_step)
