"""DVS event streams: parsing, synthesis, and integration-window binning.

Events are kept columnar (numpy arrays) inside :class:`EventStream`;
:class:`DvsEvent` is the scalar view used at API edges and in tests.

Supported formats:

NMNIST (5 bytes per event, big-endian bit layout within the record)::

    byte 0        x address
    byte 1        y address
    byte 2 bit 7  polarity (1 = ON, 0 = OFF)
    byte 2 bits 6..0, bytes 3..4   23-bit timestamp in microseconds

EVT1 (little-endian, this package's native container)::

    header: magic "EVT1", width u16, height u16, event count u64
    event (16 bytes): t_us u64, x u16, y u16, polarity u8, 3 zero bytes
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    BadMagicError,
    GeometryError,
    InvalidParameterError,
    MalformedFileError,
    TruncatedFileError,
    UnsortedEventsError,
)
from .rng import TAG_SYNTH, philox

log = logging.getLogger(__name__)

OFF = 0
ON = 1

NMNIST_WIDTH = 34
NMNIST_HEIGHT = 34

_EVT1_MAGIC = b"EVT1"
_EVT1_HEADER = np.dtype(
    [("magic", "S4"), ("width", "<u2"), ("height", "<u2"), ("count", "<u8")]
)
_EVT1_EVENT = np.dtype(
    [("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1"), ("pad", "V3")]
)

_T_MAX = (1 << 63) - 1  # timestamps must fit in 63 bits


@dataclass(frozen=True)
class DvsEvent:
    """One ON/OFF pixel event, timestamp in microseconds."""

    t: int
    x: int
    y: int
    polarity: int


@dataclass(frozen=True, eq=False)
class EventStream:
    """Time-sorted event record over a fixed sensor geometry.

    All event times satisfy ``0 <= t < duration_us`` (half-open stream
    extent), which makes ``ceil(duration / t_intg)`` cover every event.
    """

    width: int
    height: int
    t: np.ndarray  # int64 µs, non-decreasing
    x: np.ndarray  # int32
    y: np.ndarray  # int32
    polarity: np.ndarray  # uint8, 0=OFF 1=ON
    duration_us: int

    def __post_init__(self) -> None:
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.polarity) == n):
            raise InvalidParameterError("event arrays must share one length")
        if self.width <= 0 or self.height <= 0:
            raise GeometryError("sensor geometry must be positive")
        if self.duration_us < 0:
            raise InvalidParameterError("duration_us must be >= 0")
        if n == 0:
            return
        if self.t[0] < 0 or self.t[-1] > _T_MAX:
            raise InvalidParameterError("timestamps must fit in 63 bits")
        if np.any(np.diff(self.t) < 0):
            raise UnsortedEventsError("event timestamps must be non-decreasing")
        if int(self.t[-1]) >= self.duration_us:
            raise InvalidParameterError("all event times must be < duration_us")
        if np.any(self.x >= self.width) or np.any(self.y >= self.height):
            raise GeometryError("event outside sensor geometry")
        if np.any(self.x < 0) or np.any(self.y < 0):
            raise GeometryError("negative event coordinates")
        if np.any(self.polarity > 1):
            raise InvalidParameterError("polarity must be 0 or 1")

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[DvsEvent]:
        for i in range(len(self.t)):
            yield self.event(i)

    def event(self, i: int) -> DvsEvent:
        return DvsEvent(
            int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.polarity[i])
        )

    @property
    def events(self) -> list[DvsEvent]:
        """Scalar event views (materializes a list; columnar access is cheaper)."""
        return list(self)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.duration_us == other.duration_us
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.polarity, other.polarity)
        )

    @staticmethod
    def empty(width: int, height: int, duration_us: int = 0) -> "EventStream":
        z = np.zeros(0, dtype=np.int64)
        return EventStream(
            width,
            height,
            z,
            z.astype(np.int32),
            z.astype(np.int32),
            z.astype(np.uint8),
            duration_us,
        )

    @staticmethod
    def from_arrays(
        width: int,
        height: int,
        t: np.ndarray,
        x: np.ndarray,
        y: np.ndarray,
        polarity: np.ndarray,
        duration_us: int | None = None,
        sort: bool = False,
    ) -> "EventStream":
        """Build a stream; with ``sort=True`` applies a stable time sort.

        ``duration_us=None`` picks the canonical extent ``t.max() + 1``
        (0 for an empty stream), the value EVT1 round-trips reproduce.
        """
        t = np.asarray(t, dtype=np.int64)
        x = np.asarray(x, dtype=np.int32)
        y = np.asarray(y, dtype=np.int32)
        polarity = np.asarray(polarity, dtype=np.uint8)
        if sort and len(t) > 1 and np.any(np.diff(t) < 0):
            order = np.argsort(t, kind="stable")
            t, x, y, polarity = t[order], x[order], y[order], polarity[order]
        if duration_us is None:
            duration_us = int(t[-1]) + 1 if len(t) else 0
        return EventStream(width, height, t, x, y, polarity, duration_us)

    @staticmethod
    def from_events(
        width: int,
        height: int,
        events: Sequence[DvsEvent],
        duration_us: int | None = None,
    ) -> "EventStream":
        t = np.array([e.t for e in events], dtype=np.int64)
        x = np.array([e.x for e in events], dtype=np.int32)
        y = np.array([e.y for e in events], dtype=np.int32)
        p = np.array([e.polarity for e in events], dtype=np.uint8)
        return EventStream.from_arrays(
            width, height, t, x, y, p, duration_us, sort=True
        )


@dataclass(frozen=True)
class BinnedFrame:
    """Per-window event counts, shape [polarity(2), height, width]."""

    window_index: int
    counts: np.ndarray = field(repr=False)


def parse_nmnist(data: bytes) -> EventStream:
    """Decode NMNIST 5-byte records into a 34x34 stream.

    Unsorted input is stably sorted (capture jitter); 23-bit timestamp
    wrap-around is not unwrapped, only counted and logged.
    """
    if len(data) % 5 != 0:
        raise MalformedFileError(
            f"NMNIST byte length {len(data)} is not a multiple of 5"
        )
    raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, 5)
    if raw.shape[0] == 0:
        return EventStream.empty(NMNIST_WIDTH, NMNIST_HEIGHT)
    x = raw[:, 0].astype(np.int32)
    y = raw[:, 1].astype(np.int32)
    bad = np.nonzero((x >= NMNIST_WIDTH) | (y >= NMNIST_HEIGHT))[0]
    if bad.size:
        i = int(bad[0])
        raise GeometryError(
            f"NMNIST record {i}: ({int(x[i])}, {int(y[i])}) outside 34x34"
        )
    polarity = (raw[:, 2] >> 7).astype(np.uint8)
    t = (
        (raw[:, 2].astype(np.int64) & 0x7F) << 16
        | raw[:, 3].astype(np.int64) << 8
        | raw[:, 4].astype(np.int64)
    )
    regressions = int(np.sum(np.diff(t) < 0))
    if regressions:
        log.warning(
            "NMNIST input has %d timestamp regressions (possible 23-bit wrap); "
            "applying stable sort",
            regressions,
        )
    return EventStream.from_arrays(
        NMNIST_WIDTH, NMNIST_HEIGHT, t, x, y, polarity, sort=True
    )


def write_evt1(stream: EventStream) -> bytes:
    """Serialize to the EVT1 container (see module docstring for layout)."""
    header = np.zeros(1, dtype=_EVT1_HEADER)
    header["magic"] = _EVT1_MAGIC
    header["width"] = stream.width
    header["height"] = stream.height
    header["count"] = len(stream)
    body = np.zeros(len(stream), dtype=_EVT1_EVENT)
    body["t"] = stream.t
    body["x"] = stream.x
    body["y"] = stream.y
    body["p"] = stream.polarity
    return header.tobytes() + body.tobytes()


def read_evt1(data: bytes) -> EventStream:
    """Parse an EVT1 container; duration is derived as last event time + 1."""
    if len(data) < _EVT1_HEADER.itemsize:
        raise TruncatedFileError("EVT1 input shorter than the 16-byte header")
    header = np.frombuffer(data[: _EVT1_HEADER.itemsize], dtype=_EVT1_HEADER)[0]
    if bytes(header["magic"]) != _EVT1_MAGIC:
        raise BadMagicError(f"bad magic {bytes(header['magic'])!r}")
    count = int(header["count"])
    body = data[_EVT1_HEADER.itemsize :]
    if len(body) != count * _EVT1_EVENT.itemsize:
        raise TruncatedFileError(
            f"EVT1 body holds {len(body)} bytes, expected {count * 16}"
        )
    rec = np.frombuffer(body, dtype=_EVT1_EVENT)
    t = rec["t"]
    if count and int(t.max()) > _T_MAX:
        raise MalformedFileError("EVT1 timestamp exceeds 63 bits")
    t = t.astype(np.int64)
    if count > 1 and np.any(np.diff(t) < 0):
        raise UnsortedEventsError("EVT1 events must be sorted by timestamp")
    width, height = int(header["width"]), int(header["height"])
    x = rec["x"].astype(np.int32)
    y = rec["y"].astype(np.int32)
    if count and (int(x.max()) >= width or int(y.max()) >= height):
        raise GeometryError("EVT1 event outside declared geometry")
    p = rec["p"].astype(np.uint8)
    if count and int(p.max()) > 1:
        raise MalformedFileError("EVT1 polarity byte must be 0 or 1")
    return EventStream.from_arrays(width, height, t, x, y, p)


def window_count(duration_us: int, t_intg_us: int) -> int:
    if t_intg_us <= 0:
        raise InvalidParameterError("t_intg_us must be >= 1")
    return math.ceil(duration_us / t_intg_us)


def bin_events_array(stream: EventStream, t_intg_us: int) -> np.ndarray:
    """Counts array of shape [n_windows, 2, height, width].

    Event at time t lands in window floor(t / t_intg_us); windows are
    half-open, so boundary events belong to the later window.
    """
    n_win = window_count(stream.duration_us, t_intg_us)
    shape = (n_win, 2, stream.height, stream.width)
    if len(stream) == 0:
        return np.zeros(shape, dtype=np.int64)
    win = stream.t // t_intg_us
    flat = (
        (win * 2 + stream.polarity) * stream.height + stream.y
    ) * stream.width + stream.x
    counts = np.bincount(flat, minlength=n_win * 2 * stream.height * stream.width)
    return counts.reshape(shape).astype(np.int64)


def bin_events(stream: EventStream, t_intg_us: int) -> list[BinnedFrame]:
    counts = bin_events_array(stream, t_intg_us)
    return [BinnedFrame(i, counts[i]) for i in range(counts.shape[0])]


def synth_poisson(
    rate_map: np.ndarray, duration_us: int, seed: int
) -> EventStream:
    """Poisson stream with per-pixel-per-polarity rates in events/second.

    ``rate_map`` has shape [2, height, width]. Deterministic per seed.
    """
    rate_map = np.asarray(rate_map, dtype=np.float64)
    if rate_map.ndim != 3 or rate_map.shape[0] != 2:
        raise InvalidParameterError("rate_map must have shape [2, H, W]")
    if np.any(rate_map < 0) or not np.all(np.isfinite(rate_map)):
        raise InvalidParameterError("rates must be finite and >= 0")
    if duration_us < 0:
        raise InvalidParameterError("duration_us must be >= 0")
    _, height, width = rate_map.shape
    gen = philox(seed, TAG_SYNTH)
    counts = gen.poisson(rate_map * (duration_us * 1e-6))
    total = int(counts.sum())
    if total == 0:
        return EventStream.empty(width, height, duration_us)
    pol, yy, xx = np.nonzero(counts)
    reps = counts[pol, yy, xx]
    p = np.repeat(pol.astype(np.uint8), reps)
    y = np.repeat(yy.astype(np.int32), reps)
    x = np.repeat(xx.astype(np.int32), reps)
    t = gen.integers(0, duration_us, size=total, dtype=np.int64)
    order = np.argsort(t, kind="stable")
    return EventStream(
        width, height, t[order], x[order], y[order], p[order], duration_us
    )


def synth_pulsed(
    rate_map: np.ndarray,
    duration_us: int,
    period_us: int,
    duty: float,
    seed: int,
) -> EventStream:
    """Burst-modulated Poisson stream: rates apply only inside the first
    ``duty`` fraction of each period, zero elsewhere.

    Mirrors recordings with quiet gaps (saccade-style capture); a window
    that ends inside a gap sees the tail of the preceding burst only.
    """
    if not 0.0 < duty <= 1.0:
        raise InvalidParameterError("duty must lie in (0, 1]")
    if period_us <= 0:
        raise InvalidParameterError("period_us must be >= 1")
    rate_map = np.asarray(rate_map, dtype=np.float64)
    _, height, width = rate_map.shape
    burst_us = max(1, int(round(period_us * duty)))
    parts: list[EventStream] = []
    offsets: list[int] = []
    start = 0
    k = 0
    while start < duration_us:
        seg = min(burst_us, duration_us - start)
        parts.append(synth_poisson(rate_map, seg, seed ^ (0x9E3779B9 * (k + 1))))
        offsets.append(start)
        start += period_us
        k += 1
    if not parts:
        return EventStream.empty(width, height, duration_us)
    t = np.concatenate([p.t + off for p, off in zip(parts, offsets)])
    x = np.concatenate([p.x for p in parts])
    y = np.concatenate([p.y for p in parts])
    pol = np.concatenate([p.polarity for p in parts])
    return EventStream.from_arrays(
        width, height, t, x, y, pol, duration_us, sort=True
    )
