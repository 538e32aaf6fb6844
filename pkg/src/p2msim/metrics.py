"""Bandwidth and backend-energy accounting from spike statistics.

Energy constants are relative units (ratios drive every reported
number); reports echo the constants they were computed with.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .errors import BandwidthUndefinedError, InvalidParameterError, ShapeMismatchError


@dataclass(frozen=True)
class SpikeStats:
    """Counts feeding the bandwidth/energy formulas.

    ``layer_spikes[0]`` is the in-pixel layer's output spike total; the
    MAC invocation count is windows x filters x output pixels.
    """

    input_events: int
    layer_spikes: tuple[int, ...]
    mac_invocations: int
    timesteps: int

    def __post_init__(self) -> None:
        if self.input_events < 0 or self.mac_invocations < 0 or self.timesteps < 0:
            raise InvalidParameterError("counts must be >= 0")
        if not self.layer_spikes:
            raise InvalidParameterError("need at least the first-layer spike count")
        if any(s < 0 for s in self.layer_spikes):
            raise InvalidParameterError("spike counts must be >= 0")


class EnergyMode(Enum):
    DIGITAL = "digital"
    P2M = "p2m"


@dataclass(frozen=True)
class EnergyModelParams:
    """Per-operation energy constants (relative units).

    fanout[l] is the accumulate fan-out of layer l+2 (aligned with
    ``layer_spikes[1:]``); a scalar is broadcast at construction.
    """

    e_mac_digital: float = 5.0  # per first-layer multi-bit MAC
    e_ac: float = 1.0  # per spike-triggered accumulate
    e_analog_window: float = 0.5  # per in-pixel unit per window
    e_tx: float = 1.0  # per first-layer spike sent off-sensor
    fanout: tuple[float, ...] | float = 1.0

    def __post_init__(self) -> None:
        for v in (self.e_mac_digital, self.e_ac, self.e_analog_window, self.e_tx):
            if v < 0:
                raise InvalidParameterError("energy constants must be >= 0")

    def fanout_for(self, n_backend_layers: int) -> tuple[float, ...]:
        if isinstance(self.fanout, (int, float)):
            return (float(self.fanout),) * n_backend_layers
        if len(self.fanout) != n_backend_layers:
            raise ShapeMismatchError(
                f"fanout has {len(self.fanout)} entries for "
                f"{n_backend_layers} backend layers"
            )
        return tuple(float(f) for f in self.fanout)


def bandwidth_ratio(stats: SpikeStats) -> float:
    """First-layer output spikes per raw input event."""
    if stats.input_events == 0:
        raise BandwidthUndefinedError("bandwidth undefined for zero input events")
    return stats.layer_spikes[0] / stats.input_events


def backend_energy(
    stats: SpikeStats, params: EnergyModelParams, mode: EnergyMode
) -> float:
    """Backend compute energy under the digital or in-pixel first layer."""
    fanout = params.fanout_for(len(stats.layer_spikes) - 1)
    acc = sum(
        s * f * params.e_ac for s, f in zip(stats.layer_spikes[1:], fanout)
    )
    if mode is EnergyMode.DIGITAL:
        return stats.mac_invocations * params.e_mac_digital + acc
    return (
        stats.mac_invocations * params.e_analog_window
        + stats.layer_spikes[0] * params.e_tx
        + acc
    )


@dataclass(frozen=True)
class Report:
    """One run's metrics, optionally with ratios against a baseline run."""

    bandwidth: float
    energy_digital: float
    energy_p2m: float
    params: EnergyModelParams
    ratios: dict[str, float] = field(default_factory=dict)

    @property
    def improvement_factor(self) -> float:
        """DIGITAL / P2M energy: > 1 means the in-pixel path wins."""
        return self.energy_digital / self.energy_p2m

    @staticmethod
    def from_stats(stats: SpikeStats, params: EnergyModelParams) -> "Report":
        return Report(
            bandwidth=bandwidth_ratio(stats),
            energy_digital=backend_energy(stats, params, EnergyMode.DIGITAL),
            energy_p2m=backend_energy(stats, params, EnergyMode.P2M),
            params=params,
        )


def normalize(report: Report, baseline: Report) -> Report:
    """Element-wise ratios of a report against a baseline report."""
    for name, v in (
        ("bandwidth", baseline.bandwidth),
        ("energy_digital", baseline.energy_digital),
        ("energy_p2m", baseline.energy_p2m),
    ):
        if v <= 0:
            raise InvalidParameterError(f"baseline {name} must be > 0")
    ratios = {
        "bandwidth": report.bandwidth / baseline.bandwidth,
        "energy_digital": report.energy_digital / baseline.energy_digital,
        "energy_p2m": report.energy_p2m / baseline.energy_p2m,
    }
    return Report(
        bandwidth=report.bandwidth,
        energy_digital=report.energy_digital,
        energy_p2m=report.energy_p2m,
        params=report.params,
        ratios=ratios,
    )


def report_text(report: Report, extra: dict[str, object] | None = None) -> str:
    """Flat key=value serialization; echoes the energy constants used."""
    fanout = report.params.fanout
    if isinstance(fanout, tuple):
        fanout_s = ",".join(_fmt(f) for f in fanout)
    else:
        fanout_s = _fmt(fanout)
    lines = [
        f"bandwidth={_fmt(report.bandwidth)}",
        f"energy_digital={_fmt(report.energy_digital)}",
        f"energy_p2m={_fmt(report.energy_p2m)}",
        f"improvement_factor={_fmt(report.improvement_factor)}",
        f"e_mac_digital={_fmt(report.params.e_mac_digital)}",
        f"e_ac={_fmt(report.params.e_ac)}",
        f"e_analog_window={_fmt(report.params.e_analog_window)}",
        f"e_tx={_fmt(report.params.e_tx)}",
        f"fanout={fanout_s}",
    ]
    for k, v in (report.ratios or {}).items():
        lines.append(f"ratio_{k}={_fmt(v)}")
    for k, v in (extra or {}).items():
        lines.append(f"{k}={_fmt(v) if isinstance(v, float) else v}")
    return "\n".join(lines) + "\n"


def _fmt(x: float) -> str:
    """Canonical 12-significant-digit float format shared by all outputs."""
    return f"{x:.12g}"
