"""p2msim: in-pixel analog MAC co-simulator for DVS event streams."""

from .conv import ConvSpec, SpikeFrame, backend_name, digital_conv_reference, p2m_conv, temporal_rebin
from .events import (
    BinnedFrame,
    DvsEvent,
    EventStream,
    bin_events,
    parse_nmnist,
    read_evt1,
    synth_poisson,
    write_evt1,
)
from .mac import (
    CircuitConfig,
    CircuitVariant,
    Kernel,
    LeakageParams,
    MacState,
    VoltageTrace,
    apply_event,
    calibrate_null,
    derive_leakage,
    evolve,
    fit_transfer_curve,
    ideal_preactivation,
    integrate_window,
    threshold_compare,
)

__version__ = "0.1.0"

__all__ = [
    "BinnedFrame",
    "CircuitConfig",
    "CircuitVariant",
    "ConvSpec",
    "DvsEvent",
    "EventStream",
    "Kernel",
    "LeakageParams",
    "MacState",
    "SpikeFrame",
    "VoltageTrace",
    "apply_event",
    "backend_name",
    "bin_events",
    "calibrate_null",
    "derive_leakage",
    "digital_conv_reference",
    "evolve",
    "fit_transfer_curve",
    "ideal_preactivation",
    "integrate_window",
    "p2m_conv",
    "parse_nmnist",
    "read_evt1",
    "synth_poisson",
    "temporal_rebin",
    "threshold_compare",
    "write_evt1",
]
