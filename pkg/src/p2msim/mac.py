"""Per-kernel analog MAC unit: charge steps, leakage, threshold, curve fit.

The unit is a single capacitor node C_K driven by weight transistors.
Positive weights pull the node toward V_DD (pFET side), negative weights
toward ground (nFET side); both sides leak with conductance proportional
to the summed absolute weight of that sign. Circuit variants:

    IDEAL     no leakage at all
    CONFIG_A  bare unit, full leakage conductances
    CONFIG_B  isolation switch in the leakage path, conductances scaled
              by the off-attenuation alpha_sw
    CONFIG_C  CONFIG_B plus a constant nullifying current chosen so the
              net leakage current vanishes at the precharge voltage

Between events the node voltage follows the closed-form RC solution;
each event deposits an instantaneous step k_step * weight (optionally
headroom-scaled in nonlinear mode, optionally jittered by a per-event
process-variation draw).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from ._mac_fallback import apply_w, evolve_v
from .errors import (
    ContractViolationError,
    DegenerateFitError,
    InvalidParameterError,
    MalformedFileError,
    ShapeMismatchError,
)
from .rng import philox, variation_draws


class CircuitVariant(Enum):
    IDEAL = "ideal"
    CONFIG_A = "config_a"
    CONFIG_B = "config_b"
    CONFIG_C = "config_c"

    @staticmethod
    def parse(name: str) -> "CircuitVariant":
        try:
            return CircuitVariant(name.strip().lower())
        except ValueError:
            raise InvalidParameterError(f"unknown circuit variant {name!r}") from None


@dataclass(frozen=True)
class CircuitConfig:
    """Physical and behavioral parameters of one MAC unit.

    Defaults are tuned so that, with trained-scale 3x3 kernels, CONFIG_A
    saturates well inside 10 ms while CONFIG_C holds a 10 ms window close
    to ideal and degrades by 100 ms.
    """

    variant: CircuitVariant = CircuitVariant.CONFIG_C
    c_k: float = 10e-15  # kernel capacitor, farads
    v_dd: float = 0.8  # supply, volts
    v_precharge: float = 0.4  # reset voltage at window start
    k_step: float = 0.015  # volts per unit |weight| per event
    g_leak: float = 50e-12  # siemens per unit |weight|
    alpha_sw: float = 1e-3  # isolation-switch off attenuation
    v_th: float = 0.06  # activation threshold above v_precharge
    nonlinear_step: bool = False
    variation_sigma: float = 0.03  # relative weight std-dev per event

    def __post_init__(self) -> None:
        if self.c_k <= 0:
            raise InvalidParameterError("c_k must be > 0")
        if not 0.0 <= self.v_precharge <= self.v_dd:
            raise InvalidParameterError("need 0 <= v_precharge <= v_dd")
        if self.k_step <= 0:
            raise InvalidParameterError("k_step must be > 0")
        if self.g_leak < 0:
            raise InvalidParameterError("g_leak must be >= 0")
        if not 0.0 < self.alpha_sw <= 1.0:
            raise InvalidParameterError("alpha_sw must lie in (0, 1]")
        if self.v_th <= 0:
            raise InvalidParameterError("v_th must be > 0")
        if self.variation_sigma < 0:
            raise InvalidParameterError("variation_sigma must be >= 0")

    def with_variant(self, variant: CircuitVariant) -> "CircuitConfig":
        return replace(self, variant=variant)


@dataclass(frozen=True)
class Kernel:
    """One CNN filter mapped to transistor strengths, [polarity(2), k, k]."""

    weights: np.ndarray = field(repr=False)
    id: int = 0

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 3 or w.shape[0] != 2 or w.shape[1] != w.shape[2]:
            raise ShapeMismatchError("kernel weights must have shape [2, k, k]")
        if np.any(np.abs(w) > 1.0) or not np.all(np.isfinite(w)):
            raise InvalidParameterError("kernel weights must lie in [-1, 1]")
        object.__setattr__(self, "weights", w)

    @property
    def k(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class LeakageParams:
    """Sign-split leakage conductances plus the nullifying current."""

    g_p: float  # pull-up toward V_DD, siemens
    g_n: float  # pull-down toward ground, siemens
    i_null: float  # constant current, amperes (CONFIG_C only)


@dataclass(frozen=True)
class MacState:
    v: float  # capacitor voltage, volts
    t_us: float  # last-update time, microseconds


@dataclass(frozen=True)
class VoltageTrace:
    """(t_us, v) samples; includes every event time and the window end."""

    samples: tuple[tuple[float, float], ...]

    def times(self) -> np.ndarray:
        return np.array([s[0] for s in self.samples])

    def voltages(self) -> np.ndarray:
        return np.array([s[1] for s in self.samples])


def derive_leakage(kernel: Kernel, config: CircuitConfig) -> LeakageParams:
    """Map a kernel's weights onto the variant's leakage parameters."""
    w = kernel.weights
    g_p0 = config.g_leak * float(np.sum(w[w > 0]))
    g_n0 = config.g_leak * float(-np.sum(w[w < 0]))
    v = config.variant
    if v is CircuitVariant.IDEAL:
        return LeakageParams(0.0, 0.0, 0.0)
    if v is CircuitVariant.CONFIG_A:
        return LeakageParams(g_p0, g_n0, 0.0)
    g_p = config.alpha_sw * g_p0
    g_n = config.alpha_sw * g_n0
    if v is CircuitVariant.CONFIG_B:
        return LeakageParams(g_p, g_n, 0.0)
    return LeakageParams(g_p, g_n, calibrate_null(g_p, g_n, config))


def calibrate_null(g_p: float, g_n: float, config: CircuitConfig) -> float:
    """Constant current that cancels net leakage at the precharge voltage.

    With this current the node's equilibrium sits at v_precharge, so an
    idle calibrated unit holds its reset value.
    """
    return -(g_p * (config.v_dd - config.v_precharge) - g_n * config.v_precharge)


def evolve(
    state: MacState, dt_us: float, leak: LeakageParams, config: CircuitConfig
) -> MacState:
    """Relax the node for dt_us with no events (closed-form RC solution)."""
    if dt_us < 0:
        raise InvalidParameterError("dt_us must be >= 0")
    v = evolve_v(
        state.v, dt_us, leak.g_p, leak.g_n, leak.i_null, config.c_k, config.v_dd
    )
    return MacState(v, state.t_us + dt_us)


def apply_event(
    state: MacState, weight: float, config: CircuitConfig, rng_draw: float
) -> MacState:
    """Deposit one event's charge step; time is unchanged."""
    if abs(weight) > 1.0:
        raise InvalidParameterError("|weight| must be <= 1")
    v = apply_w(
        state.v,
        weight,
        rng_draw,
        config.variation_sigma,
        config.k_step,
        config.nonlinear_step,
        config.v_dd,
        config.v_precharge,
    )
    return MacState(v, state.t_us)


def threshold_compare(v_pre: float, config: CircuitConfig) -> int:
    """1 iff the pre-activation reaches v_precharge + v_th (tie spikes)."""
    return 1 if v_pre >= config.v_precharge + config.v_th else 0


def integrate_window(
    kernel: Kernel,
    local_events: Sequence[tuple[int, int, tuple[int, int]]],
    t_start_us: int,
    t_intg_us: int,
    config: CircuitConfig,
    seed: int,
    extra_sample_us: int | None = None,
) -> tuple[float, VoltageTrace]:
    """Run one MAC unit over one integration window.

    ``local_events`` is a time-sorted sequence of (t_us, polarity,
    (tap_row, tap_col)) already routed to this unit. The unit starts at
    v_precharge. Per-event variation draws are the i-th standard normals
    of the (seed, kernel.id) stream, independent of any batching.
    """
    if t_intg_us <= 0:
        raise InvalidParameterError("t_intg_us must be >= 1")
    t_end = t_start_us + t_intg_us
    leak = derive_leakage(kernel, config)
    n = len(local_events)
    draws = (
        variation_draws(seed, kernel.id, n)
        if config.variation_sigma != 0.0
        else np.zeros(n)
    )

    state = MacState(config.v_precharge, float(t_start_us))
    samples: list[tuple[float, float]] = [(float(t_start_us), state.v)]
    grid = _sample_grid(t_start_us, t_end, extra_sample_us)
    gi = 0
    prev_t = t_start_us
    for i, (t_ev, pol, (ty, tx)) in enumerate(local_events):
        if t_ev < prev_t:
            raise ContractViolationError("local events must be time-sorted")
        if not t_start_us <= t_ev < t_end:
            raise ContractViolationError(
                f"event at {t_ev} outside window [{t_start_us}, {t_end})"
            )
        while gi < len(grid) and grid[gi] < t_ev:
            s = evolve(state, float(grid[gi]) - state.t_us, leak, config)
            samples.append((float(grid[gi]), s.v))
            state = s
            gi += 1
        state = evolve(state, float(t_ev) - state.t_us, leak, config)
        state = apply_event(
            state, float(kernel.weights[pol, ty, tx]), config, float(draws[i])
        )
        samples.append((float(t_ev), state.v))
        prev_t = t_ev
    while gi < len(grid) and grid[gi] < t_end:
        s = evolve(state, float(grid[gi]) - state.t_us, leak, config)
        samples.append((float(grid[gi]), s.v))
        state = s
        gi += 1
    state = evolve(state, float(t_end) - state.t_us, leak, config)
    samples.append((float(t_end), state.v))
    return state.v, VoltageTrace(tuple(samples))


def _sample_grid(
    t_start: int, t_end: int, step: int | None
) -> list[int]:
    if step is None or step <= 0:
        return []
    return list(range(t_start + step, t_end, step))


def ideal_preactivation(kernel: Kernel, binned_counts: np.ndarray) -> float:
    """Digital dot product of weights and per-tap event counts."""
    counts = np.asarray(binned_counts)
    if counts.shape != kernel.weights.shape:
        raise ShapeMismatchError(
            f"counts shape {counts.shape} != kernel shape {kernel.weights.shape}"
        )
    return float(np.sum(kernel.weights * counts))


@dataclass(frozen=True)
class TransferFit:
    """Cubic transfer model v ~ c0 + c1 p + c2 p^2 + c3 p^3."""

    coeffs: tuple[float, float, float, float]
    rmse: float


def fit_transfer_curve(samples: Iterable[tuple[float, float]]) -> TransferFit:
    """Least-squares cubic fit of simulated v_pre against ideal preactivation."""
    pts = list(samples)
    if len(pts) < 8:
        raise InvalidParameterError("need at least 8 samples")
    p = np.array([s[0] for s in pts], dtype=np.float64)
    v = np.array([s[1] for s in pts], dtype=np.float64)
    if np.ptp(p) == 0.0:
        raise DegenerateFitError("all preactivation values are equal")
    design = np.vander(p, 4, increasing=True)
    coeffs, _, rank, _ = np.linalg.lstsq(design, v, rcond=None)
    if rank < 2:
        raise DegenerateFitError("rank-deficient design matrix")
    resid = v - design @ coeffs
    rmse = float(np.sqrt(np.mean(resid**2)))
    return TransferFit(tuple(float(c) for c in coeffs), rmse)


def eval_transfer(coeffs: Sequence[float], p: float | np.ndarray):
    """Evaluate the fitted polynomial at preactivation value(s) p."""
    p = np.asarray(p, dtype=np.float64)
    out = np.zeros_like(p)
    for c in reversed(list(coeffs)):
        out = out * p + c
    return out if out.ndim else float(out)


def random_kernels(
    n: int, k: int, scale: float, seed: int, bias: float = 0.0
) -> list[Kernel]:
    """Uniform(bias-scale, bias+scale) kernels, ids 0..n-1.

    ``bias`` shifts the mean tap weight (trained first-layer filters
    respond to sustained activity, so a small positive mean is typical);
    |bias| + scale must stay within the unit weight range.
    """
    if not 0 < scale <= 1:
        raise InvalidParameterError("scale must lie in (0, 1]")
    if abs(bias) + scale > 1:
        raise InvalidParameterError("|bias| + scale must be <= 1")
    gen = philox(seed, 0x4B45524E)
    return [
        Kernel(gen.uniform(bias - scale, bias + scale, size=(2, k, k)), id=i)
        for i in range(n)
    ]


def format_kernel_file(kernels: Sequence[Kernel]) -> str:
    """Textual kernel grid: per kernel a "kernel <id> <k> <k> 2" header,
    then 2k rows of k reals (polarity-0 block first)."""
    out = io.StringIO()
    for kn in kernels:
        k = kn.k
        out.write(f"kernel {kn.id} {k} {k} 2\n")
        for pol in range(2):
            for row in range(k):
                out.write(
                    " ".join(f"{w:.17g}" for w in kn.weights[pol, row]) + "\n"
                )
    return out.getvalue()


def parse_kernel_file(text: str) -> list[Kernel]:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    kernels: list[Kernel] = []
    i = 0
    while i < len(lines):
        parts = lines[i].split()
        if len(parts) != 5 or parts[0] != "kernel" or parts[4] != "2":
            raise MalformedFileError(f"bad kernel header: {lines[i]!r}")
        try:
            kid, kh, kw = int(parts[1]), int(parts[2]), int(parts[3])
        except ValueError:
            raise MalformedFileError(f"bad kernel header: {lines[i]!r}") from None
        if kh != kw:
            raise MalformedFileError("kernel must be square")
        i += 1
        if i + 2 * kh > len(lines):
            raise MalformedFileError(f"kernel {kid}: truncated weight rows")
        w = np.zeros((2, kh, kw))
        for pol in range(2):
            for row in range(kh):
                vals = lines[i].split()
                if len(vals) != kw:
                    raise MalformedFileError(
                        f"kernel {kid}: expected {kw} values per row"
                    )
                w[pol, row] = [float(v) for v in vals]
                i += 1
        kernels.append(Kernel(w, id=kid))
    return kernels
