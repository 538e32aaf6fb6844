"""Experiment configuration: flat ``section.key = value`` text files.

Unknown keys are rejected so typos fail loudly. Lists are
comma-separated; booleans are ``true``/``false``. Every value has a
default, so an empty config is a valid experiment.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .conv import ConvSpec
from .errors import ConfigError, InvalidParameterError
from .mac import CircuitConfig, CircuitVariant
from .metrics import EnergyModelParams
from .snn import LifParams


@dataclass(frozen=True)
class SynthSpec:
    """Synthetic stimulus: burst-modulated Poisson plus a weak constant
    background (so long windows keep a trickle of late activity)."""

    width: int = 34
    height: int = 34
    duration_ms: int = 2000
    rate_on: float = 4000.0  # per-pixel ON rate inside bursts, ev/s
    rate_off: float = 2000.0
    rate_background: float = 8.0  # always-on per-pixel rate, both polarities
    burst_period_ms: int = 250
    burst_duty: float = 0.2


@dataclass(frozen=True)
class NetworkConfig:
    channels: tuple[int, ...] = (4, 32, 64, 128)
    hidden: int = 512
    classes: int = 10
    tau: float = 2.0
    v_th: float = 1.0
    weight_gain: float = 1.0

    def lif_params(self) -> LifParams:
        return LifParams(tau=self.tau, v_th=self.v_th)


@dataclass(frozen=True)
class RunConfig:
    t_intg_ms: tuple[int, ...] = (1, 10, 100, 1000)
    coarse_ms: int = 1000
    seed: int = 12345


@dataclass(frozen=True)
class InputConfig:
    path: str = ""  # empty -> synthetic stimulus
    format: str = "evt1"  # evt1 | nmnist


@dataclass(frozen=True)
class KernelConfig:
    path: str = ""  # empty -> random kernels
    scale: float = 0.3  # uniform half-width, trained-first-layer scale
    bias: float = 0.15  # mean tap weight (sustained-activity response)


@dataclass(frozen=True)
class ExperimentConfig:
    circuit: CircuitConfig = field(default_factory=CircuitConfig)
    conv: ConvSpec = field(default_factory=ConvSpec)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    run: RunConfig = field(default_factory=RunConfig)
    input: InputConfig = field(default_factory=InputConfig)
    kernels: KernelConfig = field(default_factory=KernelConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)
    energy: EnergyModelParams = field(default_factory=EnergyModelParams)


_SECTION_FIELDS = {
    "circuit": CircuitConfig,
    "conv": ConvSpec,
    "network": NetworkConfig,
    "run": RunConfig,
    "input": InputConfig,
    "kernels": KernelConfig,
    "synth": SynthSpec,
    "energy": EnergyModelParams,
}

# conv.* keys use friendlier names than the dataclass fields
_KEY_ALIASES = {("conv", "kernel_size"): "k"}


def _convert(raw: str, current: object, key: str) -> object:
    if isinstance(current, CircuitVariant):
        return CircuitVariant.parse(raw)
    if isinstance(current, bool):
        low = raw.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(current, int):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if isinstance(current, float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    if isinstance(current, tuple):
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        if not parts:
            raise ConfigError(f"{key}: expected a comma-separated list")
        elem = current[0] if current else 0
        try:
            if isinstance(elem, int):
                return tuple(int(p) for p in parts)
            return tuple(float(p) for p in parts)
        except ValueError:
            raise ConfigError(f"{key}: bad list element in {raw!r}") from None
    if isinstance(current, str):
        return raw.strip()
    raise ConfigError(f"{key}: unsupported value type")


def parse_config(text: str) -> ExperimentConfig:
    """Parse key=value lines into an ExperimentConfig.

    ``#`` starts a comment; blank lines are skipped; unknown keys raise
    :class:`ConfigError`.
    """
    sections: dict[str, dict[str, object]] = {name: {} for name in _SECTION_FIELDS}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in body.split("=", 1))
        if "." not in key:
            raise ConfigError(f"line {lineno}: key {key!r} needs a section dot")
        section, fname = key.split(".", 1)
        if section not in _SECTION_FIELDS:
            raise ConfigError(f"line {lineno}: unknown section {section!r}")
        fname = _KEY_ALIASES.get((section, fname), fname)
        cls = _SECTION_FIELDS[section]
        known = {f.name: f for f in fields(cls)}
        if fname not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        default_obj = cls()
        current = getattr(default_obj, fname)
        sections[section][fname] = _convert(raw, current, key)

    cfg = ExperimentConfig()
    try:
        for section, values in sections.items():
            if values:
                cfg = replace(cfg, **{section: replace(getattr(cfg, section), **values)})
    except InvalidParameterError as exc:
        raise ConfigError(str(exc)) from exc
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if not cfg.run.t_intg_ms or any(t <= 0 for t in cfg.run.t_intg_ms):
        raise ConfigError("run.t_intg_ms entries must be positive")
    if cfg.run.coarse_ms <= 0:
        raise ConfigError("run.coarse_ms must be positive")
    if cfg.input.format not in ("evt1", "nmnist"):
        raise ConfigError(f"input.format must be evt1|nmnist, got {cfg.input.format!r}")
    if not 0.0 < cfg.synth.burst_duty <= 1.0:
        raise ConfigError("synth.burst_duty must lie in (0, 1]")
    if not 0.0 < cfg.kernels.scale <= 1.0:
        raise ConfigError("kernels.scale must lie in (0, 1]")


def load_config(path: str | Path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())
