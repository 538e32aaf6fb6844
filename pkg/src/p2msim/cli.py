"""Experiment driver: voltage traces, integration-time sweeps, transfer
fits, event-file binning, and end-to-end runs.

Every command is deterministic under a fixed seed: reruns produce
byte-identical files, and results do not depend on ``P2M_THREADS``.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import events as ev
from . import mac
from .config import ExperimentConfig, load_config
from .conv import frames_to_array, p2m_conv, temporal_rebin
from .errors import P2MError
from .mac import CircuitVariant, Kernel
from .metrics import (
    EnergyMode,
    Report,
    SpikeStats,
    _fmt,
    backend_energy,
    bandwidth_ratio,
    report_text,
)
from .rng import philox
from .snn import NetworkSpec, WeightBundle, load_weights, run_network


class StageFailure(Exception):
    """Carries the failing pipeline stage and input context."""

    def __init__(self, stage: str, context: str, cause: Exception):
        super().__init__(f"stage '{stage}' ({context}): {cause}")
        self.stage = stage


def _stage(name: str, context: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageFailure:
        raise
    except (P2MError, OSError, ValueError) as exc:
        raise StageFailure(name, context, exc) from exc


# ---------------------------------------------------------------------------
# stimulus / kernels / weights


def build_stimulus(cfg: ExperimentConfig, seed: int) -> ev.EventStream:
    if cfg.input.path:
        data = Path(cfg.input.path).read_bytes()
        if cfg.input.format == "nmnist":
            return ev.parse_nmnist(data)
        return ev.read_evt1(data)
    s = cfg.synth
    duration_us = s.duration_ms * 1000
    rate_map = np.zeros((2, s.height, s.width))
    rate_map[ev.ON] = s.rate_on
    rate_map[ev.OFF] = s.rate_off
    bursts = ev.synth_pulsed(
        rate_map, duration_us, s.burst_period_ms * 1000, s.burst_duty, seed
    )
    if s.rate_background > 0:
        bg = ev.synth_poisson(
            np.full((2, s.height, s.width), s.rate_background), duration_us, seed + 1
        )
        t = np.concatenate([bursts.t, bg.t])
        x = np.concatenate([bursts.x, bg.x])
        y = np.concatenate([bursts.y, bg.y])
        p = np.concatenate([bursts.polarity, bg.polarity])
        return ev.EventStream.from_arrays(
            s.width, s.height, t, x, y, p, duration_us, sort=True
        )
    return bursts


def build_kernels(cfg: ExperimentConfig, seed: int) -> list[Kernel]:
    if cfg.kernels.path:
        kernels = mac.parse_kernel_file(Path(cfg.kernels.path).read_text())
        return kernels
    return mac.random_kernels(
        cfg.conv.out_channels, cfg.conv.k, cfg.kernels.scale, seed, cfg.kernels.bias
    )


def build_network_spec(cfg: ExperimentConfig, stream: ev.EventStream) -> NetworkSpec:
    h_out, w_out = cfg.conv.out_hw(stream.height, stream.width)
    channels = cfg.network.channels
    if channels[0] != cfg.conv.out_channels:
        raise P2MError(
            f"network.channels[0]={channels[0]} must equal "
            f"conv.out_channels={cfg.conv.out_channels}"
        )
    return NetworkSpec(
        input_hw=(h_out, w_out),
        channels=channels,
        hidden=cfg.network.hidden,
        classes=cfg.network.classes,
    )


def build_weights(
    cfg: ExperimentConfig, spec: NetworkSpec, seed: int, path: str | None
) -> WeightBundle:
    if path:
        return load_weights(Path(path).read_bytes(), spec)
    return WeightBundle.random(spec, seed, gain=cfg.network.weight_gain)


# ---------------------------------------------------------------------------
# pipeline


def run_pipeline(
    cfg: ExperimentConfig,
    stream: ev.EventStream,
    kernels: list[Kernel],
    net_spec: NetworkSpec,
    weights: WeightBundle,
    t_intg_us: int,
    seed: int,
    keep_frames: list | None = None,
):
    """parse -> p2m_conv -> temporal_rebin -> run_network -> stats."""
    frames = _stage(
        "p2m-conv",
        f"t_intg={t_intg_us}us",
        p2m_conv,
        stream,
        kernels,
        cfg.conv,
        cfg.circuit,
        t_intg_us,
        seed,
    )
    if keep_frames is not None:
        keep_frames.extend(frames)
    ratio = max(1, (cfg.run.coarse_ms * 1000) // t_intg_us)
    coarse = _stage("temporal-rebin", f"ratio={ratio}", temporal_rebin, frames, ratio)
    arr = frames_to_array(coarse)
    logits, backend_stats = _stage(
        "run-network",
        f"{len(coarse)} coarse steps",
        run_network,
        arr,
        net_spec,
        weights,
        cfg.network.lif_params(),
    )
    h_out, w_out = cfg.conv.out_hw(stream.height, stream.width)
    stats = SpikeStats(
        input_events=len(stream),
        layer_spikes=tuple(int(v) for v in backend_stats.layer_totals),
        mac_invocations=len(frames) * cfg.conv.out_channels * h_out * w_out,
        timesteps=backend_stats.timesteps,
    )
    return logits, stats, backend_stats


# ---------------------------------------------------------------------------
# commands


def cmd_trace(cfg: ExperimentConfig, args: argparse.Namespace, out_dir: Path) -> None:
    seed = args.seed if args.seed is not None else cfg.run.seed
    t_intg_us = args.t_intg_ms * 1000
    if args.kernels:
        kernels = _stage(
            "parse-kernels",
            args.kernels,
            lambda: mac.parse_kernel_file(Path(args.kernels).read_text()),
        )
    else:
        kernels = build_kernels(cfg, seed)
    kernel = kernels[0]

    variants = [
        CircuitVariant.IDEAL,
        CircuitVariant.CONFIG_A,
        CircuitVariant.CONFIG_B,
        CircuitVariant.CONFIG_C,
    ]
    local = _trace_events(cfg, kernel.k, t_intg_us, seed)
    grid_step = max(1, t_intg_us // 400)
    lines = ["run,t_us,v_ideal,v_config_a,v_config_b,v_config_c"]
    for run_name, evs in (("noevent", []), ("events", local)):
        traces = []
        for variant in variants:
            _, trace = mac.integrate_window(
                kernel,
                evs,
                0,
                t_intg_us,
                cfg.circuit.with_variant(variant),
                seed,
                extra_sample_us=grid_step,
            )
            traces.append(trace)
        times = traces[0].times()
        cols = [tr.voltages() for tr in traces]
        for i in range(len(times)):
            row = ",".join(_fmt(float(c[i])) for c in cols)
            lines.append(f"{run_name},{_fmt(float(times[i]))},{row}")
    (out_dir / "trace.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {out_dir / 'trace.csv'}")


def _trace_events(
    cfg: ExperimentConfig, k: int, t_intg_us: int, seed: int
) -> list[tuple[int, int, tuple[int, int]]]:
    """Poisson events on every tap of one unit, in-burst rates."""
    gen = philox(seed, 0x545243)
    out = []
    for pol, rate in ((ev.ON, cfg.synth.rate_on), (ev.OFF, cfg.synth.rate_off)):
        for ty in range(k):
            for tx in range(k):
                n = gen.poisson(rate * t_intg_us * 1e-6)
                for t in gen.integers(0, t_intg_us, size=n):
                    out.append((int(t), pol, (ty, tx)))
    out.sort(key=lambda e: e[0])
    return out


def cmd_sweep(cfg: ExperimentConfig, args: argparse.Namespace, out_dir: Path) -> None:
    seed = args.seed if args.seed is not None else cfg.run.seed
    stream = _stage("stimulus", cfg.input.path or "synthetic", build_stimulus, cfg, seed)
    kernels = _stage("kernels", cfg.kernels.path or "random", build_kernels, cfg, seed)
    net_spec = _stage("network-spec", "config", build_network_spec, cfg, stream)
    weights = build_weights(cfg, net_spec, seed, None)

    rows = []
    for t_ms in cfg.run.t_intg_ms:
        _, stats, _ = run_pipeline(
            cfg, stream, kernels, net_spec, weights, t_ms * 1000, seed
        )
        report = Report(
            bandwidth=(
                bandwidth_ratio(stats) if stats.input_events else float("nan")
            ),
            energy_digital=backend_energy(stats, cfg.energy, EnergyMode.DIGITAL),
            energy_p2m=backend_energy(stats, cfg.energy, EnergyMode.P2M),
            params=cfg.energy,
        )
        rows.append((t_ms, stats, report))

    baseline = max(rows, key=lambda r: r[0])[2]  # normalized to largest T_INTG
    n_layers = len(rows[0][1].layer_spikes)
    spike_cols = ",".join(f"spikes_l{i + 1}" for i in range(n_layers))
    lines = [
        "t_intg_ms,input_events,windows,mac_invocations,"
        + spike_cols
        + ",timesteps,bandwidth,energy_digital,energy_p2m,improvement_factor,"
        "norm_bandwidth,norm_energy_digital,norm_energy_p2m"
    ]
    for t_ms, stats, report in rows:
        windows = stats.mac_invocations // (
            cfg.conv.out_channels
            * np.prod(cfg.conv.out_hw(stream.height, stream.width))
        )
        spikes = ",".join(str(s) for s in stats.layer_spikes)
        norm = [
            report.bandwidth / baseline.bandwidth
            if baseline.bandwidth > 0
            else float("nan"),
            report.energy_digital / baseline.energy_digital
            if baseline.energy_digital > 0
            else float("nan"),
            report.energy_p2m / baseline.energy_p2m
            if baseline.energy_p2m > 0
            else float("nan"),
        ]
        lines.append(
            f"{t_ms},{stats.input_events},{int(windows)},{stats.mac_invocations},"
            f"{spikes},{stats.timesteps},{_fmt(report.bandwidth)},"
            f"{_fmt(report.energy_digital)},{_fmt(report.energy_p2m)},"
            f"{_fmt(report.improvement_factor)},"
            + ",".join(_fmt(v) for v in norm)
        )
    (out_dir / "sweep.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {out_dir / 'sweep.csv'}")


def cmd_fit(cfg: ExperimentConfig, args: argparse.Namespace, out_dir: Path) -> None:
    seed = args.seed if args.seed is not None else cfg.run.seed
    kernels = build_kernels(cfg, seed)
    kernel = kernels[0]
    t_intg_us = args.t_intg_ms * 1000
    gen = philox(seed, 0x464954)
    samples = []
    for _ in range(args.samples):
        lam = gen.uniform(0.0, args.max_events)
        counts = gen.poisson(lam, size=kernel.weights.shape)
        local = []
        for pol in range(2):
            for ty in range(kernel.k):
                for tx in range(kernel.k):
                    for t in gen.integers(0, t_intg_us, size=int(counts[pol, ty, tx])):
                        local.append((int(t), pol, (ty, tx)))
        local.sort(key=lambda e: e[0])
        p = mac.ideal_preactivation(kernel, counts)
        v, _ = mac.integrate_window(kernel, local, 0, t_intg_us, cfg.circuit, seed)
        samples.append((p, v))
    fit = _stage("fit", f"{len(samples)} samples", mac.fit_transfer_curve, samples)
    lines = [f"c{i}={_fmt(c)}" for i, c in enumerate(fit.coeffs)]
    lines.append(f"rmse={_fmt(fit.rmse)}")
    lines.append(f"samples={len(samples)}")
    (out_dir / "fit.txt").write_text("\n".join(lines) + "\n")
    print(f"wrote {out_dir / 'fit.txt'}")


def cmd_bin(cfg: ExperimentConfig, args: argparse.Namespace, out_dir: Path) -> None:
    data = _stage("read", args.input, Path(args.input).read_bytes)
    if args.format == "nmnist":
        stream = _stage("parse", args.input, ev.parse_nmnist, data)
    else:
        stream = _stage("parse", args.input, ev.read_evt1, data)
    frames = _stage(
        "bin", f"t_intg={args.t_intg_ms}ms", ev.bin_events, stream, args.t_intg_ms * 1000
    )
    lines = [
        f"# dims windows={len(frames)} polarities=2 "
        f"height={stream.height} width={stream.width}",
        "window,polarity,y,x,count",
    ]
    for fr in frames:
        pol, yy, xx = np.nonzero(fr.counts)
        vals = fr.counts[pol, yy, xx]
        for j in range(len(pol)):
            lines.append(
                f"{fr.window_index},{int(pol[j])},{int(yy[j])},{int(xx[j])},{int(vals[j])}"
            )
    (out_dir / "bin.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {out_dir / 'bin.csv'}")


def cmd_run(cfg: ExperimentConfig, args: argparse.Namespace, out_dir: Path) -> None:
    seed = args.seed if args.seed is not None else cfg.run.seed
    t_ms = args.t_intg_ms if args.t_intg_ms else cfg.run.t_intg_ms[0]
    stream = _stage("stimulus", cfg.input.path or "synthetic", build_stimulus, cfg, seed)
    kernels = _stage("kernels", cfg.kernels.path or "random", build_kernels, cfg, seed)
    net_spec = _stage("network-spec", "config", build_network_spec, cfg, stream)
    weights = _stage(
        "weights", args.weights or "random", build_weights, cfg, net_spec, seed, args.weights
    )
    fine_frames: list | None = [] if args.dump_frames else None
    logits, stats, backend = run_pipeline(
        cfg, stream, kernels, net_spec, weights, t_ms * 1000, seed,
        keep_frames=fine_frames,
    )
    if fine_frames is not None:
        from .conv import spike_frames_csv

        (out_dir / "frames.csv").write_text(spike_frames_csv(fine_frames))
    report = Report(
        bandwidth=bandwidth_ratio(stats) if stats.input_events else float("nan"),
        energy_digital=backend_energy(stats, cfg.energy, EnergyMode.DIGITAL),
        energy_p2m=backend_energy(stats, cfg.energy, EnergyMode.P2M),
        params=cfg.energy,
    )
    extra = {
        "t_intg_ms": str(t_ms),
        "seed": str(seed),
        "input_events": str(stats.input_events),
        "mac_invocations": str(stats.mac_invocations),
        "timesteps": str(stats.timesteps),
        "layer_spikes": ",".join(str(s) for s in stats.layer_spikes),
        "logits": ",".join(_fmt(float(v)) for v in logits),
        "prediction": str(int(np.argmax(logits))),
    }
    (out_dir / "report.txt").write_text(report_text(report, extra))
    stat_lines = ["timestep,layer,spikes"]
    for t in range(backend.per_step.shape[0]):
        for layer in range(backend.per_step.shape[1]):
            stat_lines.append(f"{t},{layer + 1},{int(backend.per_step[t, layer])}")
    (out_dir / "stats.csv").write_text("\n".join(stat_lines) + "\n")
    print(f"wrote {out_dir / 'report.txt'} and {out_dir / 'stats.csv'}")


# ---------------------------------------------------------------------------
# entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="p2msim",
        description="In-pixel analog MAC co-simulator for DVS event streams",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, help="key=value experiment config")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")

    p = sub.add_parser("trace", help="voltage traces for all circuit variants")
    common(p)
    p.add_argument("--kernels", help="kernel weight file (default: random)")
    p.add_argument("--t-intg-ms", type=int, default=10)

    p = sub.add_parser("sweep", help="integration-time sweep with metrics")
    common(p)

    p = sub.add_parser("fit", help="fit the analog transfer curve")
    common(p)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--max-events", type=float, default=12.0)
    p.add_argument("--t-intg-ms", type=int, default=10)

    p = sub.add_parser("bin", help="bin an event file into windows")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("evt1", "nmnist"), default="evt1")
    p.add_argument("--t-intg-ms", type=int, required=True)

    p = sub.add_parser("run", help="full pipeline with metrics report")
    common(p)
    p.add_argument("--weights", help="P2MW weight bundle (default: random)")
    p.add_argument("--t-intg-ms", type=int, default=None)
    p.add_argument(
        "--dump-frames", action="store_true",
        help="also write the fine first-layer spike frames as frames.csv",
    )
    return parser


_COMMANDS = {
    "trace": cmd_trace,
    "sweep": cmd_sweep,
    "fit": cmd_fit,
    "bin": cmd_bin,
    "run": cmd_run,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.config:
            cfg = _stage("config", str(args.config), load_config, args.config)
        else:
            cfg = ExperimentConfig()
        out_dir = args.out
        out_dir.mkdir(parents=True, exist_ok=True)
        _COMMANDS[args.command](cfg, args, out_dir)
    except StageFailure as exc:
        print(f"p2msim {args.command}: {exc}", file=sys.stderr)
        return 1
    except (P2MError, OSError) as exc:
        print(f"p2msim {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
