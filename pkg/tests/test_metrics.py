import pytest

from p2msim import errors
from p2msim.metrics import (
    EnergyMode,
    EnergyModelParams,
    Report,
    SpikeStats,
    backend_energy,
    bandwidth_ratio,
    normalize,
    report_text,
)


def stats(**kw):
    base = dict(input_events=100, layer_spikes=(50, 20, 5), mac_invocations=1000, timesteps=2)
    base.update(kw)
    return SpikeStats(**base)


# --- bandwidth -----------------------------------------------------------------


def test_bandwidth_zero_spikes():
    assert bandwidth_ratio(stats(layer_spikes=(0, 0))) == 0.0


def test_bandwidth_simple_division():
    assert bandwidth_ratio(stats(layer_spikes=(50, 1))) == pytest.approx(0.5)


def test_bandwidth_zero_events_is_error_not_zero():
    with pytest.raises(errors.BandwidthUndefinedError):
        bandwidth_ratio(stats(input_events=0))


# --- energy --------------------------------------------------------------------


def test_energy_all_zero_stats():
    s = stats(input_events=1, layer_spikes=(0, 0), mac_invocations=0)
    p = EnergyModelParams()
    assert backend_energy(s, p, EnergyMode.DIGITAL) == 0.0
    assert backend_energy(s, p, EnergyMode.P2M) == 0.0


def test_energy_digital_arithmetic():
    s = stats(layer_spikes=(0, 500), mac_invocations=1000)
    p = EnergyModelParams(e_mac_digital=1.0, e_ac=0.2, fanout=1.0)
    assert backend_energy(s, p, EnergyMode.DIGITAL) == pytest.approx(1100.0)


def test_energy_p2m_formula():
    s = stats(layer_spikes=(50, 500), mac_invocations=1000)
    p = EnergyModelParams(e_analog_window=0.5, e_tx=1.0, e_ac=0.2, fanout=2.0)
    assert backend_energy(s, p, EnergyMode.P2M) == pytest.approx(
        1000 * 0.5 + 50 * 1.0 + 500 * 2.0 * 0.2
    )


def test_p2m_cheaper_when_constants_favor_it():
    s = stats(layer_spikes=(10, 100), mac_invocations=1000)
    p = EnergyModelParams()  # e_analog < e_mac, small tx
    assert backend_energy(s, p, EnergyMode.P2M) < backend_energy(s, p, EnergyMode.DIGITAL)


def test_energy_monotone_in_counts_and_constants():
    p = EnergyModelParams()
    low = stats(layer_spikes=(10, 10), mac_invocations=100)
    high = stats(layer_spikes=(20, 30), mac_invocations=200)
    for mode in EnergyMode:
        assert backend_energy(high, p, mode) >= backend_energy(low, p, mode)
    bigger = EnergyModelParams(e_mac_digital=10.0, e_ac=2.0, e_analog_window=1.0, e_tx=2.0)
    for mode in EnergyMode:
        assert backend_energy(low, bigger, mode) >= backend_energy(low, p, mode)


def test_fanout_per_layer_length_checked():
    s = stats(layer_spikes=(10, 10, 10))
    p = EnergyModelParams(fanout=(1.0, 2.0, 3.0))  # 3 entries for 2 backend layers
    with pytest.raises(errors.ShapeMismatchError):
        backend_energy(s, p, EnergyMode.DIGITAL)


def test_negative_constants_rejected():
    with pytest.raises(errors.InvalidParameterError):
        EnergyModelParams(e_ac=-1.0)


# --- report / normalize -----------------------------------------------------------


def report_for(s):
    return Report.from_stats(s, EnergyModelParams())


def test_normalize_identity():
    r = report_for(stats())
    out = normalize(r, r)
    assert out.ratios == {"bandwidth": 1.0, "energy_digital": 1.0, "energy_p2m": 1.0}


def test_normalize_bandwidth_ratio():
    a = report_for(stats(layer_spikes=(34, 5), input_events=10_000))
    b = report_for(stats(layer_spikes=(20, 5), input_events=10_000))
    out = normalize(a, b)
    assert out.ratios["bandwidth"] == pytest.approx(1.7)


def test_normalize_rejects_zero_baseline():
    zero = report_for(stats(layer_spikes=(0, 1)))
    with pytest.raises(errors.InvalidParameterError):
        normalize(report_for(stats()), zero)


def test_improvement_factor_is_digital_over_p2m():
    r = report_for(stats())
    assert r.improvement_factor == pytest.approx(r.energy_digital / r.energy_p2m)


def test_report_text_echoes_constants():
    text = report_text(report_for(stats()))
    assert "e_mac_digital=5" in text
    assert "bandwidth=0.5" in text
    assert "improvement_factor=" in text


def test_stats_validation():
    with pytest.raises(errors.InvalidParameterError):
        SpikeStats(input_events=-1, layer_spikes=(1,), mac_invocations=0, timesteps=0)
    with pytest.raises(errors.InvalidParameterError):
        SpikeStats(input_events=0, layer_spikes=(), mac_invocations=0, timesteps=0)
