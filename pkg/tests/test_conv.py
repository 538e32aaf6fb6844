import numpy as np
import pytest

from p2msim import errors
from p2msim.conv import (
    ConvSpec,
    SpikeFrame,
    digital_conv_reference,
    frames_to_array,
    p2m_conv,
    spike_frames_csv,
    temporal_rebin,
    unit_events,
)
from p2msim.events import DvsEvent, EventStream, bin_events
from p2msim.mac import (
    CircuitConfig,
    CircuitVariant,
    Kernel,
    integrate_window,
    random_kernels,
    threshold_compare,
)

from conftest import naive_conv, random_stream

IDEAL_CFG = CircuitConfig(variant=CircuitVariant.IDEAL, variation_sigma=0.0)


def ideal_spec(n=2):
    return ConvSpec(out_channels=n)


# --- geometry ----------------------------------------------------------------


def test_out_hw():
    assert ConvSpec(k=3, stride=1, padding=0).out_hw(16, 16) == (14, 14)
    assert ConvSpec(k=3, stride=1, padding=1).out_hw(16, 16) == (16, 16)
    assert ConvSpec(k=3, stride=2, padding=0).out_hw(17, 17) == (8, 8)


def test_spec_rejects_even_kernel():
    with pytest.raises(errors.InvalidParameterError):
        ConvSpec(k=4)


def test_out_hw_rejects_collapsed_output():
    with pytest.raises(errors.GeometryError):
        ConvSpec(k=3).out_hw(2, 2)


def test_kernel_count_mismatch():
    s = EventStream.empty(8, 8, 1000)
    with pytest.raises(errors.ShapeMismatchError):
        p2m_conv(s, random_kernels(3, 3, 0.5, 1), ideal_spec(2), IDEAL_CFG, 1000, 1)


# --- p2m_conv ------------------------------------------------------------------


def test_empty_stream_all_zero_frames():
    s = EventStream.empty(10, 10, 5000)
    frames = p2m_conv(s, random_kernels(2, 3, 0.5, 1), ideal_spec(), IDEAL_CFG, 1000, 1)
    assert len(frames) == 5
    assert all(f.values.sum() == 0 for f in frames)
    assert frames[0].values.shape == (2, 8, 8)


def test_single_event_center_tap_geometry():
    w = np.zeros((2, 3, 3))
    w[1, 1, 1] = 1.0  # ON center tap
    kn = Kernel(w, id=0)
    cfg = CircuitConfig(
        variant=CircuitVariant.IDEAL, variation_sigma=0.0, k_step=0.1, v_th=0.05
    )
    s = EventStream.from_events(8, 8, [DvsEvent(100, 4, 3, 1)], duration_us=1000)
    frames = p2m_conv(s, [kn], ConvSpec(out_channels=1), cfg, 1000, 1)
    got = frames[0].values[0]
    assert got[2, 3] == 1  # oy = y-1, ox = x-1 for the center tap
    assert got.sum() == 1


def test_ideal_linear_matches_thresholded_digital_reference(gen):
    spec = ConvSpec(out_channels=3)
    cfg = CircuitConfig(variant=CircuitVariant.IDEAL, variation_sigma=0.0)
    for trial in range(20):
        s = random_stream(gen, 12, 12, max_events=400, max_t=8000)
        kernels = random_kernels(3, 3, 1.0, 100 + trial)
        frames = p2m_conv(s, kernels, spec, cfg, 2000, seed=trial)
        binned = bin_events(s, 2000)
        maps = digital_conv_reference(binned, kernels, spec)
        for f, m in zip(frames, maps):
            expect = np.vectorize(
                lambda p: threshold_compare(cfg.v_precharge + cfg.k_step * p, cfg)
            )(m) if m.size else m
            assert np.array_equal(f.values, expect.astype(np.uint8))


def test_decomposition_matches_integrate_window(gen):
    spec = ConvSpec(out_channels=2, stride=2, padding=1)
    cfg = CircuitConfig(variation_sigma=0.05, nonlinear_step=True)
    s = random_stream(gen, 9, 9, max_events=300, max_t=6000)
    kernels = random_kernels(2, 3, 0.6, 55)
    frames, vpre = p2m_conv(s, kernels, spec, cfg, 1500, seed=9, collect_vpre=True)
    h_out, w_out = spec.out_hw(9, 9)
    for _ in range(25):
        f = int(gen.integers(2))
        oy, ox = int(gen.integers(h_out)), int(gen.integers(w_out))
        w = int(gen.integers(len(frames)))
        evs = unit_events(s, spec, oy, ox, w * 1500, (w + 1) * 1500)
        v, _ = integrate_window(kernels[f], evs, w * 1500, 1500, cfg, seed=9)
        assert v == vpre[w, f, oy, ox]  # bitwise
        assert threshold_compare(v, cfg) == frames[w].values[f, oy, ox]


def test_threads_do_not_change_results(gen):
    s = random_stream(gen, 10, 10, max_events=600, max_t=20_000)
    kernels = random_kernels(2, 3, 0.5, 4)
    cfg = CircuitConfig(variation_sigma=0.03)
    a = frames_to_array(p2m_conv(s, kernels, ideal_spec(), cfg, 2000, 7, threads=1))
    b = frames_to_array(p2m_conv(s, kernels, ideal_spec(), cfg, 2000, 7, threads=4))
    assert np.array_equal(a, b)


def test_compiled_and_fallback_agree_bitwise(gen):
    from p2msim import _mac_fallback
    from p2msim import conv as conv_mod

    s = random_stream(gen, 8, 8, max_events=250, max_t=9000)
    kernels = random_kernels(2, 3, 0.5, 8)
    cfg = CircuitConfig(variation_sigma=0.04, nonlinear_step=True)
    frames_sel, vpre_sel = p2m_conv(
        s, kernels, ideal_spec(), cfg, 3000, 11, collect_vpre=True
    )
    orig = conv_mod._impl
    conv_mod._impl = _mac_fallback
    try:
        frames_fb, vpre_fb = p2m_conv(
            s, kernels, ideal_spec(), cfg, 3000, 11, collect_vpre=True
        )
    finally:
        conv_mod._impl = orig
    assert np.array_equal(frames_to_array(frames_sel), frames_to_array(frames_fb))
    assert np.array_equal(vpre_sel, vpre_fb)  # bit-identical voltages


def test_backend_parity_under_extreme_parameters(gen):
    # clamping, huge dt gaps, tiny capacitors, nonlinear steps at the rails
    from p2msim import _mac_fallback
    from p2msim import conv as conv_mod

    cases = [
        CircuitConfig(variant=CircuitVariant.CONFIG_A, c_k=1e-15, g_leak=1e-9,
                      k_step=0.3, v_th=0.01, variation_sigma=0.5),
        CircuitConfig(variant=CircuitVariant.CONFIG_C, c_k=1e-13, g_leak=1e-13,
                      nonlinear_step=True, v_precharge=0.0, v_th=0.79),
        CircuitConfig(variant=CircuitVariant.CONFIG_B, alpha_sw=1.0,
                      nonlinear_step=True, v_precharge=0.8, k_step=0.29),
    ]
    s = random_stream(gen, 6, 6, max_events=150, max_t=2_000_000)
    kernels = random_kernels(2, 3, 1.0, 999)
    for cfg in cases:
        sel = p2m_conv(s, kernels, ideal_spec(), cfg, 500_000, 3, collect_vpre=True)
        orig = conv_mod._impl
        conv_mod._impl = _mac_fallback
        try:
            fb = p2m_conv(s, kernels, ideal_spec(), cfg, 500_000, 3, collect_vpre=True)
        finally:
            conv_mod._impl = orig
        assert np.array_equal(sel[1], fb[1])
        assert np.array_equal(frames_to_array(sel[0]), frames_to_array(fb[0]))


def test_spike_monotone_in_threshold(gen):
    s = random_stream(gen, 10, 10, max_events=800, max_t=10_000)
    kernels = random_kernels(2, 3, 0.5, 12)
    totals = []
    for v_th in (0.01, 0.03, 0.09, 0.2):
        cfg = CircuitConfig(v_th=v_th, variation_sigma=0.0)
        frames = p2m_conv(s, kernels, ideal_spec(), cfg, 2000, 3)
        totals.append(frames_to_array(frames).sum())
    assert all(a >= b for a, b in zip(totals, totals[1:]))


def test_trace_units_returned():
    s = EventStream.from_events(8, 8, [DvsEvent(500, 4, 4, 1)], duration_us=2000)
    kernels = random_kernels(1, 3, 0.5, 2)
    frames, traces = p2m_conv(
        s, kernels, ConvSpec(out_channels=1), IDEAL_CFG, 1000, 1,
        trace_units=[(0, 3, 3)],
    )
    assert len(frames) == 2
    tr = traces[(0, 3, 3)]
    assert len(tr) == 2
    assert tr[0].samples[-1][0] == 1000.0


# --- digital reference ---------------------------------------------------------


def test_digital_reference_zero_counts():
    spec = ideal_spec(2)
    kernels = random_kernels(2, 3, 0.5, 1)
    maps = digital_conv_reference(np.zeros((3, 2, 8, 8)), kernels, spec)
    assert len(maps) == 3
    assert all(np.all(m == 0) for m in maps)


def test_digital_reference_1x1_kernel():
    w = np.zeros((2, 1, 1))
    w[1, 0, 0] = 0.25
    spec = ConvSpec(k=1, out_channels=1)
    counts = np.zeros((1, 2, 4, 4))
    counts[0, 1, 2, 2] = 8
    maps = digital_conv_reference(counts, [Kernel(w, id=0)], spec)
    assert maps[0][0, 2, 2] == pytest.approx(2.0)
    assert maps[0].sum() == pytest.approx(2.0)


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 0), (2, 1)])
def test_digital_reference_matches_naive_loop(gen, stride, pad):
    spec = ConvSpec(stride=stride, padding=pad, out_channels=2)
    kernels = random_kernels(2, 3, 1.0, 33)
    weights = np.stack([k.weights for k in kernels])
    counts = gen.integers(0, 6, size=(2, 2, 5, 5)).astype(np.int64)
    maps = digital_conv_reference(counts, kernels, spec)
    for n in range(2):
        assert np.allclose(maps[n], naive_conv(counts[n], weights, stride, pad), atol=1e-12)


# --- temporal rebin -------------------------------------------------------------


def _frames(arr):
    return [SpikeFrame(i, a) for i, a in enumerate(arr)]


def test_rebin_ratio_one_identity():
    arr = np.random.default_rng(1).integers(0, 2, size=(6, 2, 3, 3)).astype(np.uint8)
    out = temporal_rebin(_frames(arr), 1)
    assert np.array_equal(frames_to_array(out), arr)


def test_rebin_5000_to_5():
    arr = np.ones((5000, 1, 2, 2), dtype=np.uint8)
    out = temporal_rebin(_frames(arr), 1000)
    assert len(out) == 5
    assert np.all(frames_to_array(out) == 1000)


def test_rebin_trailing_partial_group():
    arr = np.ones((7, 1, 1, 1), dtype=np.uint8)
    out = temporal_rebin(_frames(arr), 3)
    assert [int(f.values.sum()) for f in out] == [3, 3, 1]


def test_rebin_conserves_counts(gen):
    arr = gen.integers(0, 2, size=(23, 3, 4, 4)).astype(np.uint8)
    for ratio in (1, 2, 5, 23, 50):
        out = temporal_rebin(_frames(arr), ratio)
        assert frames_to_array(out).sum() == arr.sum()


def test_rebin_binary_mode():
    arr = np.zeros((4, 1, 1, 1), dtype=np.uint8)
    arr[1] = 1
    arr[2] = 1
    out = temporal_rebin(_frames(arr), 4, binary=True)
    assert frames_to_array(out).tolist() == [[[[1]]]]


def test_rebin_rejects_zero_ratio():
    with pytest.raises(errors.InvalidParameterError):
        temporal_rebin([], 0)


# --- CSV dump -------------------------------------------------------------------


def test_spike_frames_csv_format():
    arr = np.zeros((2, 1, 2, 2), dtype=np.uint8)
    arr[1, 0, 1, 0] = 1
    text = spike_frames_csv(_frames(arr))
    lines = text.splitlines()
    assert lines[0] == "# dims windows=2 channels=1 height=2 width=2"
    assert lines[1] == "window,channel,y,x,value"
    assert lines[2] == "1,0,1,0,1"
    assert len(lines) == 3
