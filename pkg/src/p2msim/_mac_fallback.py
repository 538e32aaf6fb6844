"""Pure-Python MAC kernel: reference implementation of the hot loop.

The compiled twin (``p2msim._mac_core``) mirrors these expressions
operation-for-operation; both call the platform libm ``exp``, so results
are bit-identical. Any change here must be replicated there.

``evolve_v`` / ``apply_w`` are the scalar primitives; ``run_windows``
sweeps an event slice over the whole MAC-unit array for a range of
integration windows, updating each unit lazily at its own event times.
"""

from __future__ import annotations

from math import exp

import numpy as np


def evolve_v(
    v: float,
    dt_us: float,
    g_p: float,
    g_n: float,
    i_null: float,
    c_k: float,
    v_dd: float,
) -> float:
    """Closed-form relaxation of C dV/dt = g_p (V_DD - V) - g_n V + I_NULL.

    Result is clamped to the rails [0, V_DD].
    """
    dt_s = dt_us * 1e-6
    g = g_p + g_n
    if g > 0.0:
        tau = c_k / g
        v_eq = (g_p * v_dd + i_null) / g
        v = v_eq + (v - v_eq) * exp(-dt_s / tau)
    else:
        v = v + (i_null * dt_s) / c_k
    if v < 0.0:
        v = 0.0
    elif v > v_dd:
        v = v_dd
    return v


def apply_w(
    v: float,
    weight: float,
    draw: float,
    sigma: float,
    k_step: float,
    nonlinear: bool,
    v_dd: float,
    v_pre0: float,
) -> float:
    """Instantaneous charge step for one input event.

    Effective weight carries the process-variation draw; nonlinear mode
    scales the step by the remaining headroom toward the relevant rail.
    """
    w_eff = weight * (1.0 + sigma * draw)
    if nonlinear:
        if w_eff > 0.0:
            den = v_dd - v_pre0
            h = 1.0 if den <= 0.0 else (v_dd - v) / den
        elif w_eff < 0.0:
            h = 1.0 if v_pre0 <= 0.0 else v / v_pre0
        else:
            h = 0.0
        if h < 0.0:
            h = 0.0
        elif h > 1.0:
            h = 1.0
        dv = k_step * w_eff * h
    else:
        dv = k_step * w_eff
    v = v + dv
    if v < 0.0:
        v = 0.0
    elif v > v_dd:
        v = v_dd
    return v


def run_windows(
    ev_t: np.ndarray,
    ev_x: np.ndarray,
    ev_y: np.ndarray,
    ev_p: np.ndarray,
    win_start: np.ndarray,
    w_lo: int,
    w_hi: int,
    t_intg_us: int,
    weights: np.ndarray,
    g_p: np.ndarray,
    g_n: np.ndarray,
    i_null: np.ndarray,
    draws: np.ndarray,
    c_k: float,
    v_dd: float,
    v_pre0: float,
    k_step: float,
    v_th: float,
    sigma: float,
    nonlinear: int,
    stride: int,
    pad: int,
    h_out: int,
    w_out: int,
    out_spikes: np.ndarray,
    out_vpre: np.ndarray | None = None,
) -> None:
    """Integrate windows [w_lo, w_hi) for every (filter, output pixel) unit.

    win_start[w] indexes the first event of window w in the sorted event
    arrays. weights is [F, 2, k, k]; draws is [F, L] with L at least the
    largest per-window event count (unused when sigma == 0 but still
    indexed, so L must be valid). out_spikes is [n_windows, F, h_out,
    w_out] uint8; out_vpre, when given, receives the pre-activation
    voltages at the same indices.
    """
    n_f = weights.shape[0]
    ksz = weights.shape[2]
    th = v_pre0 + v_th
    nl = bool(nonlinear)
    use_draws = draws.shape[1] > 0

    for w in range(w_lo, w_hi):
        t0 = float(w * t_intg_us)
        t_end = float((w + 1) * t_intg_us)
        v = np.full((n_f, h_out, w_out), v_pre0, dtype=np.float64)
        t_last = np.full((n_f, h_out, w_out), t0, dtype=np.float64)
        n_seen = np.zeros((n_f, h_out, w_out), dtype=np.int64)

        for i in range(int(win_start[w]), int(win_start[w + 1])):
            te = float(ev_t[i])
            ex = int(ev_x[i])
            ey = int(ev_y[i])
            ep = int(ev_p[i])
            oy_hi = (ey + pad) // stride
            if oy_hi >= h_out:
                oy_hi = h_out - 1
            lo = ey + pad - ksz + 1
            oy_lo = 0 if lo <= 0 else (lo + stride - 1) // stride
            ox_hi = (ex + pad) // stride
            if ox_hi >= w_out:
                ox_hi = w_out - 1
            lo = ex + pad - ksz + 1
            ox_lo = 0 if lo <= 0 else (lo + stride - 1) // stride
            for f in range(n_f):
                for oy in range(oy_lo, oy_hi + 1):
                    ty = ey + pad - oy * stride
                    for ox in range(ox_lo, ox_hi + 1):
                        tx = ex + pad - ox * stride
                        vv = evolve_v(
                            float(v[f, oy, ox]),
                            te - float(t_last[f, oy, ox]),
                            float(g_p[f]),
                            float(g_n[f]),
                            float(i_null[f]),
                            c_k,
                            v_dd,
                        )
                        d = float(draws[f, n_seen[f, oy, ox]]) if use_draws else 0.0
                        v[f, oy, ox] = apply_w(
                            vv,
                            float(weights[f, ep, ty, tx]),
                            d,
                            sigma,
                            k_step,
                            nl,
                            v_dd,
                            v_pre0,
                        )
                        t_last[f, oy, ox] = te
                        n_seen[f, oy, ox] += 1

        for f in range(n_f):
            for oy in range(h_out):
                for ox in range(w_out):
                    vv = evolve_v(
                        float(v[f, oy, ox]),
                        t_end - float(t_last[f, oy, ox]),
                        float(g_p[f]),
                        float(g_n[f]),
                        float(i_null[f]),
                        c_k,
                        v_dd,
                    )
                    out_spikes[w, f, oy, ox] = 1 if vv >= th else 0
                    if out_vpre is not None:
                        out_vpre[w, f, oy, ox] = vv
