# Compiled MAC kernel. Mirrors p2msim._mac_fallback expression-for-
# expression; both use libm exp and the build disables FP contraction,
# so outputs are bit-identical to the pure-Python path.

from libc.math cimport exp

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef inline double _evolve(
    double v, double dt_us, double g_p, double g_n, double i_null,
    double c_k, double v_dd
) noexcept nogil:
    cdef double dt_s = dt_us * 1e-6
    cdef double g = g_p + g_n
    cdef double tau, v_eq
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


cdef inline double _apply(
    double v, double weight, double draw, double sigma, double k_step,
    int nonlinear, double v_dd, double v_pre0
) noexcept nogil:
    cdef double w_eff = weight * (1.0 + sigma * draw)
    cdef double h, dv, den
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
    cnp.int64_t[:] ev_t,
    cnp.int32_t[:] ev_x,
    cnp.int32_t[:] ev_y,
    cnp.uint8_t[:] ev_p,
    cnp.int64_t[:] win_start,
    Py_ssize_t w_lo,
    Py_ssize_t w_hi,
    long long t_intg_us,
    double[:, :, :, :] weights,
    double[:] g_p,
    double[:] g_n,
    double[:] i_null,
    double[:, :] draws,
    double c_k,
    double v_dd,
    double v_pre0,
    double k_step,
    double v_th,
    double sigma,
    int nonlinear,
    int stride,
    int pad,
    int h_out,
    int w_out,
    cnp.uint8_t[:, :, :, :] out_spikes,
    out_vpre=None,
):
    """Compiled twin of ``p2msim._mac_fallback.run_windows``."""
    cdef Py_ssize_t n_f = weights.shape[0]
    cdef int ksz = <int> weights.shape[2]
    cdef double th = v_pre0 + v_th
    cdef bint use_draws = draws.shape[1] > 0
    cdef bint want_vpre = out_vpre is not None

    cdef double[:, :, :, :] vpre_view
    if want_vpre:
        vpre_view = out_vpre
    else:
        vpre_view = np.zeros((1, 1, 1, 1), dtype=np.float64)

    v_arr = np.empty((n_f, h_out, w_out), dtype=np.float64)
    t_arr = np.empty((n_f, h_out, w_out), dtype=np.float64)
    n_arr = np.empty((n_f, h_out, w_out), dtype=np.int64)
    cdef double[:, :, :] v = v_arr
    cdef double[:, :, :] t_last = t_arr
    cdef cnp.int64_t[:, :, :] n_seen = n_arr

    cdef Py_ssize_t w, i, f
    cdef int ex, ey, ep, oy, ox, ty, tx, oy_lo, oy_hi, ox_lo, ox_hi, lo
    cdef double t0, t_end, te, vv, d

    with nogil:
        for w in range(w_lo, w_hi):
            t0 = <double> (w * t_intg_us)
            t_end = <double> ((w + 1) * t_intg_us)
            for f in range(n_f):
                for oy in range(h_out):
                    for ox in range(w_out):
                        v[f, oy, ox] = v_pre0
                        t_last[f, oy, ox] = t0
                        n_seen[f, oy, ox] = 0

            for i in range(win_start[w], win_start[w + 1]):
                te = <double> ev_t[i]
                ex = <int> ev_x[i]
                ey = <int> ev_y[i]
                ep = <int> ev_p[i]
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
                            vv = _evolve(
                                v[f, oy, ox],
                                te - t_last[f, oy, ox],
                                g_p[f], g_n[f], i_null[f], c_k, v_dd,
                            )
                            d = draws[f, n_seen[f, oy, ox]] if use_draws else 0.0
                            v[f, oy, ox] = _apply(
                                vv, weights[f, ep, ty, tx], d, sigma,
                                k_step, nonlinear, v_dd, v_pre0,
                            )
                            t_last[f, oy, ox] = te
                            n_seen[f, oy, ox] += 1

            for f in range(n_f):
                for oy in range(h_out):
                    for ox in range(w_out):
                        vv = _evolve(
                            v[f, oy, ox],
                            t_end - t_last[f, oy, ox],
                            g_p[f], g_n[f], i_null[f], c_k, v_dd,
                        )
                        out_spikes[w, f, oy, ox] = 1 if vv >= th else 0
                        if want_vpre:
                            vpre_view[w, f, oy, ox] = vv
