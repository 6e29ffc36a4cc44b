# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the pure-NumPy kernels in ``fslm._core.fallback``.

Same state layout, same update order, same guards; only the loops are C.
Agreement between the two backends is covered by tests, so any semantic
change here must be mirrored in the fallback module.
"""

import numpy as np

from libc.math cimport INFINITY, exp, expm1, fabs, isfinite


cdef inline double _vtrap(double x, double c) noexcept nogil:
    # x / (exp(x/c) - 1) with its removable singularity at x = 0 (limit c).
    if x == 0.0:
        return c
    return x / expm1(x / c)


cdef long _hh_one(
    double cap, double g_na, double g_k, double g_m, double g_leak,
    double g_ca, double tau_max, double v_t, double e_leak, double r_ss,
    double i_dens, const double* gates0, double dt, long n_steps,
    long on_idx, long off_idx, double v0, double e_na, double e_k,
    double e_ca, double k_tadj, double v_div,
    double* v_out, double* gates_out,
) noexcept nogil:
    cdef double v = v0
    cdef double m = gates0[0], h = gates0[1], n = gates0[2]
    cdef double p = gates0[3], q = gates0[4], r = gates0[5]
    cdef double rate_scale = k_tadj / r_ss
    cdef double u, alpha, beta, z_inf, tau_eff
    cdef double p_inf, tau_p
    cdef double g_na_eff, g_k_eff, g_m_eff, g_ca_eff, g_tot, i_rev, i_ext
    cdef double v_inf
    cdef long step, t
    cdef long diverged = -1

    v_out[0] = v
    for step in range(n_steps):
        u = v - v_t

        alpha = 0.32 * _vtrap(13.0 - u, 4.0)
        beta = 0.28 * _vtrap(u - 40.0, 5.0)
        z_inf = alpha / (alpha + beta)
        tau_eff = 1.0 / ((alpha + beta) * rate_scale)
        m = z_inf + (m - z_inf) * exp(-dt / tau_eff)

        alpha = 0.128 * exp((17.0 - u) / 18.0)
        beta = 4.0 / (1.0 + exp((40.0 - u) / 5.0))
        z_inf = alpha / (alpha + beta)
        tau_eff = 1.0 / ((alpha + beta) * rate_scale)
        h = z_inf + (h - z_inf) * exp(-dt / tau_eff)

        alpha = 0.032 * _vtrap(15.0 - u, 5.0)
        beta = 0.5 * exp((10.0 - u) / 40.0)
        z_inf = alpha / (alpha + beta)
        tau_eff = 1.0 / ((alpha + beta) * rate_scale)
        n = z_inf + (n - z_inf) * exp(-dt / tau_eff)

        p_inf = 1.0 / (1.0 + exp(-(v + 35.0) / 10.0))
        tau_p = tau_max / (3.3 * exp((v + 35.0) / 20.0) + exp(-(v + 35.0) / 20.0))
        tau_eff = tau_p / k_tadj
        p = p_inf + (p - p_inf) * exp(-dt / tau_eff)

        alpha = 0.055 * _vtrap(-27.0 - v, 3.8)
        beta = 0.94 * exp((-75.0 - v) / 17.0)
        z_inf = alpha / (alpha + beta)
        tau_eff = 1.0 / ((alpha + beta) * rate_scale)
        q = z_inf + (q - z_inf) * exp(-dt / tau_eff)

        alpha = 0.000457 * exp((-13.0 - v) / 50.0)
        beta = 0.0065 / (exp((-15.0 - v) / 28.0) + 1.0)
        z_inf = alpha / (alpha + beta)
        tau_eff = 1.0 / ((alpha + beta) * rate_scale)
        r = z_inf + (r - z_inf) * exp(-dt / tau_eff)

        g_na_eff = g_na * m * m * m * h
        g_k_eff = g_k * n * n * n * n
        g_m_eff = g_m * p
        g_ca_eff = g_ca * q * q * r
        g_tot = g_na_eff + g_k_eff + g_m_eff + g_leak + g_ca_eff
        i_rev = (
            g_na_eff * e_na
            + (g_k_eff + g_m_eff) * e_k
            + g_leak * e_leak
            + g_ca_eff * e_ca
        )
        i_ext = i_dens if (on_idx <= step) and (step < off_idx) else 0.0
        v_inf = (i_rev + i_ext) / g_tot
        v = v_inf + (v - v_inf) * exp(-dt * g_tot / cap)
        v_out[step + 1] = v

        if (not isfinite(v)) or fabs(v) > v_div:
            diverged = step + 1
            # freeze the trace: remaining samples hold the last voltage
            for t in range(step + 2, n_steps + 1):
                v_out[t] = v
            break

    gates_out[0] = m
    gates_out[1] = h
    gates_out[2] = n
    gates_out[3] = p
    gates_out[4] = q
    gates_out[5] = r
    return diverged


def hh_integrate_batch(
    object params,
    object i_dens,
    object gates0,
    double dt,
    long n_steps,
    long on_idx,
    long off_idx,
    double v0,
    double e_na,
    double e_k,
    double e_ca,
    double k_tadj,
    double v_div,
):
    """Batch single-compartment integration; see the fallback for semantics."""
    cdef double[:, ::1] par = np.ascontiguousarray(params, dtype=np.float64)
    cdef double[::1] cur = np.ascontiguousarray(i_dens, dtype=np.float64)
    cdef double[:, ::1] g0 = np.ascontiguousarray(gates0, dtype=np.float64)
    cdef long batch = par.shape[0]
    v_out_arr = np.empty((batch, n_steps + 1), dtype=np.float64)
    gates_arr = np.empty((batch, 6), dtype=np.float64)
    diverge_arr = np.empty(batch, dtype=np.int64)
    cdef double[:, ::1] v_out = v_out_arr
    cdef double[:, ::1] gates = gates_arr
    cdef long[::1] diverge = diverge_arr
    cdef long b
    with nogil:
        for b in range(batch):
            diverge[b] = _hh_one(
                par[b, 0], par[b, 1], par[b, 2], par[b, 3], par[b, 4],
                par[b, 5], par[b, 6], par[b, 7], par[b, 8], par[b, 9],
                cur[b], &g0[b, 0], dt, n_steps, on_idx, off_idx, v0,
                e_na, e_k, e_ca, k_tadj, v_div,
                &v_out[b, 0], &gates[b, 0],
            )
    return v_out_arr, gates_arr, diverge_arr


def kd_query_batch(object tree, object queries, object exclude):
    """Nearest neighbour per query; ties go to the lowest original index."""
    split_dim_a, split_val_a, left_a, right_a, start_a, end_a, perm_a, pts_a = tree
    cdef int[::1] split_dim = np.ascontiguousarray(split_dim_a, dtype=np.int32)
    cdef double[::1] split_val = np.ascontiguousarray(split_val_a, dtype=np.float64)
    cdef int[::1] left = np.ascontiguousarray(left_a, dtype=np.int32)
    cdef int[::1] right = np.ascontiguousarray(right_a, dtype=np.int32)
    cdef int[::1] start = np.ascontiguousarray(start_a, dtype=np.int32)
    cdef int[::1] end = np.ascontiguousarray(end_a, dtype=np.int32)
    cdef int[::1] perm = np.ascontiguousarray(perm_a, dtype=np.int32)
    cdef double[:, ::1] pts = np.ascontiguousarray(pts_a, dtype=np.float64)
    cdef double[:, ::1] qs = np.ascontiguousarray(queries, dtype=np.float64)

    cdef long n_q = qs.shape[0]
    cdef long dims = qs.shape[1]
    out_idx_arr = np.empty(n_q, dtype=np.int64)
    out_d2_arr = np.empty(n_q, dtype=np.float64)
    cdef long[::1] out_idx = out_idx_arr
    cdef double[::1] out_d2 = out_d2_arr

    cdef long[::1] skip
    if exclude is None:
        skip = np.full(n_q, -1, dtype=np.int64)
    else:
        skip = np.ascontiguousarray(exclude, dtype=np.int64)

    # 4096 entries is far deeper than any balanced median-split tree needs
    # (stack depth stays below tree height + 1).
    cdef int node_stack[4096]
    cdef double bound_stack[4096]
    cdef long qi, t, j, d, top, near, far
    cdef int node, dim
    cdef double best_d2, diff, d2, bound, coord
    cdef long best_idx, skip_i

    with nogil:
        for qi in range(n_q):
            skip_i = skip[qi]
            best_d2 = INFINITY
            best_idx = -1
            top = 0
            node_stack[0] = 0
            bound_stack[0] = 0.0
            top = 1
            while top > 0:
                top -= 1
                node = node_stack[top]
                bound = bound_stack[top]
                if bound > best_d2:
                    continue
                dim = split_dim[node]
                if dim < 0:
                    for t in range(start[node], end[node]):
                        j = perm[t]
                        if j == skip_i:
                            continue
                        d2 = 0.0
                        for d in range(dims):
                            coord = pts[t, d] - qs[qi, d]
                            d2 += coord * coord
                        if d2 < best_d2 or (d2 == best_d2 and j < best_idx):
                            best_d2 = d2
                            best_idx = j
                    continue
                diff = qs[qi, dim] - split_val[node]
                if diff <= 0.0:
                    near = left[node]
                    far = right[node]
                else:
                    near = right[node]
                    far = left[node]
                node_stack[top] = <int> far
                bound_stack[top] = diff * diff
                top += 1
                node_stack[top] = <int> near
                bound_stack[top] = bound
                top += 1
            out_idx[qi] = best_idx
            out_d2[qi] = best_d2
    return out_idx_arr, out_d2_arr
