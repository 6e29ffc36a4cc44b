"""Pure-NumPy reference kernels (backend ``python``).

These are the semantic ground truth for the compiled extension: same state
layout, same update order, same guards.  The Hodgkin-Huxley integrator is
vectorized across traces; the kd-tree query is a straightforward iterative
descent.  Both exist so the package runs (slowly) anywhere, and so the
compiled kernels have something exact to be tested against.
"""

from __future__ import annotations

import numpy as np

#: Gate state order used everywhere: Na activation/inactivation, delayed
#: rectifier, slow non-inactivating K, and the two L-type Ca gates.
GATE_NAMES = ("m", "h", "n", "p", "q", "r")


def vtrap(x: np.ndarray, c: float) -> np.ndarray:
    """Evaluate x / (exp(x/c) - 1) with its removable singularity at x = 0.

    The limit at x -> 0 is c; expm1 keeps the expression accurate for small x.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    zero = x == 0.0
    nz = ~zero
    out[zero] = c
    out[nz] = x[nz] / np.expm1(x[nz] / c)
    return out


def hh_rate_constants(
    v: np.ndarray,
    v_t: np.ndarray,
    tau_max: np.ndarray,
    r_ss: np.ndarray,
    k_tadj: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Steady states and effective time constants for all six gates.

    Kinetics follow Pospischil et al. 2008 (Biol Cybern 99:427-441): Traub-style
    Na/K rates shifted by the spike-threshold parameter ``v_t``, the slow
    non-inactivating K current of Yamada et al. 1989, and the high-threshold Ca
    current of Reuveni et al. 1993.  Two global modifiers act on the kinetics:
    a Q10 temperature factor ``k_tadj`` speeds every gate up, and the
    dimensionless scale ``r_ss`` slows the alpha/beta gates down (the p gate
    uses only the temperature factor).

    Returns ``(z_inf, tau_eff)`` with trailing axis ordered as GATE_NAMES.
    """
    v = np.asarray(v, dtype=np.float64)
    u = v - v_t

    alpha_m = 0.32 * vtrap(13.0 - u, 4.0)
    beta_m = 0.28 * vtrap(u - 40.0, 5.0)
    alpha_h = 0.128 * np.exp((17.0 - u) / 18.0)
    beta_h = 4.0 / (1.0 + np.exp((40.0 - u) / 5.0))
    alpha_n = 0.032 * vtrap(15.0 - u, 5.0)
    beta_n = 0.5 * np.exp((10.0 - u) / 40.0)

    p_inf = 1.0 / (1.0 + np.exp(-(v + 35.0) / 10.0))
    tau_p = tau_max / (3.3 * np.exp((v + 35.0) / 20.0) + np.exp(-(v + 35.0) / 20.0))

    alpha_q = 0.055 * vtrap(-27.0 - v, 3.8)
    beta_q = 0.94 * np.exp((-75.0 - v) / 17.0)
    alpha_r = 0.000457 * np.exp((-13.0 - v) / 50.0)
    beta_r = 0.0065 / (np.exp((-15.0 - v) / 28.0) + 1.0)

    rate_scale = k_tadj / r_ss
    z_inf = np.stack(
        [
            alpha_m / (alpha_m + beta_m),
            alpha_h / (alpha_h + beta_h),
            alpha_n / (alpha_n + beta_n),
            p_inf,
            alpha_q / (alpha_q + beta_q),
            alpha_r / (alpha_r + beta_r),
        ],
        axis=-1,
    )
    tau_eff = np.stack(
        [
            1.0 / ((alpha_m + beta_m) * rate_scale),
            1.0 / ((alpha_h + beta_h) * rate_scale),
            1.0 / ((alpha_n + beta_n) * rate_scale),
            tau_p / k_tadj,
            1.0 / ((alpha_q + beta_q) * rate_scale),
            1.0 / ((alpha_r + beta_r) * rate_scale),
        ],
        axis=-1,
    )
    return z_inf, tau_eff


def hh_integrate_batch(
    params: np.ndarray,
    i_dens: np.ndarray,
    gates0: np.ndarray,
    dt: float,
    n_steps: int,
    on_idx: int,
    off_idx: int,
    v0: float,
    e_na: float,
    e_k: float,
    e_ca: float,
    k_tadj: float,
    v_div: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Integrate a batch of single-compartment traces with exponential Euler.

    ``params`` rows are (C, g_Na, g_K, g_M, g_leak, g_L, tau_max, V_T, E_leak,
    r_SS); conductances are membrane densities in mS/cm^2, ``i_dens`` is the
    stimulus current density in uA/cm^2 applied on steps [on_idx, off_idx).
    Each step updates the gates first (exact relaxation toward their steady
    state at the current voltage) and then the voltage with conductances
    frozen at the new gate values, which is also an exact linear relaxation.
    Rows whose voltage leaves [-v_div, v_div] or turns non-finite are frozen
    and reported through the returned step index (-1 means no divergence).

    Returns ``(v_out (B, n_steps+1), gates_final (B, 6), diverge_step (B,))``.
    """
    params = np.asarray(params, dtype=np.float64)
    batch = params.shape[0]
    cap = params[:, 0]
    g_na, g_k, g_m = params[:, 1], params[:, 2], params[:, 3]
    g_leak, g_ca = params[:, 4], params[:, 5]
    tau_max, v_t, e_leak, r_ss = params[:, 6], params[:, 7], params[:, 8], params[:, 9]

    v = np.full(batch, v0, dtype=np.float64)
    gates = np.array(gates0, dtype=np.float64, copy=True)
    v_out = np.empty((batch, n_steps + 1), dtype=np.float64)
    v_out[:, 0] = v
    alive = np.ones(batch, dtype=bool)
    diverge_step = np.full(batch, -1, dtype=np.int64)

    for step in range(n_steps):
        z_inf, tau_eff = hh_rate_constants(v, v_t, tau_max, r_ss, k_tadj)
        gates_new = z_inf + (gates - z_inf) * np.exp(-dt / tau_eff)
        gates = np.where(alive[:, None], gates_new, gates)

        m, h, n = gates[:, 0], gates[:, 1], gates[:, 2]
        p, q, r = gates[:, 3], gates[:, 4], gates[:, 5]
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
        i_ext = i_dens if on_idx <= step < off_idx else 0.0
        v_inf = (i_rev + i_ext) / g_tot
        v_new = v_inf + (v - v_inf) * np.exp(-dt * g_tot / cap)
        v = np.where(alive, v_new, v)
        v_out[:, step + 1] = v

        bad = alive & (~np.isfinite(v) | (np.abs(v) > v_div))
        if bad.any():
            diverge_step[bad] = step + 1
            alive &= ~bad

    return v_out, gates, diverge_step


def kd_query_batch(
    tree: tuple[np.ndarray, ...],
    queries: np.ndarray,
    exclude: np.ndarray | None,
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest neighbour for each query against a flattened kd-tree.

    ``tree`` is the array bundle produced by ``fslm.metrics.KdTree``:
    (split_dim, split_val, left, right, start, end, perm, points_reordered).
    ``exclude[i]`` (original point index, -1 for none) is skipped for query i,
    which is how self-matches are excluded when querying a tree built on the
    query set itself.  Distance ties are broken toward the lowest original
    point index, independent of traversal order.

    Returns ``(indices, squared_distances)``.
    """
    split_dim, split_val, left, right, start, end, perm, pts = tree
    queries = np.asarray(queries, dtype=np.float64)
    n_q = queries.shape[0]
    out_idx = np.empty(n_q, dtype=np.int64)
    out_d2 = np.empty(n_q, dtype=np.float64)

    for qi in range(n_q):
        q = queries[qi]
        skip = -1 if exclude is None else int(exclude[qi])
        best_d2 = np.inf
        best_idx = -1
        # stack entries: (node id, squared distance to the node's split slab)
        stack = [(0, 0.0)]
        while stack:
            node, bound = stack.pop()
            if bound > best_d2:
                continue
            dim = split_dim[node]
            if dim < 0:
                lo, hi = start[node], end[node]
                seg = pts[lo:hi]
                d2 = np.einsum("ij,ij->i", seg - q, seg - q)
                idxs = perm[lo:hi].astype(np.int64)
                if skip >= 0:
                    keep = idxs != skip
                    idxs, d2 = idxs[keep], d2[keep]
                if idxs.size:
                    dmin = float(d2.min())
                    j = int(idxs[d2 == dmin].min())
                    if dmin < best_d2 or (dmin == best_d2 and j < best_idx):
                        best_d2 = dmin
                        best_idx = j
                continue
            diff = q[dim] - split_val[node]
            if diff <= 0.0:
                near, far = left[node], right[node]
            else:
                near, far = right[node], left[node]
            stack.append((far, diff * diff))
            stack.append((near, bound))
        out_idx[qi] = best_idx
        out_d2[qi] = best_d2
    return out_idx, out_d2
