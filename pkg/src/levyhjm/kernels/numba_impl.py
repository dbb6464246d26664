"""Jitted path engine: the default backend for the hot loops.

Same semantics, random-stream layout, and iteration counts as the numpy
backend; the per-path scalar loops compile with numba and release the GIL
so chunks can run on a thread pool.  See numpy_impl for the shared
conventions.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

BISECT_ITERS = 48
MAX_STEP_EVENTS = 64

RISKFREE, MARKET, TREASURY, PAR, MULTIPLE = 0, 1, 2, 3, 4

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True, nogil=True, inline="always")
def _mix64(x):
    x = (x ^ (x >> np.uint64(30))) * _MIX1
    x = (x ^ (x >> np.uint64(27))) * _MIX2
    return x ^ (x >> np.uint64(31))


@njit(cache=True, nogil=True, inline="always")
def _stream_key(seed, salt, path_id):
    root = _mix64(np.uint64(seed) ^ (np.uint64(salt) * _GOLDEN))
    return _mix64(root + (np.uint64(path_id) + np.uint64(1)) * _GOLDEN)


@njit(cache=True, nogil=True, inline="always")
def _uniform(key, ctr):
    bits = _mix64(key + (np.uint64(ctr) + np.uint64(1)) * _GOLDEN)
    return (float(bits >> np.uint64(11)) + 0.5) * (2.0 ** -53)


@njit(cache=True, nogil=True)
def _normals(key, base, out):
    n = out.shape[0]
    n_pairs = (n + 1) // 2
    for p in range(n_pairs):
        u1 = _uniform(key, base + 2 * p)
        u2 = _uniform(key, base + 2 * p + 1)
        r = math.sqrt(-2.0 * math.log(u1))
        a = 2.0 * math.pi * u2
        z0 = r * math.cos(a)
        z1 = r * math.sin(a)
        out[2 * p] = z0
        if 2 * p + 1 < n:
            out[2 * p + 1] = z1


@njit(cache=True, nogil=True, inline="always")
def _poisson(mu, u, cap):
    if mu <= 0.0:
        return 0
    p = math.exp(-mu)
    cdf = p
    k = 0
    while u > cdf:
        k += 1
        if k > cap:
            return -1
        p = p * (mu / k)
        cdf = cdf + p
    return k


@njit(cache=True, nogil=True, inline="always")
def _trapz(row, lo, hi, dx):
    if hi <= lo:
        return 0.0
    s = 0.0
    for k in range(lo, hi + 1):
        s += row[k]
    return dx * (s - 0.5 * (row[lo] + row[hi]))


@njit(cache=True, nogil=True)
def run_chunk_jit(
    seed, path_lo, path_hi,
    dt, n_steps, mat, scheme, n_live, d,
    f0, g0, sigma, hjm, chol, drift_eff,
    atom_y, atom_rho, atom_cap, stride,
    lam_off, spread_coupled, lam_def_table, deltas,
    loss_l, gamma_coupled, gamma_table, cox_cap, cox_stride,
    i0, alpha_shift, antithetic, anti_offset,
    cp_idx, check_ordering,
    # outputs
    dhat, rating_cp, v_cp, tau, pre_rating, defaulted_out, n_jumps_out,
    diag_out,
):
    """diag_out: [order_viol, infeas_flag, infeas_rating, infeas_node,
    min_spread]."""
    N = n_steps + 1
    n_curves = n_live + 1
    n_atoms = atom_y.shape[1]
    absorbing = scheme == MARKET or scheme == TREASURY or scheme == PAR
    has_chain = absorbing or scheme == MULTIPLE
    n_cp = cp_idx.shape[0]
    n_norm_slots = 2 * ((d + 1) // 2)

    order_viol = 0
    min_spread = 1e300
    infeas_flag = 0
    infeas_rating = -1
    infeas_node = -1

    g = np.empty((n_curves, N))
    ct = np.empty((n_curves, N))
    sch = np.empty((n_live if n_live > 0 else 1, N))
    dz = np.empty(d)
    xi = np.empty(d)
    lam_def_s = np.empty(n_live if n_live > 0 else 1)
    lam_def_s1 = np.empty(n_live if n_live > 0 else 1)
    ipre = np.empty(n_live if n_live > 0 else 1)
    levy_keys = np.empty(n_curves, dtype=np.uint64)

    for p in range(path_lo, path_hi):
        row = p - path_lo
        key_id = p
        mirrored = False
        if antithetic and anti_offset > 0 and p >= anti_offset:
            key_id = p - anti_offset
            mirrored = True
        for c in range(n_curves):
            levy_keys[c] = _stream_key(seed, 0x101 + c, key_id)
        chain_key = _stream_key(seed, 0x202, key_id)
        cox_key = _stream_key(seed, 0x303, key_id)

        for k in range(N):
            g[0, k] = f0[k]
        for i in range(n_live):
            for k in range(N):
                g[1 + i, k] = g0[i, k]
        bank = 0.0
        state = i0
        is_def = False
        dhat_const = 0.0
        delta_def = 0.0
        v = 1.0
        evt = 0
        jumps = 0
        target = 0.0
        if has_chain:
            target = -math.log(_uniform(chain_key, 0))
        acc = 0.0
        stop = False

        for s in range(n_steps):
            if stop:
                break
            r_s = g[0, s]

            # default intensities / reorganization intensity at node s
            if absorbing:
                for i in range(n_live):
                    if spread_coupled:
                        spread = g[1 + i, s] - r_s
                        if not is_def:
                            if spread < min_spread:
                                min_spread = spread
                            if spread <= 0.0:
                                infeas_flag = 1
                                infeas_rating = i
                                infeas_node = s
                                stop = True
                                break
                        lam_def_s[i] = spread / (1.0 - deltas[s, i])
                    else:
                        lam_def_s[i] = lam_def_table[s, i]
                if stop:
                    break
            gamma_s = 0.0
            if scheme == MULTIPLE:
                if gamma_coupled:
                    spread = g[1 + state, s] - r_s
                    if spread < min_spread:
                        min_spread = spread
                    if spread <= 0.0:
                        infeas_flag = 1
                        infeas_rating = state
                        infeas_node = s
                        break
                    gamma_s = spread / loss_l[s]
                else:
                    gamma_s = gamma_table[s]

            # cumulative integrals from t_s along maturity
            for c in range(n_curves):
                ct[c, s] = 0.0
                for k in range(s + 1, N):
                    ct[c, k] = ct[c, k - 1] + 0.5 * dt * (g[c, k - 1] + g[c, k])
            if absorbing:
                for i in range(n_live):
                    ipre[i] = ct[1 + i, mat]

            # scheme drift terms on k >= s+1
            for i in range(n_live):
                for k in range(s + 1, N):
                    sch[i, k] = 0.0
                for j in range(n_live):
                    if j == i:
                        continue
                    lam = lam_off[s, i, j]
                    if lam == 0.0:
                        continue
                    for k in range(s + 1, N):
                        diff_cum = ct[1 + i, k] - ct[1 + j, k]
                        sch[i, k] += lam * (g[1 + i, k] - g[1 + j, k]) * math.exp(diff_cum)
                if scheme == TREASURY:
                    coef = deltas[s, i] * lam_def_s[i]
                    for k in range(s + 1, N):
                        diff_cum = ct[1 + i, k] - ct[0, k]
                        sch[i, k] += coef * (g[1 + i, k] - g[0, k]) * math.exp(diff_cum)
                elif scheme == PAR:
                    coef = deltas[s, i] * lam_def_s[i]
                    for k in range(s + 1, N):
                        sch[i, k] += coef * g[1 + i, k] * math.exp(ct[1 + i, k])

            # factor increments and evolution
            for c in range(n_curves):
                if c >= 1 and absorbing and is_def:
                    continue
                base = s * stride[c]
                _normals(levy_keys[c], base, xi)
                if mirrored:
                    for f in range(d):
                        xi[f] = -xi[f]
                sq = math.sqrt(dt)
                for f in range(d):
                    w = 0.0
                    for q_ in range(d):
                        w += chol[c, f, q_] * xi[q_]
                    dz[f] = drift_eff[c, f] * dt + sq * w
                off = n_norm_slots
                for a_ in range(n_atoms):
                    rho = atom_rho[c, a_]
                    cap = atom_cap[c, a_]
                    u = _uniform(levy_keys[c], base + off)
                    cnt = _poisson(rho * dt, u, cap)
                    if cnt < 0:
                        infeas_flag = 2
                        infeas_node = s
                        stop = True
                        break
                    if cnt > 0:
                        for f in range(d):
                            dz[f] += cnt * atom_y[c, a_, f]
                    off += 1 + cap
                if stop:
                    break
                for k in range(s + 1, N):
                    inc = (hjm[c, s, k] + alpha_shift) * dt
                    if c >= 1:
                        inc += sch[c - 1, k] * dt
                    for f in range(d):
                        inc += sigma[c, s, k, f] * dz[f]
                    g[c, k] += inc
            if stop:
                break

            r_s1 = g[0, s + 1]
            if absorbing:
                for i in range(n_live):
                    if spread_coupled:
                        spread = g[1 + i, s + 1] - r_s1
                        if not is_def:
                            if spread < min_spread:
                                min_spread = spread
                            if spread <= 0.0:
                                infeas_flag = 1
                                infeas_rating = i
                                infeas_node = s + 1
                                stop = True
                                break
                        lam_def_s1[i] = spread / (1.0 - deltas[s + 1, i])
                    else:
                        lam_def_s1[i] = lam_def_table[s + 1, i]
                if stop:
                    break
            gamma_s1 = 0.0
            if scheme == MULTIPLE:
                if gamma_coupled:
                    spread = g[1 + state, s + 1] - r_s1
                    if spread < min_spread:
                        min_spread = spread
                    if spread <= 0.0:
                        infeas_flag = 1
                        infeas_rating = state
                        infeas_node = s + 1
                        break
                    gamma_s1 = spread / loss_l[s + 1]
                else:
                    gamma_s1 = gamma_table[s + 1]

            if check_ordering and n_live > 0 and not is_def:
                for k in range(s + 1, N):
                    prev = g[0, k]
                    for i in range(n_live):
                        cur = g[1 + i, k]
                        if cur <= prev:
                            order_viol += 1
                        prev = cur

            # chain transitions within (t_s, t_{s+1}]
            if has_chain and not is_def:
                x = 0.0
                guard = 0
                while True:
                    guard += 1
                    if guard > MAX_STEP_EVENTS:
                        infeas_flag = 3
                        infeas_node = s
                        stop = True
                        break
                    w0 = x / dt
                    q0 = 0.0
                    q1 = 0.0
                    for j in range(n_live):
                        if j == state:
                            continue
                        q0 += lam_off[s, state, j] + (lam_off[s + 1, state, j]
                                                      - lam_off[s, state, j]) * w0
                        q1 += lam_off[s + 1, state, j]
                    if absorbing:
                        q0 += lam_def_s[state] + (lam_def_s1[state] - lam_def_s[state]) * w0
                        q1 += lam_def_s1[state]
                    a_seg = acc + 0.5 * (dt - x) * (q0 + q1)
                    if a_seg < target:
                        acc = a_seg
                        break
                    lo = x
                    hi = dt
                    for _ in range(BISECT_ITERS):
                        mid = 0.5 * (lo + hi)
                        wm = mid / dt
                        qm = 0.0
                        for j in range(n_live):
                            if j == state:
                                continue
                            qm += lam_off[s, state, j] + (lam_off[s + 1, state, j]
                                                          - lam_off[s, state, j]) * wm
                        if absorbing:
                            qm += lam_def_s[state] + (lam_def_s1[state] - lam_def_s[state]) * wm
                        am = acc + 0.5 * (mid - x) * (q0 + qm)
                        if am >= target:
                            hi = mid
                        else:
                            lo = mid
                    y = 0.5 * (lo + hi)
                    wy = y / dt
                    tot = 0.0
                    wdef = 0.0
                    for j in range(n_live):
                        if j == state:
                            continue
                        tot += lam_off[s, state, j] + (lam_off[s + 1, state, j]
                                                       - lam_off[s, state, j]) * wy
                    if absorbing:
                        wdef = lam_def_s[state] + (lam_def_s1[state] - lam_def_s[state]) * wy
                        tot += wdef
                    if tot < 1e-300:
                        tot = 1e-300
                    u_dest = _uniform(chain_key, 2 * evt + 1)
                    cum = 0.0
                    dest = -1
                    for j in range(n_live):
                        if j == state:
                            continue
                        cum += (lam_off[s, state, j] + (lam_off[s + 1, state, j]
                                                        - lam_off[s, state, j]) * wy) / tot
                        if cum >= u_dest:
                            dest = j
                            break
                    if dest < 0:
                        dest = n_live if absorbing else dest
                        if not absorbing:
                            # numerical corner: assign the last non-state class
                            for j in range(n_live - 1, -1, -1):
                                if j != state:
                                    dest = j
                                    break
                    jumps += 1
                    evt += 1
                    if absorbing and dest == n_live:
                        yd = y
                        bank_tau = bank + r_s * yd + 0.5 * (r_s1 - r_s) * yd * yd / dt
                        tau[row] = s * dt + yd
                        pre_rating[row] = state
                        is_def = True
                        dd = deltas[s, state]
                        if scheme == MARKET:
                            dhat_const = dd * math.exp(-ipre[state] - bank_tau)
                        elif scheme == PAR:
                            dhat_const = dd * math.exp(-bank_tau)
                        else:
                            delta_def = dd
                        break
                    state = dest
                    x = y
                    acc = 0.0
                    target = -math.log(_uniform(chain_key, 2 * evt))
                if stop:
                    break

            # reorganization events, rating frozen at step start
            if scheme == MULTIPLE:
                majorant = gamma_s if gamma_s >= gamma_s1 else gamma_s1
                base = s * cox_stride
                u0 = _uniform(cox_key, base)
                cnt = _poisson(majorant * dt, u0, cox_cap)
                if cnt < 0:
                    infeas_flag = 2
                    infeas_node = s
                    break
                for j in range(cnt):
                    u_pos = _uniform(cox_key, base + 1 + 2 * j)
                    u_acc = _uniform(cox_key, base + 2 + 2 * j)
                    g_x = gamma_s + (gamma_s1 - gamma_s) * u_pos
                    if u_acc * majorant <= g_x:
                        v = v * (1.0 - loss_l[s])

            bank += 0.5 * dt * (r_s + r_s1)

            for c_ in range(n_cp):
                if cp_idx[c_] == s + 1:
                    node = s + 1
                    i_f = _trapz(g[0], node, mat, dt)
                    if scheme == RISKFREE:
                        dhat[row, c_] = math.exp(-bank - i_f)
                        rating_cp[row, c_] = 0
                    elif scheme == MULTIPLE:
                        ig = _trapz(g[1 + state], node, mat, dt)
                        dhat[row, c_] = v * math.exp(-bank - ig)
                        rating_cp[row, c_] = state
                        v_cp[row, c_] = v
                    else:
                        if is_def:
                            if scheme == TREASURY:
                                dhat[row, c_] = delta_def * math.exp(-bank - i_f)
                            else:
                                dhat[row, c_] = dhat_const
                            rating_cp[row, c_] = n_live
                        else:
                            ig = _trapz(g[1 + state], node, mat, dt)
                            dhat[row, c_] = math.exp(-bank - ig)
                            rating_cp[row, c_] = state
                    break

        defaulted_out[row] = is_def
        n_jumps_out[row] = jumps
        if infeas_flag != 0:
            break

    diag_out[0] = float(order_viol)
    diag_out[1] = float(infeas_flag)
    diag_out[2] = float(infeas_rating)
    diag_out[3] = float(infeas_node)
    diag_out[4] = min_spread


def run_chunk(tab, path_lo: int, path_hi: int):
    """Wrapper matching the numpy backend's interface."""
    P = path_hi - path_lo
    n_cp = len(tab.cp_idx)
    dhat = np.zeros((P, n_cp))
    rating_cp = np.zeros((P, n_cp), dtype=np.int8)
    v_cp = np.ones((P, n_cp))
    tau = np.full(P, np.nan)
    pre_rating = np.full(P, -1, dtype=np.int64)
    defaulted = np.zeros(P, dtype=bool)
    n_jumps = np.zeros(P, dtype=np.int64)
    diag = np.zeros(5)
    run_chunk_jit(
        tab.seed, path_lo, path_hi,
        tab.dt, tab.n_steps, tab.mat_idx, tab.scheme_code, tab.n_live, tab.d_eff,
        tab.f0, tab.g0, tab.sigma, tab.hjm, tab.chol, tab.drift_eff,
        tab.atom_y, tab.atom_rho, tab.atom_cap, tab.stride,
        tab.lam_off, tab.spread_coupled, tab.lam_def_table, tab.deltas,
        tab.loss_L, tab.gamma_coupled, tab.gamma_table, tab.cox_cap, tab.cox_stride,
        tab.i0, tab.alpha_shift, tab.antithetic, tab.anti_offset,
        tab.cp_idx, tab.check_ordering,
        dhat, rating_cp, v_cp, tau, pre_rating, defaulted, n_jumps, diag,
    )
    infeas_flag = int(diag[1])
    if infeas_flag == 2:
        raise RuntimeError("poisson count exceeded its slot budget")
    if infeas_flag == 3:
        raise RuntimeError("too many chain events in one step")
    return dict(dhat=dhat, rating_cp=rating_cp, v_cp=v_cp, tau=tau,
                pre_rating=pre_rating, defaulted=defaulted, n_jumps=n_jumps,
                order_viol=int(diag[0]), min_spread=float(diag[4]),
                infeasible=(infeas_flag == 1, int(diag[2]), int(diag[3])))
