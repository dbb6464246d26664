"""Vectorized (pure numpy) path engine: the fallback backend.

One chunk of paths is advanced step by step with array operations across
the chunk.  Semantics, random-stream layout, and iteration counts are
identical to the jitted backend, so a chunk's results do not depend on the
backend beyond floating-point rounding of vectorized transcendentals.

Conventions shared by both backends:

* every curve row holds current live values at maturities >= the clock and
  frozen diagonal history below it;
* chain jump times are resolved by fixed-depth bisection (48 halvings) on
  the two-point-trapezoid integrated exit intensity, with intensities
  interpolated linearly inside the step;
* the reorganization (Cox) intensity is evaluated with the rating frozen
  at the step start, a weak-order-consistent approximation.
"""

from __future__ import annotations

import numpy as np

from .. import rng

BISECT_ITERS = 48
MAX_STEP_EVENTS = 64

# scheme codes
RISKFREE, MARKET, TREASURY, PAR, MULTIPLE = 0, 1, 2, 3, 4


def _trapz_rows(a: np.ndarray, dx: float) -> np.ndarray:
    if a.shape[1] < 2:
        return np.zeros(a.shape[0])
    return dx * (a.sum(axis=1) - 0.5 * (a[:, 0] + a[:, -1]))


def _cumtrapz_rows(a: np.ndarray, dx: float) -> np.ndarray:
    out = np.empty_like(a)
    out[:, 0] = 0.0
    if a.shape[1] > 1:
        np.cumsum(0.5 * dx * (a[:, 1:] + a[:, :-1]), axis=1, out=out[:, 1:])
    return out


def run_chunk(tab, path_lo: int, path_hi: int):
    """Simulate paths [path_lo, path_hi) and return chunk outputs.

    `tab` is an EngineTables instance (plain arrays and scalars).
    """
    P = path_hi - path_lo
    dt = tab.dt
    n_steps = tab.n_steps
    N = n_steps + 1
    mat = tab.mat_idx
    n_live = tab.n_live
    n_curves = n_live + 1
    d = tab.d_eff
    scheme = tab.scheme_code
    absorbing = scheme in (MARKET, TREASURY, PAR)
    cp_idx = tab.cp_idx
    n_cp = len(cp_idx)
    cp_pos = {int(k): c for c, k in enumerate(cp_idx)}

    ids = np.arange(path_lo, path_hi, dtype=np.int64)
    if tab.antithetic and tab.anti_offset > 0:
        key_ids = np.where(ids >= tab.anti_offset, ids - tab.anti_offset, ids)
        mirror = ids >= tab.anti_offset
    else:
        key_ids = ids
        mirror = np.zeros(P, dtype=bool)
    levy_keys = [rng.stream_keys(tab.seed, rng.SALT_LEVY + c, key_ids)
                 for c in range(n_curves)]
    chain_keys = rng.stream_keys(tab.seed, rng.SALT_CHAIN, key_ids)
    cox_keys = rng.stream_keys(tab.seed, rng.SALT_COX, key_ids)

    # mutable path state
    G = np.empty((P, n_curves, N))
    G[:, 0, :] = tab.f0[None, :]
    for i in range(n_live):
        G[:, 1 + i, :] = tab.g0[i][None, :]
    bank = np.zeros(P)
    state = np.full(P, tab.i0, dtype=np.int64)
    defaulted = np.zeros(P, dtype=bool)
    dhat_const = np.zeros(P)
    delta_def = np.zeros(P)
    tau = np.full(P, np.nan)
    pre_rating = np.full(P, -1, dtype=np.int64)
    v = np.ones(P)
    evt = np.zeros(P, dtype=np.int64)
    n_jumps = np.zeros(P, dtype=np.int64)
    if absorbing or scheme == MULTIPLE:
        target = -np.log(rng.uniform(chain_keys, np.zeros(P, dtype=np.uint64)))
    else:
        target = np.zeros(P)
    acc = np.zeros(P)

    # outputs
    dhat = np.zeros((P, n_cp))
    rating_cp = np.zeros((P, n_cp), dtype=np.int8)
    v_cp = np.ones((P, n_cp))
    order_viol = 0
    min_spread = np.inf
    infeas = (False, -1, -1)

    lam_def_next = None        # per-path default intensities at node s (cache)

    def lam_def_at(node, rows_diag_g, r_diag):
        if not absorbing:
            return None
        if tab.spread_coupled:
            spread = rows_diag_g - r_diag[:, None]
            return spread / (1.0 - tab.deltas[node][None, :])
        return np.tile(tab.lam_def_table[node][None, :], (P, 1))

    def gamma_at(node, rows_diag_g, r_diag, st):
        if scheme != MULTIPLE:
            return None
        if tab.gamma_coupled:
            spread = rows_diag_g[np.arange(P), st] - r_diag
            return spread / tab.loss_L[node]
        return np.full(P, tab.gamma_table[node])

    for s in range(n_steps):
        r_s = G[:, 0, s].copy()
        diag_g_s = G[:, 1:, s].copy() if n_live else np.zeros((P, 0))
        alive = ~defaulted

        if absorbing and tab.spread_coupled:
            spread_s = diag_g_s - r_s[:, None]
            live_spread = spread_s[alive]
            if live_spread.size:
                min_spread = min(min_spread, float(live_spread.min()))
                if np.any(live_spread <= 0.0):
                    bad = np.argwhere((spread_s <= 0.0) & alive[:, None])[0]
                    infeas = (True, int(bad[1]), s)
                    break
        if scheme == MULTIPLE and tab.gamma_coupled:
            spread_cur = diag_g_s[np.arange(P), state] - r_s
            min_spread = min(min_spread, float(spread_cur.min()))
            if np.any(spread_cur <= 0.0):
                i_bad = int(state[int(np.argmax(spread_cur <= 0.0))])
                infeas = (True, i_bad, s)
                break

        if lam_def_next is None:
            lam_def_s = lam_def_at(s, diag_g_s, r_s)
        else:
            lam_def_s = lam_def_next
        gamma_s = gamma_at(s, diag_g_s, r_s, state)

        # cumulative curve integrals from t_s (trapezoid along maturity)
        m_live = N - s
        ct = np.empty((n_curves, P, m_live))
        for c in range(n_curves):
            ct[c] = _cumtrapz_rows(G[:, c, s:], dt)
        ipre = None
        if absorbing:
            ipre = np.empty((P, n_live))
            for i in range(n_live):
                ipre[:, i] = ct[1 + i][:, mat - s]

        # scheme drift terms on live maturities k >= s+1
        sch = np.zeros((P, n_live, m_live - 1)) if n_live else None
        for i in range(n_live):
            gi = G[:, 1 + i, s + 1:]
            for j in range(n_live):
                if j == i:
                    continue
                lam = tab.lam_off[s, i, j]
                if lam == 0.0:
                    continue
                diff_cum = ct[1 + i][:, 1:] - ct[1 + j][:, 1:]
                sch[:, i, :] += lam * (gi - G[:, 1 + j, s + 1:]) * np.exp(diff_cum)
            if scheme == TREASURY:
                diff_cum = ct[1 + i][:, 1:] - ct[0][:, 1:]
                coef = tab.deltas[s, i] * lam_def_s[:, i]
                sch[:, i, :] += coef[:, None] * (gi - G[:, 0, s + 1:]) * np.exp(diff_cum)
            elif scheme == PAR:
                coef = tab.deltas[s, i] * lam_def_s[:, i]
                sch[:, i, :] += coef[:, None] * gi * np.exp(ct[1 + i][:, 1:])

        # factor increments and evolution
        for c in range(n_curves):
            norms = rng.standard_normals(levy_keys[c], s * tab.stride[c], d)
            if tab.antithetic:
                norms = np.where(mirror[:, None], -norms, norms)
            dz = np.tile(tab.drift_eff[c][None, :] * dt, (P, 1))
            sq = np.sqrt(dt)
            for f in range(d):
                acc_w = np.zeros(P)
                for g_ in range(d):
                    acc_w += tab.chol[c, f, g_] * norms[:, g_]
                dz[:, f] += sq * acc_w
            off = 2 * ((d + 1) // 2)
            for a_ in range(tab.atom_y.shape[1]):
                rho = tab.atom_rho[c, a_]
                cap = int(tab.atom_cap[c, a_])
                u = rng.uniform(levy_keys[c], np.uint64(s * tab.stride[c] + off))
                cnt = rng.poisson_counts(rho * dt, u, cap)
                for f in range(d):
                    dz[:, f] += cnt * tab.atom_y[c, a_, f]
                off += 1 + cap

            drift_row = tab.hjm[c, s, s + 1:] + tab.alpha_shift
            inc = np.tile(drift_row[None, :] * dt, (P, 1))
            if c >= 1:
                inc += sch[:, c - 1, :] * dt
            for f in range(d):
                inc += tab.sigma[c, s, s + 1:, f][None, :] * dz[:, f][:, None]
            if c >= 1 and absorbing:
                G[:, c, s + 1:] += inc * alive[:, None]
            else:
                G[:, c, s + 1:] += inc

        r_s1 = G[:, 0, s + 1]
        diag_g_s1 = G[:, 1:, s + 1] if n_live else np.zeros((P, 0))
        if absorbing and tab.spread_coupled:
            spread_s1 = diag_g_s1 - r_s1[:, None]
            live_spread = spread_s1[alive]
            if live_spread.size:
                min_spread = min(min_spread, float(live_spread.min()))
                if np.any(live_spread <= 0.0):
                    bad = np.argwhere((spread_s1 <= 0.0) & alive[:, None])[0]
                    infeas = (True, int(bad[1]), s + 1)
                    break
        lam_def_next = lam_def_at(s + 1, diag_g_s1, r_s1)
        gamma_s1 = gamma_at(s + 1, diag_g_s1, r_s1, state)
        if scheme == MULTIPLE and tab.gamma_coupled:
            spread_cur = diag_g_s1[np.arange(P), state] - r_s1
            min_spread = min(min_spread, float(spread_cur.min()))
            if np.any(spread_cur <= 0.0):
                i_bad = int(state[int(np.argmax(spread_cur <= 0.0))])
                infeas = (True, i_bad, s + 1)
                break

        if tab.check_ordering and n_live:
            prev = G[:, 0, s + 1:]
            for i in range(n_live):
                cur = G[:, 1 + i, s + 1:]
                order_viol += int(np.sum((cur <= prev) & alive[:, None]))
                prev = cur

        # chain transitions within (t_s, t_{s+1}]
        if absorbing or scheme == MULTIPLE:
            n_states = n_live + 1 if absorbing else n_live
            off_s = tab.lam_off[s]
            off_s1 = tab.lam_off[s + 1]
            pending = alive.copy()
            x = np.zeros(P)
            guard = 0
            while np.any(pending):
                guard += 1
                if guard > MAX_STEP_EVENTS:
                    raise RuntimeError("too many chain events in one step")
                idx = np.nonzero(pending)[0]
                st = state[idx]
                w0 = x[idx] / dt
                q0 = np.zeros(len(idx))
                q1 = np.zeros(len(idx))
                for j in range(n_live):
                    l0 = off_s[st, j] + (off_s1[st, j] - off_s[st, j]) * w0
                    l1 = off_s1[st, j]
                    mask = st != j
                    q0 += np.where(mask, l0, 0.0)
                    q1 += np.where(mask, l1, 0.0)
                if absorbing:
                    ld0 = (lam_def_s[idx, st]
                           + (lam_def_next[idx, st] - lam_def_s[idx, st]) * w0)
                    ld1 = lam_def_next[idx, st]
                    q0 += ld0
                    q1 += ld1
                a_seg = acc[idx] + 0.5 * (dt - x[idx]) * (q0 + q1)
                cross = a_seg >= target[idx]
                no = idx[~cross]
                acc[no] = a_seg[~cross]
                pending[no] = False
                hit = idx[cross]
                if hit.size == 0:
                    continue
                # bisect the crossing offset y in [x, dt]
                sth = state[hit]
                xh = x[hit]
                q0h = q0[cross]
                lo = xh.copy()
                hi = np.full(hit.size, dt)
                for _ in range(BISECT_ITERS):
                    mid = 0.5 * (lo + hi)
                    wm = mid / dt
                    qm = np.zeros(hit.size)
                    for j in range(n_live):
                        lm = off_s[sth, j] + (off_s1[sth, j] - off_s[sth, j]) * wm
                        qm += np.where(sth != j, lm, 0.0)
                    if absorbing:
                        qm += (lam_def_s[hit, sth]
                               + (lam_def_next[hit, sth] - lam_def_s[hit, sth]) * wm)
                    am = acc[hit] + 0.5 * (mid - xh) * (q0h + qm)
                    ge = am >= target[hit]
                    hi = np.where(ge, mid, hi)
                    lo = np.where(ge, lo, mid)
                y = 0.5 * (lo + hi)
                wy = y / dt
                # destination weights at the jump time
                cols = n_states
                wgt = np.zeros((hit.size, cols))
                for j in range(n_live):
                    lj = off_s[sth, j] + (off_s1[sth, j] - off_s[sth, j]) * wy
                    wgt[:, j] = np.where(sth != j, lj, 0.0)
                if absorbing:
                    wgt[:, n_live] = (lam_def_s[hit, sth]
                                      + (lam_def_next[hit, sth] - lam_def_s[hit, sth]) * wy)
                tot = np.maximum(wgt.sum(axis=1), 1e-300)
                u_dest = rng.uniform(chain_keys[hit], (2 * evt[hit] + 1).astype(np.uint64))
                cum = np.cumsum(wgt, axis=1) / tot[:, None]
                dest = np.minimum((cum < u_dest[:, None]).sum(axis=1), cols - 1)
                n_jumps[hit] += 1
                evt[hit] += 1
                t_jump = s * dt + y
                is_def = absorbing & (dest == n_live)
                if np.any(is_def):
                    dd = hit[is_def]
                    yd = y[is_def]
                    std = sth[is_def]
                    bank_tau = (bank[dd] + r_s[dd] * yd
                                + 0.5 * (r_s1[dd] - r_s[dd]) * yd * yd / dt)
                    tau[dd] = t_jump[is_def]
                    pre_rating[dd] = std
                    defaulted[dd] = True
                    pending[dd] = False
                    deltas_d = tab.deltas[s, std]
                    if scheme == MARKET:
                        dhat_const[dd] = deltas_d * np.exp(-ipre[dd, std] - bank_tau)
                    elif scheme == PAR:
                        dhat_const[dd] = deltas_d * np.exp(-bank_tau)
                    elif scheme == TREASURY:
                        delta_def[dd] = deltas_d
                live_jump = hit[~is_def]
                if live_jump.size:
                    state[live_jump] = dest[~is_def]
                    x[live_jump] = y[~is_def]
                    acc[live_jump] = 0.0
                    target[live_jump] = -np.log(
                        rng.uniform(chain_keys[live_jump],
                                    (2 * evt[live_jump]).astype(np.uint64)))

        # reorganization events (Cox thinning), rating frozen at step start
        if scheme == MULTIPLE:
            majorant = np.maximum(gamma_s, gamma_s1)
            base = s * tab.cox_stride
            u0 = rng.uniform(cox_keys, np.uint64(base))
            counts = rng.poisson_counts(majorant * dt, u0, tab.cox_cap)
            max_cnt = int(counts.max()) if counts.size else 0
            for j in range(max_cnt):
                has = counts > j
                u_pos = rng.uniform(cox_keys, np.uint64(base + 1 + 2 * j))
                u_acc = rng.uniform(cox_keys, np.uint64(base + 2 + 2 * j))
                g_x = gamma_s + (gamma_s1 - gamma_s) * u_pos
                accept = has & (u_acc * majorant <= g_x)
                v = np.where(accept, v * (1.0 - tab.loss_L[s]), v)

        bank += 0.5 * dt * (r_s + r_s1)

        c_here = cp_pos.get(s + 1)
        if c_here is not None:
            node = s + 1
            i_f = _trapz_rows(G[:, 0, node:mat + 1], dt)
            if scheme == RISKFREE:
                dhat[:, c_here] = np.exp(-bank - i_f)
                rating_cp[:, c_here] = 0
            else:
                ig = np.empty(P)
                for i in range(n_live):
                    sel = state == i
                    if np.any(sel):
                        ig[sel] = _trapz_rows(G[sel, 1 + i, node:mat + 1], dt)
                surv = np.exp(-bank - ig)
                if scheme == MULTIPLE:
                    dhat[:, c_here] = v * surv
                    rating_cp[:, c_here] = state
                    v_cp[:, c_here] = v
                else:
                    out = np.where(defaulted, 0.0, surv)
                    if scheme == TREASURY:
                        out = np.where(defaulted, delta_def * np.exp(-bank - i_f), out)
                    else:
                        out = np.where(defaulted, dhat_const, out)
                    dhat[:, c_here] = out
                    rating_cp[:, c_here] = np.where(defaulted, n_live, state)

    return dict(dhat=dhat, rating_cp=rating_cp, v_cp=v_cp, tau=tau,
                pre_rating=pre_rating, defaulted=defaulted, n_jumps=n_jumps,
                order_viol=order_viol, min_spread=min_spread, infeasible=infeas)
