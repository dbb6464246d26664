"""Monte Carlo orchestration: tables, chunked execution, reference path.

The kernels consume a flat bundle of precomputed arrays (EngineTables).
Paths are split into fixed-size chunks whose results land in preallocated
slices, so the outcome is byte-identical for any worker count.  A slow
reference evaluator composes the module-level operations (surface
evolution, chain simulation semantics, bond pricing) for single paths and
serves as the independent oracle for the kernels.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels, rng
from .curves import (DriftSurface, ForwardSurface, TimeGrid,
                     VolatilitySurface, evolve_step, trapz_uniform)
from .hjm_drift import _scheme_term_derivative, riskfree_drift
from .levy_core import LevyModel
from .migration import SpreadCouplingError, RatingPath
from .pricing import RecoveryScheme, SchemeTag, price_path

log = logging.getLogger("levyhjm.engine")

SCHEME_CODE = {
    None: 0,
    SchemeTag.MARKET_VALUE: 1,
    SchemeTag.TREASURY: 2,
    SchemeTag.PAR: 3,
    SchemeTag.MULTIPLE_DEFAULTS: 4,
}

DEFAULT_CHUNK = 8192


@dataclass
class EngineTables:
    """Flat, immutable inputs for the path kernels."""

    seed: int
    dt: float
    n_steps: int
    mat_idx: int
    cp_idx: np.ndarray
    scheme_code: int
    n_live: int
    d_eff: int
    f0: np.ndarray
    g0: np.ndarray
    sigma: np.ndarray
    hjm: np.ndarray
    chol: np.ndarray
    drift_eff: np.ndarray
    atom_y: np.ndarray
    atom_rho: np.ndarray
    atom_cap: np.ndarray
    stride: np.ndarray
    lam_off: np.ndarray
    spread_coupled: bool
    lam_def_table: np.ndarray
    deltas: np.ndarray
    loss_L: np.ndarray
    gamma_coupled: bool
    gamma_table: np.ndarray
    cox_cap: int
    cox_stride: int
    i0: int
    alpha_shift: float = 0.0
    antithetic: bool = False
    anti_offset: int = 0
    check_ordering: bool = True
    grid: TimeGrid | None = None
    models: list = field(default_factory=list)
    vols: list = field(default_factory=list)
    scheme: RecoveryScheme | None = None


def _pad_model(model: LevyModel, d_eff: int, a_max: int, dt: float):
    """Zero-pad a model's factor arrays to the engine's common width."""
    chol = np.zeros((d_eff, d_eff))
    chol[:model.dim, :model.dim] = model.gaussian_factor
    drift_eff = np.zeros(d_eff)
    drift_eff[:model.dim] = model.drift_a - model.small_compensator
    atom_y = np.zeros((a_max, d_eff))
    atom_rho = np.zeros(a_max)
    if model.n_atoms:
        atom_y[:model.n_atoms, :model.dim] = model.atom_y
        atom_rho[:model.n_atoms] = model.atom_rho
    caps = np.array([rng.poisson_cap(r * dt) for r in atom_rho], dtype=np.int64)
    return chol, drift_eff, atom_y, atom_rho, caps


def build_tables(
    grid: TimeGrid,
    models: list[LevyModel],
    vols: list[VolatilitySurface],
    f0: np.ndarray,
    g0: np.ndarray,
    scheme: RecoveryScheme | None,
    lam_off: np.ndarray | None,
    deltas: np.ndarray | None,
    seed: int,
    checkpoints: np.ndarray,
    maturity_idx: int | None = None,
    initial_rating: int = 0,
    spread_coupled: bool = True,
    lam_def_table: np.ndarray | None = None,
    gamma_table: np.ndarray | None = None,
    gamma_cap_rate: float = 20.0,
    alpha_shift: float = 0.0,
    antithetic: bool = False,
    anti_offset: int = 0,
    check_ordering: bool = True,
) -> EngineTables:
    """Assemble kernel inputs from domain objects.

    models/vols: entry 0 drives the risk-free curve, entries 1.. the live
    rating curves.  lam_off holds the migration intensities among live
    classes at the grid nodes, shape (n_nodes, n_live, n_live), zero
    diagonal.  For the multiple-defaults scheme, gamma_table supplies the
    reorganization intensity when it is not spread-derived.
    """
    if not (0 <= seed < 2**63):
        raise ValueError("seed must fit in a non-negative 63-bit integer")
    n = grid.n_nodes
    n_curves = len(models)
    n_live = n_curves - 1
    if len(vols) != n_curves:
        raise ValueError("need one volatility surface per curve")
    scheme_code = SCHEME_CODE[None if scheme is None else scheme.tag]
    if scheme_code == 0 and n_live != 0:
        raise ValueError("risk-free runs take exactly one curve")
    if scheme_code != 0 and n_live < 1:
        raise ValueError("defaultable runs need at least one live rating curve")

    d_eff = max(m.dim for m in models)
    a_max = max((m.n_atoms for m in models), default=0)
    f0 = np.asarray(f0, dtype=np.float64).reshape(n)
    g0 = (np.asarray(g0, dtype=np.float64).reshape(n_live, n)
          if n_live else np.zeros((0, n)))

    sigma = np.zeros((n_curves, n, n, d_eff))
    hjm = np.zeros((n_curves, n, n))
    chol = np.zeros((n_curves, d_eff, d_eff))
    drift_eff = np.zeros((n_curves, d_eff))
    atom_y = np.zeros((n_curves, a_max, d_eff))
    atom_rho = np.zeros((n_curves, a_max))
    atom_cap = np.zeros((n_curves, a_max), dtype=np.int64)
    stride = np.zeros(n_curves, dtype=np.int64)
    n_norm_slots = 2 * ((d_eff + 1) // 2)
    for c, (m, v) in enumerate(zip(models, vols)):
        sigma[c, :, :, :m.dim] = v.sigma
        hjm[c] = riskfree_drift(m, v).alpha
        chol[c], drift_eff[c], atom_y[c], atom_rho[c], atom_cap[c] = \
            _pad_model(m, d_eff, a_max, grid.dt)
        stride[c] = n_norm_slots + int((1 + atom_cap[c]).sum()) if a_max else n_norm_slots

    if lam_off is None:
        lam_off = np.zeros((n, max(n_live, 1), max(n_live, 1)))
    else:
        lam_off = np.asarray(lam_off, dtype=np.float64)
        if lam_off.shape != (n, n_live, n_live):
            raise ValueError(f"lam_off must be ({n},{n_live},{n_live})")
        if np.any(lam_off < 0.0):
            raise ValueError("migration intensities must be >= 0")

    if deltas is None:
        deltas = np.zeros((n, max(n_live, 1)))
    else:
        deltas = np.asarray(deltas, dtype=np.float64)
        if deltas.ndim == 1:
            deltas = np.tile(deltas.reshape(1, n_live), (n, 1))
        if deltas.shape != (n, n_live):
            raise ValueError(f"deltas must be ({n_live},) or ({n},{n_live})")

    if lam_def_table is None:
        lam_def_table = np.zeros((n, max(n_live, 1)))
    else:
        lam_def_table = np.asarray(lam_def_table, dtype=np.float64)

    loss_arr = np.zeros(n)
    gamma_coupled = False
    gamma_arr = np.zeros(n)
    cox_cap = 1
    if scheme is not None and scheme.tag is SchemeTag.MULTIPLE_DEFAULTS:
        loss_arr = np.full(n, float(scheme.loss_L))
        if np.any(loss_arr <= 0.0):
            raise ValueError("multiple-defaults loss must be > 0 to derive the "
                             "reorganization intensity from spreads")
        if gamma_table is None:
            gamma_coupled = True
            cox_cap = rng.poisson_cap(gamma_cap_rate * grid.dt)
        else:
            gamma_arr = np.asarray(gamma_table, dtype=np.float64).reshape(n)
            cox_cap = rng.poisson_cap(float(gamma_arr.max()) * grid.dt)
    cox_stride = 1 + 2 * cox_cap

    cp_idx = np.asarray(checkpoints, dtype=np.int64)
    mat_idx = int(maturity_idx if maturity_idx is not None else grid.n_steps)
    if np.any(cp_idx < 1) or np.any(cp_idx > mat_idx):
        raise ValueError("checkpoints must be grid nodes in [1, maturity]")
    if len(np.unique(cp_idx)) != len(cp_idx):
        raise ValueError("checkpoints must be distinct")

    return EngineTables(
        seed=seed, dt=grid.dt, n_steps=grid.n_steps, mat_idx=mat_idx,
        cp_idx=np.sort(cp_idx), scheme_code=scheme_code, n_live=n_live,
        d_eff=d_eff, f0=f0, g0=g0, sigma=sigma, hjm=hjm, chol=chol,
        drift_eff=drift_eff, atom_y=atom_y, atom_rho=atom_rho,
        atom_cap=atom_cap, stride=stride, lam_off=lam_off, spread_coupled=spread_coupled,
        lam_def_table=lam_def_table, deltas=deltas, loss_L=loss_arr,
        gamma_coupled=gamma_coupled, gamma_table=gamma_arr, cox_cap=cox_cap,
        cox_stride=cox_stride, i0=initial_rating, alpha_shift=alpha_shift,
        antithetic=antithetic, anti_offset=anti_offset,
        check_ordering=check_ordering, grid=grid, models=list(models),
        vols=list(vols), scheme=scheme,
    )


def initial_discounted(tab: EngineTables) -> float:
    """Deterministic time-zero discounted price of the maturity bond."""
    if tab.scheme_code == 0:
        seg = tab.f0[: tab.mat_idx + 1]
    else:
        seg = tab.g0[tab.i0][: tab.mat_idx + 1]
    return float(np.exp(-trapz_uniform(seg, tab.dt)))


@dataclass
class EngineResult:
    dhat: np.ndarray
    rating: np.ndarray
    loss_factor: np.ndarray
    tau: np.ndarray
    pre_rating: np.ndarray
    defaulted: np.ndarray
    n_jumps: np.ndarray
    order_violations: int
    min_spread: float
    initial: float
    checkpoint_nodes: np.ndarray
    checkpoint_times: np.ndarray


def run(tab: EngineTables, n_paths: int, threads: int = 1,
        backend: str | None = None, chunk_size: int = DEFAULT_CHUNK) -> EngineResult:
    """Simulate n_paths paths and gather checkpoint statistics inputs.

    The chunk size is fixed independently of `threads`, and chunk results
    are written into their own slices, so outputs do not depend on the
    worker count.
    """
    runner = kernels.get_runner(backend)
    n_cp = len(tab.cp_idx)
    dhat = np.empty((n_paths, n_cp))
    rating = np.empty((n_paths, n_cp), dtype=np.int8)
    v = np.empty((n_paths, n_cp))
    tau = np.empty(n_paths)
    pre_rating = np.empty(n_paths, dtype=np.int64)
    defaulted = np.empty(n_paths, dtype=bool)
    n_jumps = np.empty(n_paths, dtype=np.int64)

    bounds = [(lo, min(lo + chunk_size, n_paths))
              for lo in range(0, n_paths, chunk_size)]

    def work(b):
        lo, hi = b
        return b, runner(tab, lo, hi)

    results = []
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, bounds))
    else:
        results = [work(b) for b in bounds]

    order_viol = 0
    min_spread = math.inf
    for (lo, hi), out in results:
        bad, bad_rating, bad_node = out["infeasible"]
        if bad:
            raise SpreadCouplingError(bad_rating, bad_node * tab.dt,
                                    "non-positive short spread on a simulated path")
        dhat[lo:hi] = out["dhat"]
        rating[lo:hi] = out["rating_cp"]
        v[lo:hi] = out["v_cp"]
        tau[lo:hi] = out["tau"]
        pre_rating[lo:hi] = out["pre_rating"]
        defaulted[lo:hi] = out["defaulted"]
        n_jumps[lo:hi] = out["n_jumps"]
        order_viol += out["order_viol"]
        min_spread = min(min_spread, out["min_spread"])

    if order_viol:
        log.warning("rating-order violations at %d surface nodes", order_viol)
    return EngineResult(
        dhat=dhat, rating=rating, loss_factor=v, tau=tau,
        pre_rating=pre_rating, defaulted=defaulted, n_jumps=n_jumps,
        order_violations=order_viol, min_spread=min_spread,
        initial=initial_discounted(tab), checkpoint_nodes=tab.cp_idx.copy(),
        checkpoint_times=tab.cp_idx * tab.dt,
    )


@dataclass
class Skeleton:
    """Noise-free surface family with its synthesized drifts.

    The curves evolve under their drifts alone (all factor increments
    zero), which yields a deterministic family satisfying the drift
    conditions at every node; lam_rows[i] holds the per-node intensity row
    (migration columns plus the default/reorganization column) for rating i.
    """

    surfaces: list
    alphas: list
    lam_rows: np.ndarray
    deltas: np.ndarray


def deterministic_skeleton(tab: EngineTables) -> Skeleton:
    grid = tab.grid
    n = grid.n_nodes
    n_live = tab.n_live
    scheme_code = tab.scheme_code
    absorbing = scheme_code in (1, 2, 3)
    tag = None if tab.scheme is None else tab.scheme.tag

    rates = [np.empty((n, n)) for _ in range(n_live + 1)]
    rates[0][0] = tab.f0
    for i in range(n_live):
        rates[1 + i][0] = tab.g0[i]
    alphas = [np.zeros((n, n)) for _ in range(n_live + 1)]
    lam_rows = np.zeros((n, max(n_live, 1), n_live + 1))

    def node_lam(s):
        for i in range(n_live):
            lam_rows[s, i, :n_live] = tab.lam_off[s, i]
            spread = rates[1 + i][s, s] - rates[0][s, s]
            if absorbing:
                if tab.spread_coupled:
                    if spread <= 0.0:
                        raise SpreadCouplingError(i, s * tab.dt,
                                                "non-positive short spread")
                    lam_rows[s, i, n_live] = spread / (1.0 - tab.deltas[s, i])
                else:
                    lam_rows[s, i, n_live] = tab.lam_def_table[s, i]
            elif scheme_code == 4:
                if tab.gamma_coupled:
                    if spread <= 0.0:
                        raise SpreadCouplingError(i, s * tab.dt,
                                                "non-positive short spread")
                    lam_rows[s, i, n_live] = spread / tab.loss_L[s]
                else:
                    lam_rows[s, i, n_live] = tab.gamma_table[s]

    for s in range(grid.n_steps):
        node_lam(s)
        for c in range(n_live + 1):
            row = tab.hjm[c, s].copy() + tab.alpha_shift
            row[:s] = 0.0
            if c >= 1 and tag is not None:
                row[s:] += _scheme_term_derivative(
                    tag, c - 1, s, tab.dt, rates[0][s],
                    [rates[1 + i][s] for i in range(n_live)],
                    lam_rows[s, c - 1], float(tab.deltas[s, c - 1]))
            alphas[c][s] = row
            new = rates[c][s] + row * tab.dt
            for k in range(s + 1):
                new[k] = rates[c][k, k]
            rates[c][s + 1] = new
    node_lam(grid.n_steps)
    s = grid.n_steps
    for c in range(n_live + 1):
        row = tab.hjm[c, s].copy() + tab.alpha_shift
        row[:s] = 0.0
        if c >= 1 and tag is not None:
            row[s:] += _scheme_term_derivative(
                tag, c - 1, s, tab.dt, rates[0][s],
                [rates[1 + i][s] for i in range(n_live)],
                lam_rows[s, c - 1], float(tab.deltas[s, c - 1]))
        alphas[c][s] = row

    kinds = ["riskfree"] + [f"rating{i + 1}" for i in range(n_live)]
    surfaces = [ForwardSurface(grid, rates[c], kind=kinds[c], frontier=n - 1)
                for c in range(n_live + 1)]
    return Skeleton(surfaces=surfaces, alphas=alphas, lam_rows=lam_rows,
                    deltas=tab.deltas.copy())


# ---------------------------------------------------------------------------
# Reference path evaluator (module-composed, slow, single path)
# ---------------------------------------------------------------------------


def _draw_step_increments(tab: EngineTables, c: int, key: np.ndarray,
                          s: int, mirrored: bool) -> np.ndarray:
    """One step's factor increment with the kernels' stream layout."""
    d = tab.d_eff
    base = int(s * tab.stride[c])
    xi = rng.standard_normals(key, base, d)[0]
    if mirrored:
        xi = -xi
    gauss = np.zeros(d)
    for gq in range(d):
        gauss += tab.chol[c, :, gq] * xi[gq]
    dz = tab.drift_eff[c] * tab.dt + math.sqrt(tab.dt) * gauss
    off = 2 * ((d + 1) // 2)
    for a_ in range(tab.atom_y.shape[1]):
        rho = tab.atom_rho[c, a_]
        cap = int(tab.atom_cap[c, a_])
        u = rng.uniform(key, np.uint64(base + off))
        cnt = int(rng.poisson_counts(rho * tab.dt, u, cap)[0])
        dz = dz + cnt * tab.atom_y[c, a_]
        off += 1 + cap
    return dz


def _lam_def_nodes(tab: EngineTables, surfaces: list[ForwardSurface],
                   node: int) -> np.ndarray:
    if not tab.spread_coupled:
        return tab.lam_def_table[node]
    r = surfaces[0].rates[node, node]
    out = np.empty(tab.n_live)
    for i in range(tab.n_live):
        spread = surfaces[1 + i].rates[node, node] - r
        if spread <= 0.0:
            raise SpreadCouplingError(i, node * tab.dt, "non-positive short spread")
        out[i] = spread / (1.0 - tab.deltas[node, i])
    return out


def _interp(a: float, b: float, w: float) -> float:
    return a + (b - a) * w


@dataclass
class ReferencePath:
    """Everything the module-composed evaluator knows about one path."""

    surfaces: list[ForwardSurface]
    rating_path: RatingPath | None
    cox_times: list[float]
    bond: object | None
    dhat_nodes: np.ndarray
    lam_def_nodes: np.ndarray | None
    drift_rows: list


def reference_path(tab: EngineTables, path_id: int) -> ReferencePath:
    """Evolve one path through the module-level operations.

    Uses the same random streams as the kernels, but the surface stepping,
    chain bookkeeping, and pricing go through curves.evolve_step,
    RatingPath, and pricing.price_path.
    """
    grid = tab.grid
    n = grid.n_nodes
    dt = tab.dt
    scheme_code = tab.scheme_code
    absorbing = scheme_code in (1, 2, 3)
    has_chain = absorbing or scheme_code == 4
    n_live = tab.n_live

    key_id = path_id
    mirrored = False
    if tab.antithetic and tab.anti_offset > 0 and path_id >= tab.anti_offset:
        key_id = path_id - tab.anti_offset
        mirrored = True
    levy_keys = [rng.stream_keys(tab.seed, rng.SALT_LEVY + c,
                                 np.array([key_id], dtype=np.int64))
                 for c in range(n_live + 1)]
    chain_key = rng.stream_keys(tab.seed, rng.SALT_CHAIN,
                                np.array([key_id], dtype=np.int64))
    cox_key = rng.stream_keys(tab.seed, rng.SALT_COX,
                              np.array([key_id], dtype=np.int64))

    surfaces = [ForwardSurface.from_initial(grid, tab.f0, kind="riskfree")]
    for i in range(n_live):
        surfaces.append(ForwardSurface.from_initial(grid, tab.g0[i], kind=f"rating{i + 1}"))
    vols = [VolatilitySurface(grid, tab.sigma[c]) for c in range(n_live + 1)]

    state = tab.i0
    evt = 0
    target = -math.log(float(rng.uniform(chain_key, np.uint64(0))[0])) if has_chain else 0.0
    acc = 0.0
    is_def = False
    jump_times: list[float] = []
    jump_states: list[int] = []
    cox_times: list[float] = []
    drift_rows = []
    lam_def_hist = np.zeros((n, n_live)) if n_live else None

    tag = None if tab.scheme is None else tab.scheme.tag
    for s in range(grid.n_steps):
        lam_def_s = _lam_def_nodes(tab, surfaces, s) if absorbing and not is_def else None
        if absorbing and lam_def_hist is not None and not is_def:
            lam_def_hist[s] = lam_def_s
        gamma_s = None
        if scheme_code == 4:
            if tab.gamma_coupled:
                spread = surfaces[1 + state].rates[s, s] - surfaces[0].rates[s, s]
                if spread <= 0.0:
                    raise SpreadCouplingError(state, s * dt, "non-positive short spread")
                gamma_s = spread / tab.loss_L[s]
            else:
                gamma_s = float(tab.gamma_table[s])

        # drift rows for this step
        step_rows = []
        for c in range(n_live + 1):
            alpha_row = np.zeros(n)
            alpha_row[s:] = tab.hjm[c, s, s:] + tab.alpha_shift
            if c >= 1 and tag is not None and not (absorbing and is_def):
                lam_row = np.zeros(n_live + (1 if absorbing else 0))
                lam_row[:n_live] = tab.lam_off[s, c - 1, :]
                if absorbing:
                    lam_row[n_live] = lam_def_s[c - 1]
                extra = _scheme_term_derivative(
                    tag, c - 1, s, dt, surfaces[0].rates[s],
                    [surfaces[1 + i].rates[s] for i in range(n_live)],
                    lam_row, float(tab.deltas[s, c - 1]))
                alpha_row[s:] += extra
            step_rows.append(alpha_row)
        drift_rows.append(step_rows)

        # evolve surfaces
        for c in range(n_live + 1):
            if c >= 1 and absorbing and is_def:
                surf = surfaces[c]
                rates = surf.rates.copy()
                rates[s + 1] = rates[s]
                for k in range(s + 1):
                    rates[s + 1, k] = rates[k, k]
                surfaces[c] = ForwardSurface(grid, rates, kind=surf.kind, frontier=s + 1)
                continue
            dz = _draw_step_increments(tab, c, levy_keys[c], s, mirrored)
            alpha_full = np.zeros((n, n))
            alpha_full[s, s:] = step_rows[c][s:]
            drift = DriftSurface(grid, alpha_full)
            surfaces[c] = evolve_step(surfaces[c], drift, vols[c], dz, dt)

        lam_def_s1 = (_lam_def_nodes(tab, surfaces, s + 1)
                      if absorbing and not is_def else None)
        gamma_s1 = None
        if scheme_code == 4:
            if tab.gamma_coupled:
                spread = surfaces[1 + state].rates[s + 1, s + 1] - surfaces[0].rates[s + 1, s + 1]
                if spread <= 0.0:
                    raise SpreadCouplingError(state, (s + 1) * dt, "non-positive short spread")
                gamma_s1 = spread / tab.loss_L[s + 1]
            else:
                gamma_s1 = float(tab.gamma_table[s + 1])

        # chain transitions within the step
        if has_chain and not is_def:
            x = 0.0
            for _guard in range(64):
                def q_at(w: float, st: int) -> float:
                    q = 0.0
                    for j in range(n_live):
                        if j == st:
                            continue
                        q += _interp(tab.lam_off[s, st, j], tab.lam_off[s + 1, st, j], w)
                    if absorbing:
                        q += _interp(lam_def_s[st], lam_def_s1[st], w)
                    return q

                q0 = q_at(x / dt, state)
                q1 = q_at(1.0, state)
                a_seg = acc + 0.5 * (dt - x) * (q0 + q1)
                if a_seg < target:
                    acc = a_seg
                    break
                lo, hi = x, dt
                for _ in range(48):
                    mid = 0.5 * (lo + hi)
                    am = acc + 0.5 * (mid - x) * (q0 + q_at(mid / dt, state))
                    if am >= target:
                        hi = mid
                    else:
                        lo = mid
                y = 0.5 * (lo + hi)
                wy = y / dt
                wgt = np.zeros(n_live + (1 if absorbing else 0))
                for j in range(n_live):
                    if j != state:
                        wgt[j] = _interp(tab.lam_off[s, state, j],
                                         tab.lam_off[s + 1, state, j], wy)
                if absorbing:
                    wgt[n_live] = _interp(lam_def_s[state], lam_def_s1[state], wy)
                tot = max(wgt.sum(), 1e-300)
                u_dest = float(rng.uniform(chain_key, np.uint64(2 * evt + 1))[0])
                cum = np.cumsum(wgt) / tot
                dest = min(int(np.sum(cum < u_dest)), len(wgt) - 1)
                evt += 1
                t_jump = s * dt + y
                jump_times.append(t_jump)
                jump_states.append(dest)
                if absorbing and dest == n_live:
                    is_def = True
                    break
                state = dest
                x = y
                acc = 0.0
                target = -math.log(float(rng.uniform(chain_key, np.uint64(2 * evt))[0]))
            else:
                raise RuntimeError("too many chain events in one step")

        # reorganization events
        if scheme_code == 4:
            majorant = max(gamma_s, gamma_s1)
            base = s * tab.cox_stride
            u0 = float(rng.uniform(cox_key, np.uint64(base))[0])
            cnt = int(rng.poisson_counts(majorant * dt, np.array([u0]), tab.cox_cap)[0])
            for j in range(cnt):
                u_pos = float(rng.uniform(cox_key, np.uint64(base + 1 + 2 * j))[0])
                u_acc = float(rng.uniform(cox_key, np.uint64(base + 2 + 2 * j))[0])
                g_x = _interp(gamma_s, gamma_s1, u_pos)
                if u_acc * majorant <= g_x:
                    cox_times.append(s * dt + u_pos * dt)

    if absorbing and lam_def_hist is not None and not is_def:
        lam_def_hist[grid.n_steps] = _lam_def_nodes(tab, surfaces, grid.n_steps)

    # price the path through the pricing module
    if scheme_code == 0:
        from .curves import discounted_bond
        dhat_nodes = np.array([discounted_bond(surfaces[0], t, tab.mat_idx)
                               for t in range(tab.mat_idx + 1)])
        return ReferencePath(surfaces=surfaces, rating_path=None, cox_times=[],
                             bond=None, dhat_nodes=dhat_nodes,
                             lam_def_nodes=None, drift_rows=drift_rows)

    n_states = n_live + 1 if absorbing else n_live
    rp = RatingPath(initial_state=tab.i0, n_states=n_states,
                    absorbing_default=absorbing, horizon=grid.horizon,
                    jump_times=jump_times, states=jump_states)
    bond = price_path(tab.scheme, rp, surfaces[0], surfaces[1:], grid,
                      tab.mat_idx, loss_jump_times=np.array(sorted(cox_times)))
    return ReferencePath(surfaces=surfaces, rating_path=rp, cox_times=sorted(cox_times),
                         bond=bond, dhat_nodes=bond.discounted,
                         lam_def_nodes=lam_def_hist, drift_rows=drift_rows)
