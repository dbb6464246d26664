"""Rating migration: conditional Markov chain simulation and calculus.

The chain is built canonically: each sojourn ends when the integrated exit
intensity crosses an independent exponential threshold, and the successor
state is drawn from the intensity row at the jump time.  The threshold
uniforms come from a stream disjoint from the factor-noise streams, which
is exactly what makes common jumps of the chain and the driving noise a
null event and keeps enlargement-of-filtration assumptions structural
rather than tested.

States are 0-based internally; in absorbing mode the last state is the
default class.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import rng
from .curves import ForwardSurface, TimeGrid

# Fixed bisection depth for jump-time inversion: resolves the crossing to
# dt / 2^48, far below the 1e-10 * horizon tolerance on any sane grid.
_BISECT_ITERS = 48


class GeneratorError(ValueError):
    """Intensity matrix violates a structural invariant."""


class SpreadCouplingError(ValueError):
    """Short-spread coupling cannot be satisfied at some (rating, time)."""

    def __init__(self, rating: int, time: float, reason: str):
        self.rating = rating
        self.time = time
        super().__init__(
            f"short-spread coupling infeasible for rating {rating + 1} "
            f"at t={time:.6g}: {reason}"
        )


def validate_generator(mat: np.ndarray, absorbing_default: bool) -> None:
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise GeneratorError(f"generator must be square, got {mat.shape}")
    k = mat.shape[0]
    off = mat.copy()
    np.fill_diagonal(off, 0.0)
    if np.any(off < -1e-12):
        raise GeneratorError("off-diagonal intensities must be >= 0")
    scale = max(1.0, float(np.abs(mat).max()))
    if np.any(np.abs(mat.sum(axis=1)) > 1e-9 * scale):
        raise GeneratorError("generator rows must sum to zero")
    if absorbing_default and np.any(np.abs(mat[k - 1]) > 1e-12 * scale):
        raise GeneratorError("absorbing mode requires a zero last row")


@dataclass(frozen=True)
class IntensityMatrixProcess:
    """Time-indexed generator Lambda(t) of the rating chain.

    n_states counts the chain's states: the K rating classes including the
    default class in absorbing mode, or the K-1 live classes in the
    multiple-defaults mode (no absorbing state).  at() is right-continuous;
    at_left() gives the left limit, which integrators use at the right
    endpoint of a step so that a discontinuity sitting exactly on a node
    does not leak into the step before it.
    """

    n_states: int
    absorbing_default: bool
    _at: Callable[[float], np.ndarray]
    _at_left: Callable[[float], np.ndarray] | None = None

    def at(self, t: float) -> np.ndarray:
        return self._at(t)

    def at_left(self, t: float) -> np.ndarray:
        if self._at_left is not None:
            return self._at_left(t)
        return self._at(t)

    @classmethod
    def constant(cls, mat, absorbing_default: bool = True):
        mat = np.asarray(mat, dtype=np.float64)
        validate_generator(mat, absorbing_default)
        frozen = mat.copy()
        return cls(mat.shape[0], absorbing_default, lambda t: frozen)

    @classmethod
    def piecewise(cls, breakpoints, mats, absorbing_default: bool = True):
        """Right-continuous piecewise-constant generator.

        breakpoints are the interior switch times; mats has one more entry.
        Align breakpoints with grid nodes for exact integration.
        """
        breaks = np.asarray(breakpoints, dtype=np.float64)
        mats = [np.asarray(m, dtype=np.float64) for m in mats]
        if len(mats) != breaks.size + 1:
            raise GeneratorError("need len(mats) == len(breakpoints) + 1")
        for m in mats:
            validate_generator(m, absorbing_default)
        stack = np.stack(mats)

        def _at(t: float) -> np.ndarray:
            return stack[int(np.searchsorted(breaks, t, side="right"))]

        def _left(t: float) -> np.ndarray:
            return stack[int(np.searchsorted(breaks, t, side="left"))]

        return cls(mats[0].shape[0], absorbing_default, _at, _left)

    @classmethod
    def from_node_table(cls, grid: TimeGrid, table, absorbing_default: bool = True):
        """Generator given at grid nodes, linearly interpolated between."""
        table = np.asarray(table, dtype=np.float64)
        n = grid.n_nodes
        if table.shape[0] != n:
            raise GeneratorError(f"table must have {n} node entries")
        for m in table:
            validate_generator(m, absorbing_default)
        dt = grid.dt
        horizon = grid.horizon

        def _at(t: float) -> np.ndarray:
            if t <= 0.0:
                return table[0]
            if t >= horizon:
                return table[-1]
            x = t / dt
            lo = min(int(x), n - 2)
            w = x - lo
            return (1.0 - w) * table[lo] + w * table[lo + 1]

        return cls(table.shape[1], absorbing_default, _at)


@dataclass
class RatingPath:
    """Piecewise-constant, right-continuous rating trajectory."""

    initial_state: int
    n_states: int
    absorbing_default: bool
    horizon: float
    jump_times: list = field(default_factory=list)
    states: list = field(default_factory=list)      # state entered at each jump

    def state_at(self, t: float) -> int:
        """C1: the current rating."""
        s = self.initial_state
        for tau, st in zip(self.jump_times, self.states):
            if tau <= t:
                s = st
            else:
                break
        return s

    def previous_state_at(self, t: float) -> int:
        """C2: the rating held before the most recent jump (the initial
        state before any jump has happened)."""
        prev = self.initial_state
        cur = self.initial_state
        for tau, st in zip(self.jump_times, self.states):
            if tau <= t:
                prev = cur
                cur = st
            else:
                break
        return prev

    @property
    def default_time(self) -> float | None:
        """First entry time into the default class (absorbing mode)."""
        if not self.absorbing_default:
            return None
        for tau, st in zip(self.jump_times, self.states):
            if st == self.n_states - 1:
                return tau
        return None

    def occupation_indicators(self, times: np.ndarray) -> np.ndarray:
        """H_i at the given times, one-hot over states; shape (m, n_states)."""
        out = np.zeros((len(times), self.n_states))
        for r, t in enumerate(times):
            out[r, self.state_at(t)] = 1.0
        return out

    def transition_counts(self, times: np.ndarray) -> np.ndarray:
        """H_{i,j}(t): number of i->j jumps up to each time; (m, K, K)."""
        k = self.n_states
        out = np.zeros((len(times), k, k))
        cur = self.initial_state
        events = []
        for tau, st in zip(self.jump_times, self.states):
            events.append((tau, cur, st))
            cur = st
        for r, t in enumerate(times):
            for tau, a, b in events:
                if tau <= t:
                    out[r, a, b] += 1.0
        return out


def _exit_rate(gen: IntensityMatrixProcess, state: int, t: float) -> float:
    row = gen.at(t)[state]
    return float(-row[state])


def _segment_crossing(gen: IntensityMatrixProcess, state: int,
                      t_lo: float, t_hi: float, base: float,
                      target: float) -> tuple[float, float]:
    """Advance the integrated exit intensity over [t_lo, t_hi].

    Returns (new_accumulated, crossing_time); the crossing time is nan when
    the target is not reached in this segment.  The integral uses the
    two-point trapezoid within the segment and the crossing is located by
    fixed-depth bisection, so results are identical across backends.
    """
    q_lo = _exit_rate(gen, state, t_lo)
    q_hi = float(-gen.at_left(t_hi)[state, state])
    a_full = base + 0.5 * (t_hi - t_lo) * (q_lo + q_hi)
    if a_full < target:
        return a_full, float("nan")
    lo, hi = t_lo, t_hi
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        q_mid = _exit_rate(gen, state, mid)
        a_mid = base + 0.5 * (mid - t_lo) * (q_lo + q_mid)
        if a_mid >= target:
            hi = mid
        else:
            lo = mid
    return a_full, 0.5 * (lo + hi)


def simulate_chain(gen: IntensityMatrixProcess, initial_state: int,
                   grid: TimeGrid, seed: int, path_id: int = 0) -> RatingPath:
    """Canonical chain simulation on [0, horizon].

    Each sojourn ends when exp(-int |lambda_ii|) falls below a fresh
    uniform; the successor is drawn from the intensity row at the jump
    time.  Uniforms come from the chain stream, disjoint from all factor
    streams.  An all-zero row simply never jumps.
    """
    if not (0 <= initial_state < gen.n_states):
        raise ValueError("initial_state out of range")
    if gen.absorbing_default and initial_state == gen.n_states - 1:
        raise ValueError("initial_state must not be the default class")
    key = rng.stream_keys(seed, rng.SALT_CHAIN, np.array([path_id], dtype=np.int64))
    path = RatingPath(initial_state=initial_state, n_states=gen.n_states,
                      absorbing_default=gen.absorbing_default, horizon=grid.horizon)
    times = grid.times
    state = initial_state
    evt = 0
    target = -np.log(float(rng.uniform(key, np.uint64(2 * evt))[0]))
    acc = 0.0
    seg_lo = 0.0
    step = 0
    while step < grid.n_steps:
        seg_hi = float(times[step + 1])
        acc_new, t_cross = _segment_crossing(gen, state, seg_lo, seg_hi, acc, target)
        if np.isnan(t_cross):
            acc = acc_new
            seg_lo = seg_hi
            step += 1
            continue
        # jump at t_cross: draw destination from the row there
        row = gen.at(t_cross)[state].copy()
        row[state] = 0.0
        total = row.sum()
        if total <= 0.0:
            raise GeneratorError("exit intensity vanished exactly at a jump time")
        u_dest = float(rng.uniform(key, np.uint64(2 * evt + 1))[0])
        state = int(np.searchsorted(np.cumsum(row) / total, u_dest, side="right"))
        path.jump_times.append(float(t_cross))
        path.states.append(state)
        if gen.absorbing_default and state == gen.n_states - 1:
            return path
        evt += 1
        target = -np.log(float(rng.uniform(key, np.uint64(2 * evt))[0]))
        acc = 0.0
        seg_lo = float(t_cross)
    return path


@dataclass
class ForwardEquationSolution:
    """Transition matrices p(t, u) for u on the grid from a start node."""

    grid: TimeGrid
    start_index: int
    matrices: np.ndarray            # (n_nodes - start_index, K, K)

    def p(self, u_index: int) -> np.ndarray:
        if u_index < self.start_index:
            raise ValueError("u_index must be >= start_index")
        return self.matrices[u_index - self.start_index]


def kolmogorov_forward(gen: IntensityMatrixProcess, t_index: int,
                       grid: TimeGrid) -> ForwardEquationSolution:
    """RK4 integration of dp/du = p Lambda(u), p(t, t) = I, on the grid."""
    k = gen.n_states
    n = grid.n_nodes
    dt = grid.dt
    times = grid.times
    out = np.empty((n - t_index, k, k))
    p = np.eye(k)
    out[0] = p
    for s in range(t_index, n - 1):
        u = float(times[s])
        l1 = gen.at(u)
        l2 = gen.at(u + 0.5 * dt)
        l4 = gen.at_left(u + dt)
        k1 = p @ l1
        k2 = (p + 0.5 * dt * k1) @ l2
        k3 = (p + 0.5 * dt * k2) @ l2
        k4 = (p + dt * k3) @ l4
        p = p + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[s + 1 - t_index] = p
    rowsum_err = float(np.abs(out.sum(axis=2) - 1.0).max())
    range_err = float(max(np.max(-out), np.max(out - 1.0)))
    if rowsum_err > 1e-9 or range_err > 1e-9:
        raise GeneratorError(
            f"forward-equation solution left the probability simplex "
            f"(rowsum err {rowsum_err:g}, range err {range_err:g})"
        )
    return ForwardEquationSolution(grid, t_index, out)


@dataclass
class CompensatedMartingales:
    """Occupation, transition-count, and default compensated processes.

    All are reported net of their time-zero value, so ensemble means at any
    fixed time sit at zero under the chain's own intensities.
    """

    times: np.ndarray
    occupancy: np.ndarray        # (n_nodes, K): (H_i - H_i(0)) - int lam_{C1,i}
    transitions: np.ndarray      # (n_nodes, K, K): H_ij - int lam_ij H_i
    default: np.ndarray | None   # (n_nodes,): H_K - int lam_{C1,K} (1 - H_K)


def _path_segments(path: RatingPath, t_lo: float, t_hi: float):
    """(state, a, b) pieces of constant rating covering [t_lo, t_hi]."""
    pieces = []
    cur_state = path.state_at(t_lo)
    a = t_lo
    for tau, st in zip(path.jump_times, path.states):
        if tau <= t_lo:
            continue
        if tau >= t_hi:
            break
        pieces.append((cur_state, a, tau))
        cur_state = st
        a = tau
    pieces.append((cur_state, a, t_hi))
    return pieces


def compensated_martingales(path: RatingPath, gen: IntensityMatrixProcess,
                            grid: TimeGrid) -> CompensatedMartingales:
    """Evaluate the compensated chain processes at the grid nodes.

    Compensator integrals use the two-point trapezoid on each piece of
    constant rating inside each grid step (exact for constant intensities).
    """
    k = gen.n_states
    n = grid.n_nodes
    times = grid.times
    comp_occ = np.zeros((n, k))
    comp_tr = np.zeros((n, k, k))
    comp_def = np.zeros(n)
    default_idx = k - 1
    for s in range(n - 1):
        inc_occ = np.zeros(k)
        inc_tr = np.zeros((k, k))
        inc_def = 0.0
        for state, a, b in _path_segments(path, float(times[s]), float(times[s + 1])):
            la = gen.at(a)
            lb = gen.at_left(b)
            w = 0.5 * (b - a)
            row = w * (la[state] + lb[state])
            inc_occ += row
            inc_tr[state] += row
            if gen.absorbing_default and state != default_idx:
                inc_def += row[default_idx]
        comp_occ[s + 1] = comp_occ[s] + inc_occ
        comp_tr[s + 1] = comp_tr[s] + inc_tr
        comp_def[s + 1] = comp_def[s] + inc_def

    occ_ind = path.occupation_indicators(times)
    trans = path.transition_counts(times)
    occupancy = (occ_ind - occ_ind[0]) - comp_occ
    transitions = np.zeros_like(comp_tr)
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            transitions[:, i, j] = trans[:, i, j] - comp_tr[:, i, j]
    default = None
    if gen.absorbing_default:
        default = occ_ind[:, default_idx] - comp_def
    return CompensatedMartingales(times=times, occupancy=occupancy,
                                  transitions=transitions, default=default)


def couple_default_intensities(f_surface: ForwardSurface, g_surfaces: list[ForwardSurface],
               deltas, gen: IntensityMatrixProcess,
               grid: TimeGrid) -> IntensityMatrixProcess:
    """Couple default intensities to short spreads and recoveries.

    Overwrites lambda_{i,K}(t) := (g_i(t,t) - f(t,t)) / (1 - delta_i(t)) at
    every grid node, keeps the other off-diagonals, and recomputes the
    diagonal.  Raises SpreadCouplingError naming the first bad (rating, t)
    cell when a spread is non-positive or a recovery is >= 1.
    """
    if not gen.absorbing_default:
        raise GeneratorError("short-spread coupling applies to absorbing chains")
    k = gen.n_states
    n_live = k - 1
    if len(g_surfaces) != n_live:
        raise ValueError(f"need {n_live} live curves, got {len(g_surfaces)}")
    n = grid.n_nodes
    deltas = np.asarray(deltas, dtype=np.float64)
    if deltas.ndim == 1:
        deltas = np.tile(deltas.reshape(1, n_live), (n, 1))
    if deltas.shape != (n, n_live):
        raise ValueError(f"deltas must be ({n_live},) or ({n},{n_live})")
    table = np.empty((n, k, k))
    for s, t in enumerate(grid.times):
        mat = gen.at(float(t)).copy()
        for i in range(n_live):
            spread = g_surfaces[i].rates[s, s] - f_surface.rates[s, s]
            d = float(deltas[s, i])
            if d >= 1.0:
                raise SpreadCouplingError(i, float(t), f"recovery {d} >= 1")
            if spread <= 0.0:
                raise SpreadCouplingError(i, float(t), f"short spread {spread:g} <= 0")
            mat[i, k - 1] = spread / (1.0 - d)
        mat[k - 1, :] = 0.0
        for i in range(n_live):
            mat[i, i] = 0.0
            mat[i, i] = -mat[i].sum()
        table[s] = mat
    return IntensityMatrixProcess.from_node_table(grid, table, absorbing_default=True)


def hazard_from_distribution(F: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Hazard rate f_t / (1 - F_t) from distribution samples on the grid.

    The density is a central finite difference (one-sided at the ends).
    """
    F = np.asarray(F, dtype=np.float64)
    n = grid.n_nodes
    if F.shape != (n,):
        raise ValueError(f"F must have shape ({n},)")
    if np.any(np.diff(F) < -1e-12):
        raise ValueError("F must be non-decreasing")
    if np.any(F >= 1.0):
        raise ValueError("F must stay below 1 on the grid")
    dt = grid.dt
    dens = np.empty(n)
    dens[1:-1] = (F[2:] - F[:-2]) / (2.0 * dt)
    dens[0] = (F[1] - F[0]) / dt
    dens[-1] = (F[-1] - F[-2]) / dt
    return dens / (1.0 - F)
