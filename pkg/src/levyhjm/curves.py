"""Forward-curve state on a shared uniform grid.

One grid indexes both calendar time t and maturity theta, so drift
residuals and martingale checkpoints land on aligned nodes.  Surfaces
follow two conventions throughout the engine:

* coefficients vanish above the diagonal in time (sigma(t, theta) = 0 and
  alpha(t, theta) = 0 for t > theta), and
* a matured rate is frozen at its diagonal value (rates(t, theta) =
  rates(theta, theta) for t >= theta), which is how the matured bond's
  cash parks in the bank account.

All maturity integrals use the trapezoid rule; time stepping is explicit
Euler.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger("levyhjm.curves")


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition 0 = t_0 < ... < t_n = horizon."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if self.horizon <= 0 or self.n_steps < 1:
            raise ValueError("horizon must be > 0 and n_steps >= 1")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_nodes)

    def index_of(self, t: float) -> int:
        """Grid index of a node time; raises if t is off-grid."""
        idx = int(round(t / self.dt))
        if not (0 <= idx <= self.n_steps) or abs(idx * self.dt - t) > 1e-9 * max(1.0, self.horizon):
            raise ValueError(f"time {t} is not a grid node")
        return idx


def trapz_uniform(values: np.ndarray, dx: float, axis: int = -1) -> np.ndarray:
    """Trapezoid integral over a uniform grid along `axis`."""
    v = np.asarray(values, dtype=np.float64)
    if v.shape[axis] < 2:
        return np.zeros(np.delete(v.shape, axis))
    s = v.sum(axis=axis) - 0.5 * (v.take(0, axis=axis) + v.take(-1, axis=axis))
    return s * dx


def cumtrapz_uniform(values: np.ndarray, dx: float, axis: int = -1) -> np.ndarray:
    """Running trapezoid integral, zero at the first node, same shape."""
    v = np.asarray(values, dtype=np.float64)
    v0 = np.take(v, range(0, v.shape[axis] - 1), axis=axis)
    v1 = np.take(v, range(1, v.shape[axis]), axis=axis)
    seg = 0.5 * dx * (v0 + v1)
    out = np.zeros_like(v)
    sl = [slice(None)] * v.ndim
    sl[axis] = slice(1, None)
    out[tuple(sl)] = np.cumsum(seg, axis=axis)
    return out


@dataclass
class VolatilitySurface:
    """Per-factor rate volatilities sigma(t, theta) on the grid.

    sigma has shape (n_nodes, n_nodes, dim) and must vanish for t > theta.
    Boundedness is enforced at load: every entry finite.
    """

    grid: TimeGrid
    sigma: np.ndarray
    owner_rating: int | None = None

    def __post_init__(self):
        n = self.grid.n_nodes
        sig = np.asarray(self.sigma, dtype=np.float64)
        if sig.shape[:2] != (n, n):
            raise ValueError(f"sigma must be ({n},{n},d), got {sig.shape}")
        if sig.ndim == 2:
            sig = sig[:, :, None]
        if not np.all(np.isfinite(sig)):
            raise ValueError("sigma must be finite everywhere (bounded trajectories)")
        tril = np.tril_indices(n, k=-1)
        if np.any(sig[tril] != 0.0):
            raise ValueError("sigma(t, theta) must vanish for t > theta")
        self.sigma = sig

    @property
    def dim(self) -> int:
        return self.sigma.shape[2]

    @classmethod
    def constant(cls, grid: TimeGrid, values, owner_rating: int | None = None):
        """sigma(t, theta) = values (per factor) on t <= theta, else 0."""
        vals = np.atleast_1d(np.asarray(values, dtype=np.float64))
        n = grid.n_nodes
        sig = np.zeros((n, n, vals.size))
        iu = np.triu_indices(n)
        sig[iu] = vals
        return cls(grid, sig, owner_rating)

    @classmethod
    def exponential_decay(cls, grid: TimeGrid, scales, decay: float,
                          owner_rating: int | None = None):
        """sigma(t, theta) = scales * exp(-decay * (theta - t)) on t <= theta."""
        scales = np.atleast_1d(np.asarray(scales, dtype=np.float64))
        t = grid.times
        gap = t[None, :] - t[:, None]
        env = np.where(gap >= 0.0, np.exp(-decay * np.maximum(gap, 0.0)), 0.0)
        sig = env[:, :, None] * scales[None, None, :]
        return cls(grid, sig, owner_rating)

    @classmethod
    def zero(cls, grid: TimeGrid, dim: int = 1, owner_rating: int | None = None):
        return cls(grid, np.zeros((grid.n_nodes, grid.n_nodes, dim)), owner_rating)


@dataclass
class DriftSurface:
    """Drift alpha(t, theta) on the grid; zero for t > theta."""

    grid: TimeGrid
    alpha: np.ndarray
    owner_rating: int | None = None

    def __post_init__(self):
        n = self.grid.n_nodes
        a = np.asarray(self.alpha, dtype=np.float64)
        if a.shape != (n, n):
            raise ValueError(f"alpha must be ({n},{n}), got {a.shape}")
        tril = np.tril_indices(n, k=-1)
        if np.any(a[tril] != 0.0):
            raise ValueError("alpha(t, theta) must vanish for t > theta")
        self.alpha = a


@dataclass
class ForwardSurface:
    """Grid-sampled forward curve family rates(t, theta).

    Row t holds the curve seen at time t, with matured entries (theta < t)
    frozen at their diagonal values.  `frontier` is the last filled row;
    evolution fills rows one step at a time and returns a new value.
    """

    grid: TimeGrid
    rates: np.ndarray
    kind: str = "riskfree"
    frontier: int = 0

    def __post_init__(self):
        n = self.grid.n_nodes
        r = np.asarray(self.rates, dtype=np.float64)
        if r.shape != (n, n):
            raise ValueError(f"rates must be ({n},{n}), got {r.shape}")
        self.rates = r

    @classmethod
    def from_initial(cls, grid: TimeGrid, f0, kind: str = "riskfree"):
        """Surface with row 0 set to the initial curve, rest unfilled."""
        f0 = np.asarray(f0, dtype=np.float64).reshape(grid.n_nodes)
        rates = np.full((grid.n_nodes, grid.n_nodes), np.nan)
        rates[0] = f0
        return cls(grid, rates, kind=kind, frontier=0)

    @classmethod
    def deterministic_flat(cls, grid: TimeGrid, level: float, kind: str = "riskfree"):
        """Fully filled surface, constant in both t and theta."""
        n = grid.n_nodes
        surf = cls(grid, np.full((n, n), float(level)), kind=kind, frontier=n - 1)
        return surf

    def row(self, t_index: int) -> np.ndarray:
        if t_index > self.frontier:
            raise ValueError(f"row {t_index} not filled yet (frontier={self.frontier})")
        return self.rates[t_index]

    def short_rate(self, t_index: int) -> float:
        return float(self.row(t_index)[t_index])


def check_rating_order(f_row: np.ndarray, g_rows: list[np.ndarray],
                       start: int = 0) -> int:
    """Count nodes where the pre-default curves are not strictly above the
    risk-free curve in rating order.  A violation is logged, not raised:
    the ordering is an economic plausibility, not a model requirement."""
    count = 0
    prev = f_row[start:]
    for g in g_rows:
        live = g[start:]
        count += int(np.sum(live <= prev))
        prev = live
    if count:
        log.warning("rating-order violation at %d nodes", count)
    return count


def integrate_sigma(vol: VolatilitySurface, t_index: int, theta_index: int) -> np.ndarray:
    """Trapezoid integral of sigma(t, v) dv over v in [t, theta]."""
    if t_index > theta_index:
        raise ValueError("t_index must be <= theta_index")
    seg = vol.sigma[t_index, t_index:theta_index + 1, :]
    return trapz_uniform(seg, vol.grid.dt, axis=0)


def bond_price(surface: ForwardSurface, t_index: int, theta_index: int) -> float:
    """Zero-coupon price at node t for maturity theta.

    For t <= theta: exp(-int_t^theta f(t,s) ds).  For t >= theta the matured
    value accrues at the short rate: exp(+int_theta^t r(s) ds).
    """
    dt = surface.grid.dt
    if t_index <= theta_index:
        seg = surface.row(t_index)[t_index:theta_index + 1]
        return float(np.exp(-trapz_uniform(seg, dt)))
    r_diag = np.array([surface.rates[k, k] for k in range(theta_index, t_index + 1)])
    return float(np.exp(trapz_uniform(r_diag, dt)))


def bank_account(surface: ForwardSurface, t_index: int) -> float:
    """exp(int_0^t r) with r the diagonal short rate."""
    r_diag = np.array([surface.rates[k, k] for k in range(0, t_index + 1)])
    return float(np.exp(trapz_uniform(r_diag, surface.grid.dt)))


def discounted_bond(surface: ForwardSurface, t_index: int, theta_index: int) -> float:
    """exp(-int_0^theta f(t,u) du), using frozen values for u < t.

    Equals bond_price(t, theta) / bank_account(t) on the grid because the
    trapezoid rule is additive over sub-intervals that share a node.
    """
    row = surface.row(t_index).copy()
    for k in range(min(t_index, theta_index + 1)):
        row[k] = surface.rates[k, k]
    seg = row[: theta_index + 1]
    return float(np.exp(-trapz_uniform(seg, surface.grid.dt)))


def evolve_step(surface: ForwardSurface, drift: DriftSurface,
                vol: VolatilitySurface, dZ: np.ndarray, dt: float) -> ForwardSurface:
    """One explicit Euler step of the surface; returns a new value.

    Row t+1 equals row t plus alpha(t, theta) dt + <sigma(t, theta), dZ> for
    live maturities theta >= t+1; matured entries are frozen at their
    diagonal values.
    """
    t = surface.frontier
    n = surface.grid.n_nodes
    if t + 1 >= n:
        raise ValueError("surface already evolved to the horizon")
    dZ = np.asarray(dZ, dtype=np.float64).reshape(vol.dim)
    if abs(dt - surface.grid.dt) > 1e-12 * max(1.0, surface.grid.dt):
        raise ValueError("dt must equal the grid step")
    rates = surface.rates.copy()
    prev = rates[t]
    new = prev.copy()
    live = slice(t + 1, n)
    new[live] = (prev[live]
                 + drift.alpha[t, live] * dt
                 + vol.sigma[t, live, :] @ dZ)
    for k in range(t + 1):
        new[k] = rates[k, k]
    rates[t + 1] = new
    return ForwardSurface(surface.grid, rates, kind=surface.kind, frontier=t + 1)
