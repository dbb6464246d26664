"""Defaultable bond prices along simulated paths.

Four recovery conventions are supported:

* market value: at default the holder keeps a fraction of the pre-default
  price, then the position accrues at the bank rate;
* Treasury: a fraction of face is paid at maturity (so the position is a
  scaled risk-free bond after default);
* par: a fraction of face is paid at the default time;
* multiple defaults: no absorbing state; the face is written down by a
  factor (1 - L) at every jump of an independent Cox counter and the firm
  keeps operating.

Jump times are kept exact for discounting, while surface lookups at a
default snap to the last pre-jump grid row.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .curves import ForwardSurface, TimeGrid, trapz_uniform
from .migration import RatingPath


class SchemeTag(str, Enum):
    MARKET_VALUE = "market_value"
    TREASURY = "treasury"
    PAR = "par"
    MULTIPLE_DEFAULTS = "multiple_defaults"


@dataclass(frozen=True)
class RecoveryScheme:
    """Recovery convention with its parameters.

    deltas: per-rating recovery fractions.  The market-value scheme accepts
    a per-node table (n_nodes, n_live) since its recovery may vary in time;
    Treasury and par use constants.  loss_L and cox_gamma belong to the
    multiple-defaults scheme only.
    """

    tag: SchemeTag
    deltas: np.ndarray | None = None
    loss_L: float | None = None
    cox_gamma: float | None = None

    def __post_init__(self):
        if self.deltas is not None:
            d = np.asarray(self.deltas, dtype=np.float64)
            if np.any(d < 0.0) or np.any(d > 1.0):
                raise ValueError("recovery fractions must lie in [0, 1]")
            object.__setattr__(self, "deltas", d)
        if self.tag is SchemeTag.MULTIPLE_DEFAULTS:
            if self.loss_L is None:
                raise ValueError("multiple-defaults scheme needs loss_L")
            if not (0.0 <= self.loss_L <= 1.0):
                raise ValueError("loss_L must lie in [0, 1]")
            if self.cox_gamma is not None and self.cox_gamma < 0.0:
                raise ValueError("cox_gamma must be >= 0")
        elif self.tag in (SchemeTag.TREASURY, SchemeTag.PAR):
            if self.deltas is None or self.deltas.ndim != 1:
                raise ValueError(f"{self.tag.value} recovery uses constant per-rating deltas")
        elif self.tag is SchemeTag.MARKET_VALUE:
            if self.deltas is None:
                raise ValueError("market-value recovery needs per-rating deltas")

    def delta_at(self, rating: int, node: int) -> float:
        d = self.deltas
        if d.ndim == 1:
            return float(d[rating])
        return float(d[node, rating])


@dataclass
class DefaultableBondPath:
    """Price trajectory of one bond along one simulated path."""

    times: np.ndarray
    values: np.ndarray            # D(t, theta) at grid nodes
    discounted: np.ndarray        # D(t, theta) / B_t
    ratings: np.ndarray           # C1 at nodes (0-based; default class included)
    loss_factor: np.ndarray       # V_t (1.0 for single-default schemes)
    terminal_payoff: float
    default_time: float | None
    pre_default_rating: int | None


def update_loss_process(v_prev: float, loss: float, cox_jump: bool) -> float:
    """Face write-down at a reorganization event: V -> V (1 - L)."""
    if not (0.0 <= v_prev <= 1.0):
        raise ValueError("loss factor must lie in [0, 1]")
    return v_prev * (1.0 - loss) if cox_jump else v_prev


def _bank_integral_to(f_surface: ForwardSurface, grid: TimeGrid, t: float) -> float:
    """int_0^t r(u) du with r linear inside the containing step."""
    dt = grid.dt
    n_full = min(int(t / dt), grid.n_steps)
    if n_full * dt > t:
        n_full -= 1
    r_diag = np.array([f_surface.rates[k, k] for k in range(n_full + 1)])
    acc = float(trapz_uniform(r_diag, dt))
    s = t - n_full * dt
    if s > 0.0 and n_full < grid.n_steps:
        r0 = f_surface.rates[n_full, n_full]
        r1 = f_surface.rates[n_full + 1, n_full + 1]
        acc += r0 * s + 0.5 * (r1 - r0) * s * s / dt
    return acc


def _curve_integral(surface: ForwardSurface, node: int, theta_index: int) -> float:
    seg = surface.rates[node, node:theta_index + 1]
    return float(trapz_uniform(seg, surface.grid.dt))


def price_path(scheme: RecoveryScheme, rating_path: RatingPath,
               f_surface: ForwardSurface, g_surfaces: list[ForwardSurface],
               grid: TimeGrid, theta_index: int,
               loss_jump_times: np.ndarray | None = None) -> DefaultableBondPath:
    """Evaluate the bond at every grid node up to maturity.

    Pre-default the bond prices off its current rating curve; after a
    default the scheme's recovery position takes over.  For the
    multiple-defaults scheme, loss_jump_times are the Cox event times and
    the price is the written-down face times the current rating curve.
    """
    n_live = len(g_surfaces)
    nodes = np.arange(theta_index + 1)
    times = grid.times[nodes]
    dt = grid.dt
    is_multi = scheme.tag is SchemeTag.MULTIPLE_DEFAULTS

    if is_multi:
        if rating_path.absorbing_default:
            raise ValueError("multiple-defaults pricing needs a chain without "
                             "an absorbing state")
        if loss_jump_times is None:
            loss_jump_times = np.zeros(0)
    else:
        if not rating_path.absorbing_default:
            raise ValueError("single-default schemes need an absorbing chain")

    tau = rating_path.default_time
    pre_rating = None
    if tau is not None and tau <= times[-1]:
        pre_rating = rating_path.previous_state_at(tau)
        tau_node = min(int(tau / dt), grid.n_steps - 1)   # last pre-jump row
        bank_tau = _bank_integral_to(f_surface, grid, tau)
        delta_tau = scheme.delta_at(pre_rating, tau_node)
        d_pre = np.exp(-_curve_integral(g_surfaces[pre_rating], tau_node, theta_index))
    else:
        tau = None

    values = np.empty(len(nodes))
    discounted = np.empty(len(nodes))
    ratings = np.empty(len(nodes), dtype=np.int64)
    loss_factor = np.ones(len(nodes))

    for m, node in enumerate(nodes):
        t = float(times[m])
        bank = _bank_integral_to(f_surface, grid, t)
        state = rating_path.state_at(t)
        ratings[m] = state
        if is_multi:
            v = 1.0
            for tc in np.asarray(loss_jump_times, dtype=np.float64):
                if tc <= t:
                    v = update_loss_process(v, float(scheme.loss_L), True)
            loss_factor[m] = v
            d = v * np.exp(-_curve_integral(g_surfaces[state], int(node), theta_index))
        elif tau is not None and tau <= t:
            if scheme.tag is SchemeTag.MARKET_VALUE:
                d = delta_tau * d_pre * np.exp(bank - bank_tau)
            elif scheme.tag is SchemeTag.TREASURY:
                d = delta_tau * np.exp(-_curve_integral(f_surface, int(node), theta_index))
            elif scheme.tag is SchemeTag.PAR:
                d = delta_tau * np.exp(bank - bank_tau)
            else:
                raise ValueError(f"unsupported scheme {scheme.tag}")
        else:
            if state >= n_live:
                raise ValueError("rating path entered the default class without "
                                 "a recorded default time")
            d = np.exp(-_curve_integral(g_surfaces[state], int(node), theta_index))
        values[m] = d
        discounted[m] = d * np.exp(-bank)

    return DefaultableBondPath(
        times=times, values=values, discounted=discounted, ratings=ratings,
        loss_factor=loss_factor, terminal_payoff=float(values[-1]),
        default_time=tau, pre_default_rating=pre_rating,
    )


def ex_dividend_price(lam_fn, r_fn, deltas, rating: int, t: float, theta: float,
                      n_substeps: int = 400) -> float:
    """Deterministic-inputs bond value via the transition matrices.

    Sums, over live classes j, the discounted survival mass plus the
    recovery dividend stream delta_j * int e^{-int r} p_{ij}(t,u)
    lambda_{jK}(u) du, with p solving the forward equation on an internal
    subgrid.  Requires a deterministic short rate and generator with an
    absorbing default class (the conditional expectation degenerates).
    """
    if theta < t:
        raise ValueError("theta must be >= t")
    probe = np.asarray(lam_fn(t), dtype=np.float64)
    k = probe.shape[0]
    if np.any(np.abs(probe[k - 1]) > 1e-12):
        raise ValueError("generator must have an absorbing default class")
    deltas = np.asarray(deltas, dtype=np.float64).reshape(k - 1)
    if not (0 <= rating < k - 1):
        raise ValueError("rating must be a live class")
    if theta == t:
        return 1.0

    m = max(int(n_substeps), 2)
    h = (theta - t) / m
    us = t + h * np.arange(m + 1)

    # forward equation on the subgrid (RK4)
    p = np.eye(k)
    probs = np.empty((m + 1, k, k))
    probs[0] = p
    for s in range(m):
        u = us[s]
        l1 = np.asarray(lam_fn(u))
        l2 = np.asarray(lam_fn(u + 0.5 * h))
        l4 = np.asarray(lam_fn(u + h))
        k1 = p @ l1
        k2 = (p + 0.5 * h * k1) @ l2
        k3 = (p + 0.5 * h * k2) @ l2
        k4 = (p + h * k3) @ l4
        p = p + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        probs[s + 1] = p

    r_vals = np.array([float(r_fn(u)) for u in us])
    disc = np.exp(-np.concatenate(([0.0], np.cumsum(0.5 * h * (r_vals[1:] + r_vals[:-1])))))
    lam_def = np.array([np.asarray(lam_fn(u))[:k - 1, k - 1] for u in us])  # (m+1, k-1)

    value = 0.0
    for j in range(k - 1):
        survival = disc[-1] * probs[-1, rating, j]
        integrand = disc * probs[:, rating, j] * lam_def[:, j]
        dividend = float(trapz_uniform(integrand, h))
        value += survival + deltas[j] * dividend
    return float(value)


def short_spread_limit(price_fn, rating: int, t: float, dtheta: float = 1e-3) -> float:
    """Forward-rate limit at zero time to maturity.

    Returns -[log P(t, t + dtheta) - log P(t, t)] / dtheta, which converges
    to the short rate plus (1 - delta_i) times the default intensity.
    """
    if dtheta <= 0.0 or dtheta > 1e-3 + 1e-12:
        raise ValueError("dtheta must be positive and small (<= 1e-3)")
    p0 = price_fn(rating, t, t)
    p1 = price_fn(rating, t, t + dtheta)
    return float(-(np.log(p1) - np.log(p0)) / dtheta)
