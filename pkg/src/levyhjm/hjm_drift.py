"""No-arbitrage drift synthesis and drift-condition residuals.

The risk-free drift is the classical restriction: the maturity integral of
alpha must equal the log moment generating function of the noise evaluated
at the integrated volatility.  The defaultable drifts add one term per
recovery scheme, built from intensity-weighted price ratios between rating
curves.  Both the derivative form (used to synthesize alpha pointwise) and
the integral form (used to measure residuals) are implemented; on the grid
they agree up to the trapezoid truncation budget.

Price ratios never touch a stored price state: on the grid
D_j(t,theta) / D_i(t,theta) = exp(int_t^theta (g_i - g_j) du) exactly, so
the scheme terms are computed from the current curves alone.
"""

from __future__ import annotations

import numpy as np

from .curves import (DriftSurface, ForwardSurface, TimeGrid,
                     VolatilitySurface, cumtrapz_uniform)
from .levy_core import (LevyModel, laplace_exponent_batch,
                        laplace_exponent_gradient_batch)
from .pricing import SchemeTag


def residual_tolerance(max_rate: float, dtheta: float) -> float:
    """Pass threshold for integral-form residuals: rounding floor plus the
    trapezoid truncation budget 2 * max|rate|^2 * dtheta^2."""
    return 1e-10 + 2.0 * max_rate * max_rate * dtheta * dtheta


def riskfree_drift(model: LevyModel, vol: VolatilitySurface) -> DriftSurface:
    """alpha(t, theta) = <grad J(int_t^theta sigma), sigma(t, theta)>.

    The gradient argument integrates sigma from t rather than from zero.
    In the continuum the two coincide (sigma(t, v) = 0 for v < t); on the
    grid, starting at the clock node is the faithful discretization, since
    a from-zero trapezoid would give the support boundary at v = t a full
    interior weight.
    """
    grid = vol.grid
    n = grid.n_nodes
    alpha = np.zeros((n, n))
    for t in range(n):
        seg = vol.sigma[t, t:, :]                       # (m, d)
        big_sigma = cumtrapz_uniform(seg, grid.dt, axis=0)
        grads = laplace_exponent_gradient_batch(model, big_sigma)
        alpha[t, t:] = np.einsum("md,md->m", grads, seg)
    return DriftSurface(grid, alpha, owner_rating=None)


def _cum_integrals(row: np.ndarray, t: int, dt: float) -> np.ndarray:
    """I(theta) = int_t^theta row(u) du on live maturities, trapezoid."""
    return cumtrapz_uniform(row[t:], dt, axis=0)


def _scheme_term_derivative(scheme: SchemeTag, rating: int, t: int, dt: float,
                            f_row: np.ndarray, g_rows: list[np.ndarray],
                            lam_row_t: np.ndarray, delta_t: float) -> np.ndarray:
    """Extra drift (derivative form) on live maturities theta >= t.

    Migration part: sum over other live ratings j of
        lam_ij * (g_i - g_j) * exp(int_t^theta (g_i - g_j)).
    Recovery part per scheme; the multiple-defaults scheme has none.
    """
    gi = g_rows[rating][t:]
    out = np.zeros_like(gi)
    n_live = len(g_rows)
    for j in range(n_live):
        if j == rating:
            continue
        lam = lam_row_t[j]
        if lam == 0.0:
            continue
        diff = gi - g_rows[j][t:]
        out += lam * diff * np.exp(cumtrapz_uniform(diff, dt, axis=0))
    if scheme is SchemeTag.TREASURY:
        lam_def = lam_row_t[n_live]
        diff = gi - f_row[t:]
        out += delta_t * lam_def * diff * np.exp(cumtrapz_uniform(diff, dt, axis=0))
    elif scheme is SchemeTag.PAR:
        lam_def = lam_row_t[n_live]
        out += delta_t * lam_def * gi * np.exp(cumtrapz_uniform(gi, dt, axis=0))
    return out


def _scheme_term_integral(scheme: SchemeTag, rating: int, t: int, dt: float,
                          f_row: np.ndarray, g_rows: list[np.ndarray],
                          lam_row_t: np.ndarray, delta_t: float) -> np.ndarray:
    """Extra term of the integral-form condition on live maturities.

    Uses exp(int (g_i - g_j)) for the price ratios, exact on the grid.
    """
    gi_int = _cum_integrals(g_rows[rating], t, dt)
    out = np.zeros_like(gi_int)
    n_live = len(g_rows)
    for j in range(n_live):
        if j == rating:
            continue
        lam = lam_row_t[j]
        if lam == 0.0:
            continue
        gj_int = _cum_integrals(g_rows[j], t, dt)
        out += lam * (np.exp(gi_int - gj_int) - 1.0)
    if scheme is SchemeTag.TREASURY:
        f_int = _cum_integrals(f_row, t, dt)
        out += delta_t * lam_row_t[n_live] * (np.exp(gi_int - f_int) - 1.0)
    elif scheme is SchemeTag.PAR:
        out += delta_t * lam_row_t[n_live] * (np.exp(gi_int) - 1.0)
    return out


def _as_node_array(values, n_nodes: int) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        return np.full(n_nodes, float(arr))
    if arr.shape != (n_nodes,):
        raise ValueError(f"expected scalar or ({n_nodes},) array, got {arr.shape}")
    return arr


def defaultable_drift(scheme: SchemeTag, rating: int, model: LevyModel,
                      vol: VolatilitySurface, f_surface: ForwardSurface,
                      g_surfaces: list[ForwardSurface], lam_rows: np.ndarray,
                      delta) -> DriftSurface:
    """Drift surface for the pre-default curve of one rating class.

    Parameters
    ----------
    rating : live rating index (0-based); must be < number of live classes.
    lam_rows : intensities lambda_{rating, .}(t) at the grid nodes.  Shape
        (n_nodes, n_live + 1) for the absorbing schemes (last column is the
        default intensity) or (n_nodes, n_live) for multiple defaults.
    delta : recovery fraction for this rating; scalar or per-node array.
        Ignored by the market-value and multiple-defaults schemes, whose
        conditions carry no recovery term.
    """
    grid = vol.grid
    n = grid.n_nodes
    n_live = len(g_surfaces)
    if not (0 <= rating < n_live):
        raise ValueError(f"rating must be a live class in [0, {n_live})")
    if n_live < 1:
        raise ValueError("at least one live rating class is required")
    want_cols = n_live if scheme is SchemeTag.MULTIPLE_DEFAULTS else n_live + 1
    lam_rows = np.asarray(lam_rows, dtype=np.float64)
    if lam_rows.shape != (n, want_cols):
        raise ValueError(f"lam_rows must be ({n},{want_cols}), got {lam_rows.shape}")
    delta_nodes = _as_node_array(delta, n)

    base = riskfree_drift(model, vol)
    alpha = base.alpha
    g_rows = [g.rates for g in g_surfaces]
    for t in range(n):
        alpha[t, t:] += _scheme_term_derivative(
            scheme, rating, t, grid.dt, f_surface.rates[t],
            [g[t] for g in g_rows], lam_rows[t], float(delta_nodes[t]))
    return DriftSurface(grid, alpha, owner_rating=rating)


class DriftConditionResidual:
    """Integral-form condition residual per (t, theta) node.

    residual(t, theta) = int_t^theta alpha(t, v) dv - J(int_t^theta sigma)
    minus the scheme term; zero on the diagonal by construction.
    """

    def __init__(self, grid: TimeGrid, residual: np.ndarray,
                 scheme: SchemeTag | None, rating: int | None):
        self.grid = grid
        self.residual = residual
        self.scheme = scheme
        self.rating = rating

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.residual)))

    def mean_abs(self) -> float:
        n = self.grid.n_nodes
        iu = np.triu_indices(n)
        return float(np.mean(np.abs(self.residual[iu])))


def condition_residual(scheme: SchemeTag | None, rating: int, alpha: DriftSurface,
                       model: LevyModel, vol: VolatilitySurface,
                       f_surface: ForwardSurface | None,
                       g_surfaces: list[ForwardSurface] | None,
                       lam_rows: np.ndarray | None,
                       delta=0.0) -> DriftConditionResidual:
    """Residual of the integral-form drift condition for a given alpha.

    With scheme None (risk-free) the residual is int alpha - J(int sigma).
    """
    grid = vol.grid
    n = grid.n_nodes
    res = np.zeros((n, n))
    delta_nodes = _as_node_array(delta, n)
    for t in range(n):
        seg_sigma = vol.sigma[t, t:, :]
        big_sigma = cumtrapz_uniform(seg_sigma, grid.dt, axis=0)
        j_vals = laplace_exponent_batch(model, big_sigma)
        lhs = cumtrapz_uniform(alpha.alpha[t, t:], grid.dt, axis=0)
        rhs = j_vals
        if scheme is not None:
            rhs = rhs + _scheme_term_integral(
                scheme, rating, t, grid.dt, f_surface.rates[t],
                [g.rates[t] for g in g_surfaces], lam_rows[t],
                float(delta_nodes[t]))
        res[t, t:] = lhs - rhs
    return DriftConditionResidual(grid, res, scheme, rating)
