"""Drift synthesis vs the integral-form conditions and closed forms."""

import numpy as np
import pytest

from levyhjm import curves as cv, hjm_drift as hd, levy_core as lc
from levyhjm.pricing import SchemeTag


@pytest.fixture
def grid():
    return cv.TimeGrid(2.0, 40)


def brownian(q=1.0, d=1):
    return lc.LevyModel(dim=d, drift_a=np.zeros(d), cov_Q=q * np.eye(d),
                        atom_y=np.zeros((0, d)), atom_rho=[])


def atom_model(y=1.0, rho=0.5):
    return lc.LevyModel(dim=1, drift_a=[0.0], cov_Q=[[0.0]],
                        atom_y=[[y]], atom_rho=[rho])


def flat_setup(grid, cf=0.03, cg=(0.05, 0.07)):
    f = cv.ForwardSurface.deterministic_flat(grid, cf)
    gs = [cv.ForwardSurface.deterministic_flat(grid, c, kind=f"rating{i+1}")
          for i, c in enumerate(cg)]
    return f, gs


class TestRiskfreeDrift:
    def test_zero_vol_zero_drift(self, grid):
        m = brownian()
        vol = cv.VolatilitySurface.zero(grid, 1)
        assert np.all(hd.riskfree_drift(m, vol).alpha == 0.0)

    def test_gaussian_closed_form(self, grid):
        q, s = 1.3, 0.02
        m = brownian(q)
        vol = cv.VolatilitySurface.constant(grid, [s])
        alpha = hd.riskfree_drift(m, vol).alpha
        t, th = 10, 30
        gap = grid.times[th] - grid.times[t]
        assert alpha[t, th] == pytest.approx(q * s * s * gap, rel=1e-12)

    def test_atom_drift_matches_fd_of_transform(self, grid):
        # d/dtheta J(Sigma(t, theta)) equals the synthesized drift
        m = atom_model(y=1.0, rho=0.5)
        s = 0.02
        vol = cv.VolatilitySurface.constant(grid, [s])
        alpha = hd.riskfree_drift(m, vol).alpha
        t = 5
        dt = grid.dt
        for th in range(t + 1, grid.n_nodes - 1):
            jm = lc.laplace_exponent(m, [s * (grid.times[th - 1] - grid.times[t])])
            jp = lc.laplace_exponent(m, [s * (grid.times[th + 1] - grid.times[t])])
            fd = (jp - jm) / (2 * dt)
            # central differences carry an O(dt^2) truncation of their own
            assert alpha[t, th] == pytest.approx(fd, abs=dt * dt * 1e-5)

    def test_integral_residual_within_budget(self, grid):
        m = atom_model()
        vol = cv.VolatilitySurface.exponential_decay(grid, [0.02], 0.5)
        alpha = hd.riskfree_drift(m, vol)
        res = hd.condition_residual(None, 0, alpha, m, vol, None, None, None)
        assert res.max_abs() <= hd.residual_tolerance(0.05, grid.dt)


class TestDefaultableDrift:
    def test_zero_intensities_reduce_to_riskfree(self, grid):
        m = brownian()
        vol = cv.VolatilitySurface.constant(grid, [0.015])
        f, gs = flat_setup(grid)
        lam = np.zeros((grid.n_nodes, 3))
        for tag in (SchemeTag.MARKET_VALUE, SchemeTag.TREASURY, SchemeTag.PAR):
            alpha = hd.defaultable_drift(tag, 0, m, vol, f, gs, lam, 0.4)
            base = hd.riskfree_drift(m, vol)
            assert np.allclose(alpha.alpha, base.alpha, atol=1e-16)

    def test_k2_market_value_has_no_extra_term(self, grid):
        # one live class: the migration sum is empty
        m = brownian()
        vol = cv.VolatilitySurface.constant(grid, [0.015])
        f = cv.ForwardSurface.deterministic_flat(grid, 0.03)
        g1 = cv.ForwardSurface.deterministic_flat(grid, 0.05)
        lam = np.zeros((grid.n_nodes, 2))
        lam[:, 1] = 0.04
        alpha = hd.defaultable_drift(SchemeTag.MARKET_VALUE, 0, m, vol, f, [g1], lam, 0.4)
        assert np.allclose(alpha.alpha, hd.riskfree_drift(m, vol).alpha, atol=1e-16)

    def test_k2_treasury_flat_closed_form(self, grid):
        m = brownian()
        vol = cv.VolatilitySurface.constant(grid, [0.015])
        cf, cg, delta, lam_k = 0.03, 0.05, 0.4, 0.05
        f = cv.ForwardSurface.deterministic_flat(grid, cf)
        g1 = cv.ForwardSurface.deterministic_flat(grid, cg)
        lam = np.zeros((grid.n_nodes, 2))
        lam[:, 1] = lam_k
        alpha = hd.defaultable_drift(SchemeTag.TREASURY, 0, m, vol, f, [g1], lam, delta)
        base = hd.riskfree_drift(m, vol)
        t, th = 8, 33
        gap = grid.times[th] - grid.times[t]
        extra = alpha.alpha[t, th] - base.alpha[t, th]
        assert extra == pytest.approx(
            delta * lam_k * (cg - cf) * np.exp((cg - cf) * gap), rel=1e-12)

    def test_k2_treasury_vs_fd_of_integral_rhs(self, grid):
        # derivative of the integral-form right side reproduces the drift
        m = brownian()
        vol = cv.VolatilitySurface.constant(grid, [0.015])
        f, gs = flat_setup(grid, 0.03, (0.05,))
        delta, lam_k = 0.35, 0.06
        lam = np.zeros((grid.n_nodes, 2))
        lam[:, 1] = lam_k
        alpha = hd.defaultable_drift(SchemeTag.TREASURY, 0, m, vol, f, gs, lam, delta)
        t = 6
        dt = grid.dt
        s = 0.015

        def rhs(th_idx):
            gap = grid.times[th_idx] - grid.times[t]
            j = lc.laplace_exponent(m, [s * gap])
            return j + delta * lam_k * (np.exp((0.05 - 0.03) * gap) - 1.0)

        for th in range(t + 1, grid.n_nodes - 1):
            fd = (rhs(th + 1) - rhs(th - 1)) / (2 * dt)
            assert alpha.alpha[t, th] == pytest.approx(fd, rel=2e-4)

    def test_k2_par_closed_form(self, grid):
        m = brownian()
        vol = cv.VolatilitySurface.constant(grid, [0.015])
        f, gs = flat_setup(grid, 0.03, (0.05,))
        delta, lam_k = 0.4, 0.05
        lam = np.zeros((grid.n_nodes, 2))
        lam[:, 1] = lam_k
        alpha = hd.defaultable_drift(SchemeTag.PAR, 0, m, vol, f, gs, lam, delta)
        base = hd.riskfree_drift(m, vol)
        t, th = 4, 29
        gap = grid.times[th] - grid.times[t]
        extra = alpha.alpha[t, th] - base.alpha[t, th]
        assert extra == pytest.approx(delta * lam_k * 0.05 * np.exp(0.05 * gap), rel=1e-12)

    def test_market_and_multiple_coincide(self, grid):
        m = brownian()
        vol = cv.VolatilitySurface.constant(grid, [0.01])
        f, gs = flat_setup(grid)
        lam3 = np.zeros((grid.n_nodes, 3))
        lam3[:, 1] = 0.2
        lam3[:, 2] = 0.05
        a_mkt = hd.defaultable_drift(SchemeTag.MARKET_VALUE, 0, m, vol, f, gs, lam3, 0.4)
        a_mul = hd.defaultable_drift(SchemeTag.MULTIPLE_DEFAULTS, 0, m, vol, f, gs,
                                     lam3[:, :2], 0.4)
        assert np.allclose(a_mkt.alpha, a_mul.alpha, atol=1e-16)

    def test_treasury_par_coincide_at_zero_recovery(self, grid):
        m = brownian()
        vol = cv.VolatilitySurface.constant(grid, [0.01])
        f, gs = flat_setup(grid)
        lam = np.zeros((grid.n_nodes, 3))
        lam[:, 1] = 0.1
        lam[:, 2] = 0.04
        a_t = hd.defaultable_drift(SchemeTag.TREASURY, 0, m, vol, f, gs, lam, 0.0)
        a_p = hd.defaultable_drift(SchemeTag.PAR, 0, m, vol, f, gs, lam, 0.0)
        assert np.abs(a_t.alpha - a_p.alpha).max() <= 1e-14

    def test_rating_out_of_range_rejected(self, grid):
        m = brownian()
        vol = cv.VolatilitySurface.constant(grid, [0.01])
        f, gs = flat_setup(grid)
        lam = np.zeros((grid.n_nodes, 3))
        with pytest.raises(ValueError):
            hd.defaultable_drift(SchemeTag.TREASURY, 2, m, vol, f, gs, lam, 0.4)
        with pytest.raises(ValueError):
            hd.defaultable_drift(SchemeTag.TREASURY, 0, m, vol, f, [], lam, 0.4)


def test_gradient_argument_integration_start(grid):
    """In the continuum the gradient argument may integrate sigma from
    zero or from the clock time (sigma vanishes below the diagonal).  On
    the grid, integrating from the clock node is the faithful
    discretization: starting from node zero would give the support
    boundary at v = t a spurious interior full weight, overshooting by
    exactly half a step times sigma(t, t)."""
    vol = cv.VolatilitySurface.exponential_decay(grid, [0.01, 0.02], 0.3)
    for t in (0, 7, 23):
        for th in (t + 5, grid.n_steps):
            from_t = cv.trapz_uniform(vol.sigma[t, t:th + 1, :], grid.dt, axis=0)
            from_zero = cv.trapz_uniform(vol.sigma[t, 0:th + 1, :], grid.dt, axis=0)
            overshoot = (0.5 * grid.dt * vol.sigma[t, t, :]) if t > 0 else 0.0
            assert np.allclose(from_zero - from_t, overshoot, atol=1e-18)


class TestConditionResidual:
    def setup_case(self, grid, tag=SchemeTag.TREASURY):
        m = atom_model(y=0.8, rho=0.6)
        vol = cv.VolatilitySurface.exponential_decay(grid, [0.018], 0.3)
        f, gs = flat_setup(grid)
        lam = np.zeros((grid.n_nodes, 3))
        lam[:, 1] = 0.15
        lam[:, 2] = 0.05
        alpha = hd.defaultable_drift(tag, 0, m, vol, f, gs, lam, 0.4)
        return m, vol, f, gs, lam, alpha

    @pytest.mark.parametrize("tag", [SchemeTag.MARKET_VALUE, SchemeTag.TREASURY,
                                     SchemeTag.PAR])
    def test_synthesized_drift_satisfies_condition(self, grid, tag):
        m, vol, f, gs, lam, alpha = self.setup_case(grid, tag)
        res = hd.condition_residual(tag, 0, alpha, m, vol, f, gs, lam, 0.4)
        assert res.max_abs() <= hd.residual_tolerance(0.07, grid.dt)
        assert np.all(np.diag(res.residual) == 0.0)

    def test_single_cell_perturbation_detected(self, grid):
        m, vol, f, gs, lam, alpha = self.setup_case(grid)
        eps = 1e-4
        t, k = 5, 20
        pert = alpha.alpha.copy()
        pert[t, k] += eps
        res = hd.condition_residual(SchemeTag.TREASURY, 0,
                                    cv.DriftSurface(grid, pert),
                                    m, vol, f, gs, lam, 0.4)
        base = hd.condition_residual(SchemeTag.TREASURY, 0, alpha,
                                     m, vol, f, gs, lam, 0.4)
        bump = np.abs(res.residual - base.residual)
        assert bump[t, k] >= eps * grid.dt / 2 - 1e-15
        assert np.all(bump[t, k + 1:] >= eps * grid.dt / 2 - 1e-15)
        assert bump[t, k - 1] == 0.0

    def test_all_zero_case(self, grid):
        m = brownian()
        vol = cv.VolatilitySurface.zero(grid, 1)
        f, gs = flat_setup(grid)
        lam = np.zeros((grid.n_nodes, 3))
        alpha = cv.DriftSurface(grid, np.zeros((grid.n_nodes,) * 2))
        res = hd.condition_residual(SchemeTag.MARKET_VALUE, 0, alpha, m, vol,
                                    f, gs, lam, 0.0)
        assert res.max_abs() == 0.0

    def test_derivative_integral_agreement(self, grid):
        """Central differences of the integral RHS match the drift at
        interior nodes to second order in the maturity step."""
        m, vol, f, gs, lam, alpha = self.setup_case(grid, SchemeTag.PAR)
        res = hd.condition_residual(SchemeTag.PAR, 0, alpha, m, vol, f, gs, lam, 0.4)
        # residual(t, theta) = int alpha - RHS; FD in theta of the residual
        # is alpha - d(RHS)/dtheta, so small residual curvature certifies it
        t = 3
        row = res.residual[t, t:]
        dd = np.diff(row, 2) / grid.dt**2
        assert np.max(np.abs(dd)) <= 5e-4
