"""Grid surfaces: integrals, prices, evolution, conventions."""

import numpy as np
import pytest

from levyhjm import curves as cv

ATOL = 1e-12


@pytest.fixture
def grid():
    return cv.TimeGrid(2.0, 50)


class TestIntegrateSigma:
    def test_empty_interval(self, grid):
        vol = cv.VolatilitySurface.constant(grid, [0.01, 0.02])
        assert np.allclose(cv.integrate_sigma(vol, 7, 7), 0.0, atol=ATOL)

    def test_constant_integrand(self, grid):
        vol = cv.VolatilitySurface.constant(grid, [0.01, 0.02])
        th = grid.index_of(0.52)
        t = grid.index_of(0.0)
        got = cv.integrate_sigma(vol, t, th)
        assert np.allclose(got, [0.01 * 0.52, 0.02 * 0.52], atol=ATOL)

    def test_linear_integrand_trapezoid_exact(self):
        grid = cv.TimeGrid(1.0, 100)
        n = grid.n_nodes
        sig = np.zeros((n, n, 1))
        iu = np.triu_indices(n)
        sig[iu[0], iu[1], 0] = grid.times[iu[1]]          # sigma(t, v) = v
        vol = cv.VolatilitySurface(grid, sig)
        got = cv.integrate_sigma(vol, 0, grid.n_steps)[0]
        assert got == pytest.approx(0.5, abs=1e-15)


class TestBondPrice:
    def test_flat_curve(self, grid):
        f = cv.ForwardSurface.deterministic_flat(grid, 0.03)
        assert cv.bond_price(f, 0, grid.index_of(2.0)) == pytest.approx(np.exp(-0.06), abs=ATOL)

    def test_at_maturity_is_one(self, grid):
        f = cv.ForwardSurface.deterministic_flat(grid, 0.05)
        assert cv.bond_price(f, 17, 17) == 1.0

    def test_matured_bond_accrues(self, grid):
        f = cv.ForwardSurface.deterministic_flat(grid, 0.03)
        got = cv.bond_price(f, grid.index_of(2.0), grid.index_of(1.0))
        assert got == pytest.approx(np.exp(0.03), abs=ATOL)

    def test_positive_and_bounded(self, grid):
        rng_ = np.random.default_rng(1)
        n = grid.n_nodes
        rates = rng_.uniform(-0.02, 0.09, (n, n))
        f = cv.ForwardSurface(grid, rates, frontier=n - 1)
        cap = np.exp(np.abs(rates).max() * grid.horizon)
        for t, th in [(0, 50), (10, 40), (25, 30)]:
            p = cv.bond_price(f, t, th)
            assert 0.0 < p <= cap


class TestDiscountedBond:
    def test_time_zero(self, grid):
        f = cv.ForwardSurface.deterministic_flat(grid, 0.03)
        th = grid.index_of(1.2)
        assert cv.discounted_bond(f, 0, th) == pytest.approx(np.exp(-0.036), abs=ATOL)

    def test_theta_zero_is_one(self, grid):
        f = cv.ForwardSurface.deterministic_flat(grid, 0.03)
        assert cv.discounted_bond(f, 30, 0) == 1.0

    def test_frozen_flat_curve_time_invariant(self, grid):
        f = cv.ForwardSurface.deterministic_flat(grid, 0.03)
        th = grid.index_of(1.6)
        vals = [cv.discounted_bond(f, t, th) for t in (0, 10, 40, 50)]
        assert np.allclose(vals, np.exp(-0.048), atol=ATOL)

    def test_product_identity_with_bank_account(self, grid):
        rng_ = np.random.default_rng(3)
        n = grid.n_nodes
        f = cv.ForwardSurface.from_initial(grid, 0.03 + 0.01 * grid.times)
        vol = cv.VolatilitySurface.constant(grid, [0.01])
        for s in range(grid.n_steps):
            alpha = np.zeros((n, n))
            alpha[s, s:] = 0.002
            drift = cv.DriftSurface(grid, alpha)
            f = cv.evolve_step(f, drift, vol, rng_.normal(0, 0.05, 1), grid.dt)
        for t in (0, 13, 27, 50):
            for th in (t, min(t + 9, 50), 50):
                lhs = cv.discounted_bond(f, t, th) * cv.bank_account(f, t)
                rhs = cv.bond_price(f, t, th)
                assert abs(lhs - rhs) <= 1e-12 * rhs


class TestEvolveStep:
    def test_no_drift_no_vol_unchanged(self, grid):
        f = cv.ForwardSurface.from_initial(grid, np.full(grid.n_nodes, 0.04))
        drift = cv.DriftSurface(grid, np.zeros((grid.n_nodes,) * 2))
        vol = cv.VolatilitySurface.zero(grid, 1)
        f2 = cv.evolve_step(f, drift, vol, np.zeros(1), grid.dt)
        assert np.allclose(f2.rates[1], f.rates[0], atol=ATOL)

    def test_deterministic_drift(self, grid):
        n = grid.n_nodes
        f = cv.ForwardSurface.from_initial(grid, np.full(n, 0.04))
        alpha = np.zeros((n, n))
        iu = np.triu_indices(n)
        alpha[iu] = 0.01
        drift = cv.DriftSurface(grid, alpha)
        vol = cv.VolatilitySurface.zero(grid, 1)
        f2 = cv.evolve_step(f, drift, vol, np.zeros(1), 0.04)
        assert np.allclose(f2.rates[1, 1:], 0.04 + 0.0004, atol=ATOL)
        assert f2.rates[1, 0] == f.rates[0, 0]

    def test_matches_handrolled_oracle(self, grid):
        n = grid.n_nodes
        rng_ = np.random.default_rng(8)
        f0 = 0.03 + 0.01 * rng_.random(n)
        alpha = np.zeros((n, n))
        iu = np.triu_indices(n)
        alpha[iu] = rng_.normal(0, 0.01, iu[0].size)
        sig = np.zeros((n, n, 2))
        sig[iu] = rng_.normal(0, 0.01, (iu[0].size, 2))
        dz = rng_.normal(0, 0.1, 2)

        f = cv.ForwardSurface.from_initial(grid, f0)
        f = cv.evolve_step(f, cv.DriftSurface(grid, alpha),
                           cv.VolatilitySurface(grid, sig), dz, grid.dt)
        f = cv.evolve_step(f, cv.DriftSurface(grid, alpha),
                           cv.VolatilitySurface(grid, sig), dz, grid.dt)

        # naive loop oracle
        want = np.empty((3, n))
        want[0] = f0
        for t in range(2):
            for k in range(n):
                if k >= t + 1:
                    want[t + 1, k] = (want[t, k] + alpha[t, k] * grid.dt
                                      + sig[t, k] @ dz)
                else:
                    want[t + 1, k] = want[k, k]
        assert np.allclose(f.rates[2], want[2], atol=1e-14)

    def test_flat_extension_idempotence(self, grid):
        n = grid.n_nodes
        rng_ = np.random.default_rng(4)
        f = cv.ForwardSurface.from_initial(grid, np.full(n, 0.05))
        vol = cv.VolatilitySurface.constant(grid, [0.02])
        alpha = np.zeros((n, n))
        iu = np.triu_indices(n)
        alpha[iu] = 0.01
        drift = cv.DriftSurface(grid, alpha)
        theta = 5
        for s in range(20):
            f = cv.evolve_step(f, drift, vol, rng_.normal(0, 0.2, 1), grid.dt)
        # once matured, the theta column never moves again
        vals = f.rates[theta:21, theta]
        assert np.allclose(vals, f.rates[theta, theta], atol=ATOL)

    def test_shape_mismatch_rejected(self, grid):
        f = cv.ForwardSurface.from_initial(grid, np.full(grid.n_nodes, 0.05))
        drift = cv.DriftSurface(grid, np.zeros((grid.n_nodes,) * 2))
        vol = cv.VolatilitySurface.zero(grid, 2)
        with pytest.raises(ValueError):
            cv.evolve_step(f, drift, vol, np.zeros(3), grid.dt)


class TestOrderingCheck:
    def test_counts_violations_and_warns(self, grid, caplog):
        f_row = np.full(grid.n_nodes, 0.05)
        g_row = np.full(grid.n_nodes, 0.04)   # inverted
        with caplog.at_level("WARNING"):
            count = cv.check_rating_order(f_row, [g_row])
        assert count == grid.n_nodes
        assert "rating-order" in caplog.text

    def test_ok_counts_zero(self, grid):
        f_row = np.full(grid.n_nodes, 0.03)
        g1 = np.full(grid.n_nodes, 0.05)
        g2 = np.full(grid.n_nodes, 0.06)
        assert cv.check_rating_order(f_row, [g1, g2]) == 0


class TestTrapz:
    def test_additivity_over_subintervals(self):
        rng_ = np.random.default_rng(0)
        v = rng_.normal(size=31)
        dx = 0.1
        full = cv.trapz_uniform(v, dx)
        split = cv.trapz_uniform(v[:11], dx) + cv.trapz_uniform(v[10:], dx)
        assert full == pytest.approx(split, abs=1e-14)

    def test_cumtrapz_endpoint_matches(self):
        rng_ = np.random.default_rng(1)
        v = rng_.normal(size=17)
        c = cv.cumtrapz_uniform(v, 0.25)
        assert c[0] == 0.0
        assert c[-1] == pytest.approx(cv.trapz_uniform(v, 0.25), abs=1e-14)
