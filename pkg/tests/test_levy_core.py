"""Transforms and exact simulation of the factor noise.

Expected values are closed forms of the finite-atom model or Monte Carlo
cross-checks; the gradient is checked against central finite differences.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from levyhjm import levy_core as lc

ATOL = 1e-12


def brownian(q=0.04):
    return lc.LevyModel(dim=1, drift_a=[0.0], cov_Q=[[q]],
                        atom_y=np.zeros((0, 1)), atom_rho=[])


def single_large_atom(y=2.0, rho=3.0):
    return lc.LevyModel(dim=1, drift_a=[0.0], cov_Q=[[0.0]],
                        atom_y=[[y]], atom_rho=[rho])


def mixed_model():
    return lc.LevyModel(dim=2, drift_a=[0.1, -0.2],
                        cov_Q=[[1.0, 0.2], [0.2, 0.5]],
                        atom_y=[[0.5, 0.1], [1.5, -0.5]],
                        atom_rho=[2.0, 0.7])


class TestLaplaceExponent:
    def test_zero_argument_vanishes(self):
        for m in (brownian(), single_large_atom(), mixed_model()):
            assert lc.laplace_exponent(m, np.zeros(m.dim)) == 0.0

    def test_brownian_closed_form(self):
        # 0.5 * q * u^2 with q=0.04, u=2
        assert lc.laplace_exponent(brownian(0.04), [2.0]) == pytest.approx(0.08, abs=ATOL)

    def test_single_atom_closed_form(self):
        # rho * (e^{-u y} - 1) = 3 (e^{-1} - 1)
        val = lc.laplace_exponent(single_large_atom(), [0.5])
        assert val == pytest.approx(3 * (np.exp(-1) - 1), abs=ATOL)
        assert val == pytest.approx(-1.896361676485673, abs=1e-9)

    def test_mgf_identity_small_mc(self):
        m = single_large_atom()
        times = np.array([0.0, 1.0])
        z = lc.simulate_increment_batch(m, times, seed=7, n_paths=40000)[:, 0, 0]
        u = 0.5
        samples = np.exp(-u * z)
        target = np.exp(lc.laplace_exponent(m, [u]))
        se = samples.std(ddof=1) / np.sqrt(samples.size)
        assert abs(samples.mean() - target) < 4 * se

    def test_overflow_raises_domain_error(self):
        with pytest.raises(lc.LevyDomainError):
            lc.laplace_exponent(single_large_atom(), [-500.0])


class TestGradient:
    def test_brownian_gradient_is_qu(self):
        m = lc.LevyModel(dim=2, drift_a=[0.0, 0.0], cov_Q=[[1.0, 0.3], [0.3, 2.0]],
                         atom_y=np.zeros((0, 2)), atom_rho=[])
        u = np.array([0.4, -1.1])
        assert np.allclose(lc.laplace_exponent_gradient(m, u), m.cov_Q @ u, atol=ATOL)

    def test_gradient_at_zero_is_minus_mean(self):
        for m in (brownian(), single_large_atom(), mixed_model()):
            g0 = lc.laplace_exponent_gradient(m, np.zeros(m.dim))
            assert np.allclose(g0, -m.mean_increment_rate(), atol=ATOL)

    def test_gradient_at_zero_matches_sample_mean(self):
        m = mixed_model()
        times = np.array([0.0, 1.0])
        z = lc.simulate_increment_batch(m, times, seed=3, n_paths=60000)[:, 0, :]
        se = z.std(axis=0, ddof=1) / np.sqrt(z.shape[0])
        assert np.all(np.abs(z.mean(axis=0) - m.mean_increment_rate()) < 4 * se)

    def test_single_atom_closed_form(self):
        g = lc.laplace_exponent_gradient(single_large_atom(), [0.5])
        assert g[0] == pytest.approx(-6 * np.exp(-1), abs=ATOL)

    @pytest.mark.parametrize("model", [brownian(), single_large_atom(), mixed_model()])
    def test_finite_difference_oracle(self, model):
        rng_ = np.random.default_rng(5)
        h = 1e-5
        eye = np.eye(model.dim)
        for _ in range(100):
            u = rng_.uniform(-2, 2, model.dim)
            g = lc.laplace_exponent_gradient(model, u)
            fd = np.array([
                (lc.laplace_exponent(model, u + h * e)
                 - lc.laplace_exponent(model, u - h * e)) / (2 * h)
                for e in eye])
            assert np.linalg.norm(g - fd) / (1 + np.linalg.norm(g)) <= 1e-6


class TestLaplaceTail:
    def test_no_large_atoms(self):
        m = lc.LevyModel(dim=1, drift_a=[0.0], cov_Q=[[1.0]],
                         atom_y=[[0.5]], atom_rho=[1.0])
        assert lc.laplace_tail(m, [3.0]) == 0.0
        assert lc.laplace_tail(brownian(), [1.0]) == 0.0

    def test_closed_forms(self):
        m = single_large_atom()
        assert lc.laplace_tail(m, [0.0]) == pytest.approx(3.0, abs=ATOL)
        assert lc.laplace_tail(m, [1.0]) == pytest.approx(3 * np.exp(-2), abs=ATOL)
        assert lc.laplace_tail(m, [1.0]) == pytest.approx(0.406005850, abs=1e-9)

    def test_finite_everywhere(self):
        m = single_large_atom()
        for u in (-50.0, -5.0, 0.0, 5.0, 50.0):
            assert np.isfinite(lc.laplace_tail(m, [u]))


class TestConvexity:
    @given(st.integers(min_value=0, max_value=10**6),
           st.floats(min_value=0.0, max_value=1.0))
    @settings(max_examples=100, deadline=None)
    def test_convex_along_rays(self, seed, s):
        m = mixed_model()
        u = np.random.default_rng(seed).uniform(-2, 2, m.dim)
        lhs = lc.laplace_exponent(m, s * u)
        rhs = s * lc.laplace_exponent(m, u) + (1 - s) * lc.laplace_exponent(m, 0 * u)
        assert lhs <= rhs + 1e-12


class TestSimulation:
    def test_zero_model_zero_increments(self):
        m = lc.LevyModel(dim=1, drift_a=[0.0], cov_Q=[[0.0]],
                         atom_y=np.zeros((0, 1)), atom_rho=[])
        p = lc.simulate_increments(m, np.linspace(0, 1, 11), seed=1)
        assert np.all(p.increments == 0.0)
        assert p.jump_events == []

    def test_pure_drift(self):
        m = lc.LevyModel(dim=1, drift_a=[1.0], cov_Q=[[0.0]],
                         atom_y=np.zeros((0, 1)), atom_rho=[])
        p = lc.simulate_increments(m, np.linspace(0, 1, 3), seed=1)
        assert np.allclose(p.increments, 0.5, atol=ATOL)

    def test_compound_poisson_moments(self):
        m = single_large_atom()  # E Z(1) = rho*y = 6, Var = rho*y^2 = 12
        times = np.linspace(0, 1, 6)
        z1 = lc.simulate_increment_batch(m, times, seed=11, n_paths=100000).sum(axis=1)[:, 0]
        n = z1.size
        se_mean = np.sqrt(12 / n)
        assert abs(z1.mean() - 6.0) < 4 * se_mean
        # Var(sample var) ~ (mu4 - sigma^4)/n with kappa4 = rho y^4 = 48
        mu4 = 48 + 3 * 12**2
        se_var = np.sqrt((mu4 - 144) / n)
        assert abs(z1.var(ddof=1) - 12.0) < 4 * se_var

    def test_seed_reproducibility_bit_identical(self):
        m = mixed_model()
        times = np.linspace(0, 2, 9)
        a = lc.simulate_increments(m, times, seed=77, path_id=5)
        b = lc.simulate_increments(m, times, seed=77, path_id=5)
        assert np.array_equal(a.increments, b.increments)
        assert a.jump_events == b.jump_events

    def test_batch_matches_single_paths(self):
        m = mixed_model()
        times = np.linspace(0, 1, 5)
        batch = lc.simulate_increment_batch(m, times, seed=13, n_paths=8)
        for pid in range(8):
            single = lc.simulate_increments(m, times, seed=13, path_id=pid)
            assert np.array_equal(batch[pid], single.increments)

    def test_increment_autocorrelation_near_zero(self):
        m = mixed_model()
        times = np.linspace(0, 1, 21)
        z = lc.simulate_increment_batch(m, times, seed=2, n_paths=4000)[:, :, 0]
        a = z[:, :-1].ravel()
        b = z[:, 1:].ravel()
        corr = np.corrcoef(a, b)[0, 1]
        assert abs(corr) < 4 / np.sqrt(a.size)

    def test_jump_times_inside_their_steps(self):
        m = single_large_atom()
        times = np.linspace(0, 1, 5)
        p = lc.simulate_increments(m, times, seed=21, path_id=0)
        assert all(0.0 < t < 1.0 for t, _ in p.jump_events)

    def test_invalid_model_rejected(self):
        with pytest.raises(lc.ModelInvariantError):
            lc.LevyModel(dim=1, drift_a=[0.0], cov_Q=[[-1.0]],
                         atom_y=np.zeros((0, 1)), atom_rho=[])
        with pytest.raises(lc.ModelInvariantError):
            lc.LevyModel(dim=1, drift_a=[0.0], cov_Q=[[1.0]],
                         atom_y=[[1.0]], atom_rho=[0.0])
        with pytest.raises(lc.ModelInvariantError):
            lc.LevyModel(dim=2, drift_a=[0.0, 0.0],
                         cov_Q=[[1.0, 0.5], [0.0, 1.0]],
                         atom_y=np.zeros((0, 2)), atom_rho=[])

    def test_cumulative_reconstructs_path(self):
        m = mixed_model()
        times = np.linspace(0, 1, 5)
        p = lc.simulate_increments(m, times, seed=19, path_id=2)
        z = p.cumulative()
        assert z.shape == (5, 2)
        assert np.all(z[0] == 0.0)
        assert np.allclose(z[-1], p.increments.sum(axis=0), atol=1e-15)

    def test_semidefinite_covariance_tolerated(self):
        q = np.array([[1.0, 1.0], [1.0, 1.0]])  # rank one
        m = lc.LevyModel(dim=2, drift_a=[0.0, 0.0], cov_Q=q,
                         atom_y=np.zeros((0, 2)), atom_rho=[])
        z = lc.simulate_increment_batch(m, np.array([0.0, 1.0]), seed=1, n_paths=20000)
        cov = np.cov(z[:, 0, :].T)
        assert np.allclose(cov, q, atol=0.05)
