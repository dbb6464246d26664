"""Martingale z-tests, consistency/drift equivalence, common-jump audit."""

import numpy as np
import pytest

from levyhjm import curves as cv, hjm_drift as hd, levy_core as lc
from levyhjm import migration as mg, verification as vf
from levyhjm.migration import SpreadCouplingError
from levyhjm.pricing import SchemeTag


class TestMartingaleTest:
    def test_deterministic_degenerate_passes_at_zero(self):
        samples = np.full((2000, 3), 0.9)
        rep = vf.martingale_test(samples, 0.9, [0.5, 1.0, 1.5])
        assert rep.passed and rep.max_abs_z == 0.0

    def test_deterministic_offset_flagged(self):
        samples = np.full((2000, 1), 0.9)
        rep = vf.martingale_test(samples, 0.8, [1.0])
        assert rep.degenerate and not rep.passed

    def test_centered_noise_passes(self):
        rng_ = np.random.default_rng(0)
        samples = 0.9 + rng_.normal(0, 0.01, (50000, 4))
        rep = vf.martingale_test(samples, 0.9, [0.5, 1.0, 1.5, 2.0])
        assert rep.passed

    def test_small_drift_detected(self):
        rng_ = np.random.default_rng(1)
        samples = 0.903 + rng_.normal(0, 0.01, (50000, 2))
        rep = vf.martingale_test(samples, 0.9, [1.0, 2.0])
        assert not rep.passed and rep.max_abs_z > 4

    def test_needs_enough_paths(self):
        with pytest.raises(ValueError):
            vf.martingale_test(np.ones((10, 2)), 1.0, [0.5, 1.0])

    def test_report_dict_round(self):
        samples = np.random.default_rng(2).normal(1.0, 0.05, (5000, 2))
        rep = vf.martingale_test(samples, 1.0, [1.0, 2.0])
        d = rep.to_dict()
        assert d["verdict"] in ("pass", "fail")
        assert len(d["z"]) == 2


def random_coupled_case(rng_, tag, grid):
    """Random surfaces, intensities, and recoveries with the short-spread
    coupling enforced; returns everything equivalence_check needs."""
    n = grid.n_nodes
    d = 2
    m = lc.LevyModel(dim=d, drift_a=rng_.normal(0, 0.1, d),
                     cov_Q=np.eye(d) * rng_.uniform(0.5, 1.5),
                     atom_y=rng_.normal(0, 0.5, (2, d)),
                     atom_rho=rng_.uniform(0.1, 1.0, 2))
    vol = cv.VolatilitySurface.exponential_decay(
        grid, rng_.uniform(0.001, 0.004, d), rng_.uniform(0.2, 0.8))
    f0 = rng_.uniform(0.01, 0.04)
    f = cv.ForwardSurface.deterministic_flat(grid, f0)
    g1v = f0 + rng_.uniform(0.01, 0.03)
    g2v = g1v + rng_.uniform(0.01, 0.03)
    g1 = cv.ForwardSurface.deterministic_flat(grid, g1v, "r1")
    g2 = cv.ForwardSurface.deterministic_flat(grid, g2v, "r2")
    lam = np.zeros((n, 3))
    lam[:, 1] = rng_.uniform(0.05, 0.3)
    if tag is SchemeTag.MULTIPLE_DEFAULTS:
        loss = rng_.uniform(0.2, 0.9)
        lam[:, 2] = (g1v - f0) / loss
        delta = 1.0 - loss
        lam_drift = lam[:, :2]
    else:
        delta = rng_.uniform(0.0, 0.8)
        lam[:, 2] = (g1v - f0) / (1 - delta)
        lam_drift = lam
    alpha = hd.defaultable_drift(tag, 0, m, vol, f, [g1, g2], lam_drift, delta)
    return m, vol, f, [g1, g2], lam, alpha, delta


class TestEquivalence:
    @pytest.mark.parametrize("tag", [SchemeTag.MARKET_VALUE, SchemeTag.TREASURY,
                                     SchemeTag.PAR, SchemeTag.MULTIPLE_DEFAULTS])
    def test_coupled_inputs_have_rounding_gap(self, tag):
        rng_ = np.random.default_rng(99)
        grid = cv.TimeGrid(1.5, 20)
        for _ in range(10):
            m, vol, f, gs, lam, alpha, delta = random_coupled_case(rng_, tag, grid)
            gap = vf.equivalence_check(tag, 0, m, vol, f, gs, lam, alpha, delta)
            assert gap <= 1e-12

    def test_broken_coupling_detected(self):
        rng_ = np.random.default_rng(7)
        grid = cv.TimeGrid(1.5, 20)
        m, vol, f, gs, lam, alpha, delta = random_coupled_case(
            rng_, SchemeTag.MARKET_VALUE, grid)
        lam_bad = lam.copy()
        lam_bad[:, 2] += 0.01
        with pytest.raises(SpreadCouplingError):
            vf.equivalence_check(SchemeTag.MARKET_VALUE, 0, m, vol, f, gs,
                                 lam_bad, alpha, delta)
        gap = vf.equivalence_check(SchemeTag.MARKET_VALUE, 0, m, vol, f, gs,
                                   lam_bad, alpha, delta, require_coupling=False)
        assert gap > 1e-6

    def test_full_recovery_market_value_term_vanishes(self):
        # delta = 1 removes the recovery term from the consistency relation
        grid = cv.TimeGrid(1.0, 10)
        n = grid.n_nodes
        m = lc.LevyModel(dim=1, drift_a=[0.0], cov_Q=[[1.0]],
                         atom_y=np.zeros((0, 1)), atom_rho=[])
        vol = cv.VolatilitySurface.constant(grid, [0.002])
        f = cv.ForwardSurface.deterministic_flat(grid, 0.03)
        g1 = cv.ForwardSurface.deterministic_flat(grid, 0.05)
        g2 = cv.ForwardSurface.deterministic_flat(grid, 0.07)
        lam = np.zeros((n, 3))
        lam[:, 2] = 5.0    # arbitrary: multiplies (delta-1) D = 0
        alpha = hd.defaultable_drift(SchemeTag.MARKET_VALUE, 0, m, vol, f,
                                     [g1, g2], lam, 1.0)
        c1 = vf.consistency_residual(SchemeTag.MARKET_VALUE, 0, m, vol, f,
                                     [g1, g2], lam, alpha, 1.0)
        lam0 = lam.copy()
        lam0[:, 2] = 0.0
        c2 = vf.consistency_residual(SchemeTag.MARKET_VALUE, 0, m, vol, f,
                                     [g1, g2], lam0, alpha, 1.0)
        assert np.abs(c1.values - c2.values).max() <= 1e-15

    def test_no_migration_residual_proportional_to_riskfree(self):
        # with only the default intensity active (coupled), the consistency
        # relation collapses to D_i times the risk-free drift residual
        grid = cv.TimeGrid(1.0, 10)
        n = grid.n_nodes
        m = lc.LevyModel(dim=1, drift_a=[0.0], cov_Q=[[1.0]],
                         atom_y=[[0.6]], atom_rho=[0.5])
        vol = cv.VolatilitySurface.constant(grid, [0.003])
        f = cv.ForwardSurface.deterministic_flat(grid, 0.03)
        g1 = cv.ForwardSurface.deterministic_flat(grid, 0.05)
        g2 = cv.ForwardSurface.deterministic_flat(grid, 0.07)
        delta = 0.4
        lam = np.zeros((n, 3))
        lam[:, 2] = 0.02 / (1 - delta)
        alpha = hd.riskfree_drift(m, vol)          # deliberately not coupled
        cons = vf.consistency_residual(SchemeTag.MARKET_VALUE, 0, m, vol, f,
                                       [g1, g2], lam, alpha, delta)
        base = hd.condition_residual(None, 0, alpha, m, vol, None, None, None)
        for t in range(n):
            d_i = np.exp(-cv.cumtrapz_uniform(g1.rates[t, t:], grid.dt))
            want = -d_i * base.residual[t, t:]
            assert np.abs(cons.values[t, t:] - want).max() <= 1e-14


class TestDriftDecomposition:
    """Per-step drift of the discounted price along paths.

    Splits into a spread-coupling defect (independent of maturity) and the
    drift-condition defect; under coupled intensities and synthesized
    drifts both vanish, and an uncoupled default intensity produces a
    drift equal to the price-weighted coupling defect.
    """

    def _tables(self, spread_coupled):
        from levyhjm import engine as en
        from levyhjm.pricing import RecoveryScheme
        grid = cv.TimeGrid(1.0, 10)
        n = grid.n_nodes
        mf = lc.LevyModel(dim=1, drift_a=[0.0], cov_Q=[[1.0]],
                          atom_y=np.zeros((0, 1)), atom_rho=[])
        vol_f = cv.VolatilitySurface.constant(grid, [0.0015])
        vol_g = cv.VolatilitySurface.constant(grid, [0.001])
        f0 = np.full(n, 0.03)
        g0 = np.full((1, n), 0.05)
        scheme = RecoveryScheme(tag=SchemeTag.TREASURY, deltas=np.array([0.4]))
        return en.build_tables(
            grid, [mf, mf], [vol_f, vol_g], f0, g0, scheme,
            np.zeros((n, 1, 1)), np.array([0.4]), seed=606,
            checkpoints=list(range(1, 11)), spread_coupled=spread_coupled,
            lam_def_table=np.zeros((n, 1)))

    def _collect(self, tab, n_paths=600):
        from levyhjm import engine as en
        incs, preds = [], []
        for pid in range(n_paths):
            ref = en.reference_path(tab, pid)
            dhat = ref.dhat_nodes
            incs.append(np.diff(dhat))
            r_diag = np.array([ref.surfaces[0].rates[s, s]
                               for s in range(tab.n_steps)])
            g_diag = np.array([ref.surfaces[1].rates[s, s]
                               for s in range(tab.n_steps)])
            lam_def = (ref.lam_def_nodes[:tab.n_steps, 0]
                       if tab.spread_coupled else tab.lam_def_table[:tab.n_steps, 0])
            i1 = (g_diag - r_diag) - (1 - 0.4) * lam_def
            preds.append(dhat[:-1] * i1 * tab.dt)
        return np.array(incs), np.array(preds)

    def test_coupled_drift_vanishes(self):
        tab = self._tables(spread_coupled=True)
        incs, _ = self._collect(tab)
        pooled = incs.sum(axis=1)          # regression on dt = pooled mean
        se = pooled.std(ddof=1) / np.sqrt(len(pooled))
        assert abs(pooled.mean()) <= 3 * se

    def test_uncoupled_intensity_drift_matches_prediction(self):
        tab = self._tables(spread_coupled=False)   # lambda_def frozen at zero
        incs, preds = self._collect(tab)
        pooled = incs.sum(axis=1)
        pred = preds.sum(axis=1)
        resid = pooled - pred
        se_r = resid.std(ddof=1) / np.sqrt(len(resid))
        se_p = pooled.std(ddof=1) / np.sqrt(len(pooled))
        # the drift is real (many standard errors from zero) and explained
        assert abs(pooled.mean()) > 3 * se_p
        assert abs(resid.mean()) <= 3 * se_r


class TestCommonJumpAudit:
    def test_empty_sets(self):
        assert vf.common_jump_audit([], [1.0, 2.0]) == 0
        assert vf.common_jump_audit([0.5], []) == 0

    def test_injected_coincidence_found(self):
        t = 0.7234567890123
        assert vf.common_jump_audit([0.1, t, 1.5], [t, 1.9]) == 1

    def test_independent_streams_no_coincidence(self):
        m = lc.LevyModel(dim=1, drift_a=[0.0], cov_Q=[[0.0]],
                         atom_y=[[2.0]], atom_rho=[1.5])
        gen = mg.IntensityMatrixProcess.constant(
            [[-0.8, 0.5, 0.3], [0.4, -0.9, 0.5], [0.0, 0.0, 0.0]])
        grid = cv.TimeGrid(2.0, 8)
        hits = vf.paired_jump_audit(m, gen, grid, seed=123, n_paths=3000)
        assert hits == 0

    def test_audit_against_single_path_api(self):
        # the vectorized audit sees the same jump times as IncrementPath
        m = lc.LevyModel(dim=1, drift_a=[0.0], cov_Q=[[0.0]],
                         atom_y=[[2.0]], atom_rho=[1.5])
        grid = cv.TimeGrid(2.0, 8)
        p = lc.simulate_increments(m, grid.times, seed=55, path_id=3)
        times_api = sorted(t for t, _ in p.jump_events)
        # regenerate through the audit internals for one path
        gen = mg.IntensityMatrixProcess.constant([[-0.5, 0.5], [0.0, 0.0]])
        # count coincidences of the path against itself via the audit op
        assert vf.common_jump_audit(times_api, times_api) == len(times_api)
