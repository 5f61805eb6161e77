import json
import math
from dataclasses import replace

import numpy as np
import pytest

from hiertest import simulation
from hiertest.engine import EngineConfig, HierTestResult
from hiertest.simulation import (
    BUCKETS,
    GroundTruth,
    ScenarioSpec,
    active_set,
    bucket_counts,
    calibrate_sigma,
    correlated_block_columns,
    design_matrix,
    generate_design,
    monotonicity_violations,
    performance1,
    performance2,
    run_metrics,
    run_scenario,
    tpr_fpr,
)


def fake_result(tree, p_h):
    p_h = np.asarray(p_h, dtype=float)
    return HierTestResult(tree, p_h[:, None], p_h, p_h, EngineConfig(), np.array([1.0]), ())


def small_engine(**kw):
    return EngineConfig(B=3, cv_folds=5, **kw)


def off_diag_mean(C):
    return (C.sum() - np.trace(C)) / (C.size - C.shape[0])


class TestDesigns:
    def test_equicorrelation(self):
        X = design_matrix(ScenarioSpec("equi_corr", n=4000, p=12, s0=2))
        assert off_diag_mean(np.corrcoef(X.T)) == pytest.approx(0.3, abs=0.03)

    def test_equicorrelation_zero_is_near_identity(self):
        X = design_matrix(ScenarioSpec("equi_corr", n=200, p=20, s0=2, rho=0.0, seed=3))
        off = np.abs(np.corrcoef(X.T) - np.eye(20))[~np.eye(20, dtype=bool)]
        # sampling sd of each entry is about 1 / sqrt(200); the max of 190 entries is near 0.2
        assert off.mean() <= 0.15
        assert off.max() <= 4 / np.sqrt(200)

    def test_small_blocks(self):
        X = design_matrix(ScenarioSpec("small_blocks", n=4000, p=12, s0=3, rho=0.8))
        C = np.corrcoef(X.T)
        for j in (0, 2, 4):
            assert C[j, j + 1] == pytest.approx(0.8, abs=0.03)
        assert abs(C[6, 7]) < 0.06
        assert abs(C[1, 2]) < 0.06

    def test_large_blocks(self):
        X = design_matrix(ScenarioSpec("large_blocks", n=3000, p=30, s0=2, rho=0.6))
        C = np.corrcoef(X.T)
        assert off_diag_mean(C[:3, :3]) == pytest.approx(0.6, abs=0.05)
        assert abs(C[:3, 3:6]).max() < 0.08

    @pytest.mark.parametrize("design", ["equi_corr", "small_blocks", "large_blocks"])
    def test_standardized_and_fixed(self, design):
        spec = ScenarioSpec(design, n=50, p=20, s0=4, seed=3)
        X = design_matrix(spec)
        np.testing.assert_allclose(X.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose((X**2).mean(axis=0), 1.0)
        np.testing.assert_array_equal(X, design_matrix(spec))
        assert not np.array_equal(X, design_matrix(replace(spec, seed=4)))

    def test_semi_real_normal_picks_columns(self, rng):
        M = rng.standard_normal((30, 50))
        X = design_matrix(ScenarioSpec("semi_real_normal", n=30, p=8, s0=2, external_matrix="-"), external=M)
        Z = simulation.standardize_columns(M)
        matches = [np.flatnonzero(np.all(np.isclose(Z, X[:, [j]]), axis=0)) for j in range(8)]
        assert all(len(m) == 1 for m in matches)

    def test_external_row_mismatch(self, rng):
        spec = ScenarioSpec("semi_real_normal", n=30, p=8, s0=2, external_matrix="-")
        with pytest.raises(ValueError, match="rows"):
            design_matrix(spec, external=rng.standard_normal((20, 50)))


class TestCorrelatedBlocks:
    def test_blocks_follow_their_leader(self, rng):
        latent = rng.standard_normal((200, 4))
        M = np.repeat(latent, 10, axis=1) + 0.3 * rng.standard_normal((200, 40))
        cols = correlated_block_columns(M, 20, rng)
        assert len(set(cols.tolist())) == 20
        for b in range(2):
            groups = {c // 10 for c in cols[10 * b: 10 * b + 10]}
            assert len(groups) == 1

    def test_too_many_columns(self, rng):
        with pytest.raises(ValueError):
            correlated_block_columns(rng.standard_normal((10, 5)), 6, rng)


class TestTruth:
    def test_small_blocks_one_active_per_pair(self, rng):
        spec = ScenarioSpec("small_blocks", n=20, p=30, s0=10)
        S = active_set(spec, rng)
        np.testing.assert_array_equal(S // 2, np.arange(10))

    def test_large_blocks_distinct_blocks(self, rng):
        spec = ScenarioSpec("large_blocks", n=20, p=200, s0=7)
        S = active_set(spec, rng)
        assert len(set((S // 20).tolist())) == 7

    def test_semi_real_blocks_leaders(self, rng):
        spec = ScenarioSpec("semi_real_blocks", n=20, p=50, s0=3, external_matrix="-")
        assert np.all(active_set(spec, rng) % 10 == 0)

    @pytest.mark.parametrize("snr", [0.5, 4.0, 8.0])
    def test_sigma_achieves_snr(self, snr):
        X, truth = generate_design(ScenarioSpec("equi_corr", n=80, p=30, s0=5, snr=snr))
        signal = X @ truth.beta0
        assert math.sqrt(signal @ signal / (80 * truth.sigma**2)) == pytest.approx(snr)
        assert set(np.abs(truth.beta0[truth.s0_set])) == {1.0}
        assert np.count_nonzero(truth.beta0) == 5

    def test_global_null_uses_unit_noise(self):
        _, truth = generate_design(ScenarioSpec("equi_corr", n=20, p=10, s0=0))
        assert truth.sigma == 1.0 and truth.s0_set.size == 0

    def test_zero_signal_rejected(self):
        with pytest.raises(ValueError):
            calibrate_sigma(np.eye(3), np.zeros(3), 2.0)


class TestMetrics:
    def test_performance_examples(self):
        assert performance1([1, 2, 25], 3) == pytest.approx((1 + 0.5 + 0.04) / 3)
        assert performance2([1, 2, 25], 3) == pytest.approx((1 + 0.75) / 3)
        assert performance1([], 3) == 0.0 and performance2([5], 0) == 0.0

    def test_buckets(self):
        assert bucket_counts([1, 1, 2, 3, 10, 11, 20, 21, 400]) == (2, 1, 2, 2, 2)
        assert len(BUCKETS) == 5

    def test_tpr_fpr(self):
        assert tpr_fpr(3, 2, 10, 110) == (0.3, 0.02)
        assert tpr_fpr(0, 0, 0, 5) == (0.0, 0.0)

    def test_run_metrics(self, four_leaf_tree):
        truth = GroundTruth(np.array([1.0, 0, 0, 0]), np.array([0]), 1.0)
        res = fake_result(four_leaf_tree, [0.5, 0.5, 0.5, 0.5, 0.01, 0.01, 0.001])
        m = run_metrics(res, truth, run=0, screening_failures=2)
        assert m.n_mtd == 1 and m.mtd_buckets == (0, 1, 0, 0, 0)
        assert m.perf1 == 0.5 and m.perf2 == 0.75
        assert m.fwer and m.n_false == 1
        assert m.monotonicity_violations == 0

    def test_singletons_only(self, four_leaf_tree):
        truth = GroundTruth(np.array([1.0, 0, 0, 0]), np.array([0]), 1.0)
        res = fake_result(four_leaf_tree, [0.01, 0.5, 0.5, 0.5, 0.01, 0.5, 0.001])
        m = run_metrics(res, truth, run=0, screening_failures=0, singletons_only=True)
        assert m.n_mtd == 1 and m.perf1 == 1.0 and not m.fwer

    def test_monotonicity_violations(self, four_leaf_tree):
        assert monotonicity_violations(fake_result(four_leaf_tree, [0.1, 0.2, 0.2, 0.2, 0.3, 0.2, 0.1])) == 2


class TestSpec:
    @pytest.mark.parametrize("kwargs, field", [
        (dict(design="toeplitz", n=20, p=10), "design"),
        (dict(design="equi_corr", n=3, p=10), "n"),
        (dict(design="equi_corr", n=20, p=10, s0=11), "s0"),
        (dict(design="equi_corr", n=20, p=10, rho=1.0), "rho"),
        (dict(design="equi_corr", n=20, p=10, snr=0.0), "snr"),
        (dict(design="small_blocks", n=20, p=10, s0=6), "s0"),
        (dict(design="large_blocks", n=20, p=25, s0=2), "p"),
        (dict(design="large_blocks", n=20, p=200, s0=11), "s0"),
        (dict(design="semi_real_normal", n=20, p=10), "external_matrix"),
    ])
    def test_invalid(self, kwargs, field):
        with pytest.raises(ValueError, match=f"^{field}:"):
            ScenarioSpec(**kwargs)

    def test_default_correlations(self):
        assert ScenarioSpec("equi_corr", n=20, p=10).correlation == 0.3
        assert ScenarioSpec("small_blocks", n=20, p=30).correlation == 0.9
        assert ScenarioSpec("large_blocks", n=20, p=30, s0=3, rho=0.4).correlation == 0.4


class TestRunScenario:
    def spec(self, **kw):
        base = dict(design="small_blocks", n=40, p=20, s0=2, snr=8.0, n_runs=2, engine=small_engine(), seed=5)
        base.update(kw)
        return ScenarioSpec(**base)

    def test_smoke_and_determinism(self):
        a = run_scenario(self.spec())
        b = run_scenario(self.spec())
        assert a.n_runs == 2 and a.n_failed == 0
        assert a.baseline is not None and a.baseline.n_runs == 2
        assert a.monotonicity_violations == 0
        assert a.to_dict() == b.to_dict()
        json.dumps(a.to_dict(), allow_nan=True)

    def test_strong_signal_detected(self):
        rep = run_scenario(self.spec(snr=20.0, n=60))
        assert rep.mtd_total_mean >= 1
        assert 0 <= rep.screening_failure_rate <= 1

    def test_without_baseline(self):
        assert run_scenario(self.spec(baseline=False)).baseline is None

    def test_vary_beta_changes_truth(self, monkeypatch):
        seen = []
        original = simulation.run_metrics

        def spy(result, truth, *args, **kw):
            seen.append(tuple(truth.s0_set.tolist()))
            return original(result, truth, *args, **kw)

        monkeypatch.setattr(simulation, "run_metrics", spy)
        run_scenario(self.spec(vary_beta=True, n_runs=3, baseline=False, p=40, s0=5))
        assert len(set(seen)) > 1

    def test_failed_run_is_recorded(self, monkeypatch):
        def boom(*args, **kw):
            raise ValueError("synthetic failure")

        monkeypatch.setattr(simulation, "run_trees", boom)
        rep = run_scenario(self.spec())
        assert rep.n_failed == 2
        assert all("synthetic failure" in r.error for r in rep.per_run)
        assert math.isnan(rep.perf1_mean)
