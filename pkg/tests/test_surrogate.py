import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import ridge_cg, ridge_gd
from prodlen.lengthdist import SurrogateNoiseModel
from prodlen.surrogate import (
    TRIAL_COLUMNS,
    BoundParams,
    SurrogateConfig,
    beta_n,
    c_const,
    failure_budget,
    repeats_threshold,
    rho_delta,
    ridge_fit,
    run_trials,
    surrogate_trial,
    uncertainty,
    violation_summary,
    write_trials_csv,
)


class TestRidge:
    def test_ols_limit(self):
        est = ridge_fit([[1.0], [1.0]], [1, 3], 1e-12)
        assert est.theta_hat[0] == pytest.approx(2.0, abs=1e-9)

    def test_closed_form_arithmetic(self):
        est = ridge_fit([[1.0], [1.0]], [1, 3], 1.0)
        assert est.V[0, 0] == pytest.approx(3.0)
        assert est.theta_hat[0] == pytest.approx(4 / 3)

    def test_matches_gradient_descent(self, rng):
        X = rng.normal(size=(50, 5)) / math.sqrt(5)
        y = rng.normal(size=50)
        est = ridge_fit(X, y, 1.0)
        np.testing.assert_allclose(est.theta_hat, ridge_gd(X, y, 1.0), rtol=1e-6, atol=1e-9)

    @given(st.integers(1, 16), st.integers(1, 80), st.floats(1e-3, 10), st.integers(0, 2**32))
    def test_matches_cg_and_invariants(self, d, n, lam, seed):
        r = np.random.default_rng(seed)
        X = r.normal(size=(n, d))
        y = r.normal(size=n) * 10
        est = ridge_fit(X, y, lam)
        ref = ridge_cg(X, y, lam)
        assert np.linalg.norm(est.theta_hat - ref) <= 1e-6 * (1 + np.linalg.norm(ref))
        assert est.residual() <= 1e-10 * (1 + np.linalg.norm(est.b))
        assert np.linalg.eigvalsh(est.V - lam * np.eye(d)).min() >= -1e-9 * (1 + np.abs(est.V).max())

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            ridge_fit(np.ones((3, 2)), [1, 2], 1.0)
        with pytest.raises(ValueError):
            ridge_fit(np.ones((3, 2)), [1, 2, 3], 0.0)

    def test_shrinkage_monotone(self, rng):
        X = rng.normal(size=(30, 4))
        y = rng.normal(size=30)
        norms = [np.linalg.norm(ridge_fit(X, y, lam).theta_hat) for lam in np.geomspace(1e-4, 1e4, 25)]
        assert all(b <= a * (1 + 1e-12) for a, b in zip(norms, norms[1:]))

    @given(st.floats(0.01, 100), st.integers(0, 2**32))
    def test_scale_equivariance(self, c, seed):
        r = np.random.default_rng(seed)
        X, y = r.normal(size=(20, 3)), r.normal(size=20)
        np.testing.assert_allclose(ridge_fit(X, c * y, 0.5).theta_hat, c * ridge_fit(X, y, 0.5).theta_hat,
                                   rtol=1e-10, atol=1e-12)

    def test_stable_at_d_512(self, rng):
        X = rng.normal(size=(600, 512)) / math.sqrt(512)
        y = rng.normal(size=600)
        est = ridge_fit(X, y, 1.0)
        assert est.residual() <= 1e-10 * (1 + np.linalg.norm(est.b))


class TestUncertainty:
    def test_zero(self):
        assert uncertainty(ridge_fit(np.eye(3), [1, 2, 3], 1.0), np.zeros(3)) == 0.0

    def test_scalar_example(self):
        est = ridge_fit([[math.sqrt(3.0)]], [0.0], 1.0)  # V = 4
        assert uncertainty(est, [2.0]) == pytest.approx(1.0)

    def test_batch_matches_single(self, rng):
        est = ridge_fit(rng.normal(size=(10, 3)), rng.normal(size=10), 1.0)
        P = rng.normal(size=(6, 3))
        np.testing.assert_allclose(uncertainty(est, P), [uncertainty(est, p) for p in P], rtol=1e-12)

    @given(st.integers(0, 2**32))
    def test_adding_data_never_increases(self, seed):
        r = np.random.default_rng(seed)
        X = r.normal(size=(8, 3))
        phi, extra = r.normal(size=3), r.normal(size=3)
        a = uncertainty(ridge_fit(X, np.zeros(8), 1.0), phi)
        b = uncertainty(ridge_fit(np.vstack([X, extra]), np.zeros(9), 1.0), phi)
        assert b <= a + 1e-12


class TestBeta:
    def test_c_const(self):
        assert c_const(1.0, 0.25) == pytest.approx(1.0)

    def test_worked_example(self):
        p = BoundParams(epsilon=1.0, v=0.25, delta=0.8, S=1.0, d=1, N=1, r=1)
        rho = rho_delta(p)
        assert rho == pytest.approx(2 * math.log(10) + 1, rel=1e-15)
        assert rho == pytest.approx(5.6052, abs=1e-4)
        assert beta_n(p, 1.0) == pytest.approx(math.sqrt(rho**2 + 2 * rho * math.log(2)) + 1, rel=1e-14)

    @given(st.integers(1, 10**6))
    def test_growth_factor_one_at_eps_one(self, N):
        p = BoundParams(epsilon=1.0, v=0.25, delta=0.2, S=1.0, d=2, N=N, r=1)
        rho = rho_delta(p)
        want = math.sqrt(rho**2 + 2 * rho * 2 * math.log(1 + N / 2)) + 1
        assert beta_n(p, 1.0) == pytest.approx(want, rel=1e-12)

    @pytest.mark.parametrize("delta", [0.0, 1.0, -0.1, 1.5])
    def test_delta_range(self, delta):
        with pytest.raises(ValueError):
            BoundParams(epsilon=1.0, v=1.0, delta=delta, S=1.0, d=1, N=1, r=1)

    def test_threshold_and_budget(self):
        assert repeats_threshold(50, 0.2) == pytest.approx(8 * math.log(1000))
        assert repeats_threshold(50, 0.2) == pytest.approx(55.26, abs=0.01)
        assert failure_budget(50, 4, 0.2) > 1
        assert failure_budget(50, 64, 0.2) <= 0.4


class TestTrials:
    def test_noiseless_recovery(self):
        noise = SurrogateNoiseModel.uniform(scale=1e-6, epsilon=1.0, verify_draws=0)
        cfg = SurrogateConfig(d=3, N=40, r=3, lam=1e-8, noise=noise)
        rec = surrogate_trial(cfg, 5)
        assert rec.errors.max() <= 1e-4

    def test_deterministic(self):
        cfg = SurrogateConfig(N=20, r=4)
        a, b = surrogate_trial(cfg, 9), surrogate_trial(cfg, 9)
        np.testing.assert_array_equal(a.errors, b.errors)
        np.testing.assert_array_equal(a.bounds, b.bounds)

    def test_more_repeats_help(self):
        noise = SurrogateNoiseModel.two_sided_pareto(alpha=1.5, epsilon=0.4)
        wins = 0
        for s in range(100):
            e1 = surrogate_trial(SurrogateConfig(N=50, r=1, noise=noise), s).errors.mean()
            e16 = surrogate_trial(SurrogateConfig(N=50, r=16, noise=noise), s).errors.mean()
            wins += e16 < e1
        assert wins >= 90

    def test_summary_and_csv(self, tmp_path):
        recs = run_trials(SurrogateConfig(N=10, r=8, n_probes=4), 3, seed=1)
        s = violation_summary(recs, 0.4)
        assert s["trials"] == 3 and 0 <= s["rate"] <= 1
        path = tmp_path / "t.csv"
        write_trials_csv(recs, path)
        lines = path.read_text().splitlines()
        assert lines[0].split(",") == TRIAL_COLUMNS
        assert len(lines) == 1 + 3 * 4
