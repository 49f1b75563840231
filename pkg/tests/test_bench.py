import numpy as np
import pytest
from scipy import stats

from gpts.bench import (
    ERROR_FLOOR,
    average_regret,
    chi_square_tail_bound,
    chosen_points,
    decay_rate_fit,
    delta_epsilon,
    error_metric,
    f1_objective,
    f2_objective,
    f_beta_objective,
    noisy_oracle,
    replica_seed,
    run_campaign,
)
from gpts.engine import TsConfig, run
from gpts.errors import InsufficientDataError


class TestObjectives:
    def test_f1_frozen_values(self):
        obj = f1_objective()
        assert obj.evaluate([5.0]) == pytest.approx(4.011582046074017, rel=1e-12)
        assert obj.evaluate([2.0]) == pytest.approx(2.0390298861265435, rel=1e-12)

    def test_f1_global_argmax(self):
        obj = f1_objective()
        # secondary bump pulls the maximizer slightly below 5
        assert abs(obj.true_argmax[0] - 5.0) < 0.05
        assert obj.evaluate(obj.true_argmax) >= obj.evaluate([5.0])
        # global max beats the secondary bump
        assert obj.evaluate(obj.true_argmax) > obj.evaluate([2.0])

    def test_f2_frozen_values(self):
        obj = f2_objective()
        assert obj.evaluate([5.0, 5.0]) == pytest.approx(
            1.5916476373206856, rel=1e-12
        )
        assert obj.evaluate([2.0, 2.0]) == pytest.approx(
            0.7959711282629407, rel=1e-12
        )

    def test_f2_global_argmax(self):
        obj = f2_objective()
        assert np.linalg.norm(obj.true_argmax - [5.0, 5.0]) < 0.01

    @pytest.mark.parametrize("beta", [0.25, 0.5, 1.0, 2.0])
    def test_f_beta_peak_and_scale(self, beta):
        obj = f_beta_objective(beta)
        assert obj.evaluate([5.0]) == pytest.approx(beta, rel=1e-12)
        # value at distance sqrt(16) from the peak: beta * exp(-2)
        assert obj.evaluate([1.0]) == pytest.approx(
            beta * 0.1353352832366127, rel=1e-12
        )
        np.testing.assert_array_equal(obj.true_argmax, [5.0])

    def test_f_beta_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            f_beta_objective(0.0)

    def test_argmax_must_be_in_domain(self):
        from gpts.bench import Objective
        from gpts.kernel import Domain

        with pytest.raises(ValueError):
            Objective(
                "bad",
                1,
                lambda x: 0.0,
                Domain(np.zeros(1), np.ones(1)),
                np.array([2.0]),
            )


class TestNoisyOracle:
    def test_zero_noise_is_exact(self):
        obj = f1_objective(0.0)
        g = noisy_oracle(obj, np.random.default_rng(0))
        assert g([3.0]) == obj.evaluate([3.0])

    def test_noise_statistics(self):
        obj = f1_objective(0.5)
        g = noisy_oracle(obj, np.random.default_rng(1))
        draws = np.array([g([3.0]) for _ in range(4000)])
        resid = draws - obj.evaluate([3.0])
        assert abs(resid.mean()) < 0.03
        assert resid.std() == pytest.approx(0.5, rel=0.05)


class TestErrorMetric:
    def test_order_of_magnitude(self):
        # |x - x*|/|x*| = 0.1  ->  2 log10(0.1) = -2
        assert error_metric([4.5], [5.0]) == pytest.approx(-2.0, rel=1e-12)

    def test_exact_hit_floors(self):
        assert error_metric([5.0], [5.0]) == ERROR_FLOOR

    def test_floor_applies_to_tiny_errors(self):
        assert error_metric([5.0 + 1e-9], [5.0]) == ERROR_FLOOR

    def test_unit_relative_error(self):
        assert error_metric([0.0], [5.0]) == pytest.approx(0.0, abs=1e-12)

    def test_vector_case(self):
        # ||x - x*|| = 1, ||x*|| = 5 sqrt(2)
        x_star = [5.0, 5.0]
        got = error_metric([5.0, 6.0], x_star)
        assert got == pytest.approx(2 * np.log10(1 / (5 * np.sqrt(2))), rel=1e-12)

    def test_zero_argmax_rejected(self):
        with pytest.raises(ValueError):
            error_metric([1.0], [0.0])


class TestRegret:
    def test_prefix_average_oracle(self):
        obj = f1_objective()
        cfg = TsConfig(batch_size=4, max_stages=3, seed=21)
        trace = run(cfg, obj.evaluate, obj.domain)
        reg = average_regret(trace, obj)
        pts = chosen_points(trace)
        assert reg.size == pts.shape[0]
        f_star = obj.evaluate(obj.true_argmax)
        for T in (1, 5, pts.shape[0]):
            ref = np.mean([f_star - obj.evaluate(p) for p in pts[:T]])
            assert reg[T - 1] == pytest.approx(ref, abs=1e-12)

    def test_nonnegative(self):
        obj = f1_objective()
        cfg = TsConfig(batch_size=4, max_stages=2, seed=22)
        trace = run(cfg, obj.evaluate, obj.domain)
        assert np.all(average_regret(trace, obj) >= -1e-12)


class TestDeltaEpsilon:
    def test_frozen_unimodal_value(self):
        # beta = 1: gap is 1 - exp(-1/8) at distance exactly 1 from the peak
        obj = f_beta_objective(1.0)
        got = delta_epsilon(obj, 1.0, grid_size=20_000)
        assert got == pytest.approx(0.11750309741540466, abs=1e-6)

    def test_monotone_in_epsilon(self):
        obj = f_beta_objective(1.0)
        gaps = [delta_epsilon(obj, e, grid_size=5_000) for e in (0.5, 1.0, 2.0)]
        assert gaps[0] < gaps[1] < gaps[2]

    def test_f1_matches_dense_grid(self):
        obj = f1_objective()
        eps = 0.5
        got = delta_epsilon(obj, eps, grid_size=20_000)
        xs = np.linspace(0, 10, 200_001)
        mask = np.abs(xs - obj.true_argmax[0]) > eps
        vals = np.array([obj.evaluate([x]) for x in xs[mask]])
        ref = obj.evaluate(obj.true_argmax) - vals.max()
        assert got == pytest.approx(ref, abs=1e-4)

    def test_rejects_bad_epsilon(self):
        with pytest.raises(ValueError):
            delta_epsilon(f_beta_objective(1.0), 0.0)


class TestChiSquareTailBound:
    def test_trivial_at_delta_zero(self):
        # exponent vanishes at delta = 0 for every m
        for m in (1, 5, 20):
            assert chi_square_tail_bound(m, 0.0) == pytest.approx(1.0, rel=1e-12)

    def test_frozen_value(self):
        # m = 1, delta = 3: exp(-(3 + 1 - sqrt(7)) / 2)
        assert chi_square_tail_bound(1, 3.0) == pytest.approx(
            np.exp(-0.5 * (4.0 - np.sqrt(7.0))), rel=1e-12
        )

    def test_decreasing_in_delta(self):
        vals = [chi_square_tail_bound(5, d) for d in (0.0, 1.0, 10.0, 100.0)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_dominates_exact_tail(self):
        for m in (1, 3, 10):
            for delta in (0.5, 2.0, 10.0, 50.0):
                exact = stats.chi2.sf(m + delta, df=m)
                assert chi_square_tail_bound(m, delta) >= exact

    def test_dominates_monte_carlo(self):
        rng = np.random.default_rng(7)
        m, delta = 4, 6.0
        draws = rng.chisquare(m, size=200_000)
        emp = np.mean(draws > m + delta)
        assert chi_square_tail_bound(m, delta) >= emp

    def test_validation(self):
        with pytest.raises(ValueError):
            chi_square_tail_bound(0, 1.0)
        with pytest.raises(ValueError):
            chi_square_tail_bound(3, -0.1)


class TestDecayRateFit:
    def test_recovers_linear_slope(self):
        rng = np.random.default_rng(8)
        t = np.arange(1, 101)
        e = -0.05 * t - 1.0 + 0.05 * rng.standard_normal(100)
        slope, intercept, r2 = decay_rate_fit(e)
        assert slope == pytest.approx(-0.05, abs=0.005)
        assert r2 > 0.9

    def test_constant_series(self):
        slope, intercept, r2 = decay_rate_fit(np.full(50, -3.0))
        assert slope == pytest.approx(0.0, abs=1e-12)
        assert r2 == 0.0

    def test_increasing_series_positive_slope(self):
        slope, _, _ = decay_rate_fit(np.linspace(-5, -1, 40))
        assert slope > 0

    def test_burn_in_drops_prefix(self):
        # first 20% is junk; fit should ignore it
        e = np.concatenate([np.full(20, 10.0), -0.1 * np.arange(80)])
        slope, _, r2 = decay_rate_fit(e)
        assert slope == pytest.approx(-0.1, abs=1e-9)

    def test_insufficient_data(self):
        with pytest.raises(InsufficientDataError):
            decay_rate_fit(np.ones(5))
        with pytest.raises(InsufficientDataError):
            decay_rate_fit(np.full(30, np.nan))


class TestCampaign:
    def test_replica_seed_schedule_independent(self):
        a = [replica_seed(42, i) for i in range(5)]
        b = [replica_seed(42, i) for i in reversed(range(5))]
        assert a == list(reversed(b))
        assert len(set(a)) == 5

    @pytest.mark.slow
    def test_campaign_shapes_and_determinism(self):
        obj = f_beta_objective(1.0, noise_sigma=0.1)
        cfg = TsConfig(batch_size=10, max_stages=8, seed=0)
        r1 = run_campaign(cfg, obj, replicas=3, base_seed=5)
        r2 = run_campaign(cfg, obj, replicas=3, base_seed=5)
        assert r1.error_series.shape[0] == 3
        np.testing.assert_array_equal(r1.error_series, r2.error_series)
        # quantiles are ordered
        assert np.all(r1.q25 <= r1.q50 + 1e-12)
        assert np.all(r1.q50 <= r1.q75 + 1e-12)
        # carried-forward rows are rectangular and finite
        assert np.all(np.isfinite(r1.error_series))

    def test_stages_to_threshold(self):
        obj = f_beta_objective(1.0, noise_sigma=0.1)
        cfg = TsConfig(batch_size=5, max_stages=3, seed=0)
        res = run_campaign(cfg, obj, replicas=2, base_seed=1)
        hits = res.stages_to_threshold(threshold=100.0)
        np.testing.assert_array_equal(hits, [1.0, 1.0])
        misses = res.stages_to_threshold(threshold=-1e9)
        assert np.all(np.isinf(misses))

    def test_rejects_zero_replicas(self):
        with pytest.raises(ValueError):
            run_campaign(TsConfig(), f1_objective(), replicas=0, base_seed=0)
