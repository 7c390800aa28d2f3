import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from harrisvol.errors import DomainError, ValidationError
from harrisvol.gig import GigParams, gig_cdf, gig_moments
from harrisvol.harris import (
    CallableRate,
    DegenerateRate,
    DiscreteRate,
    DiscreteUniformMarginal,
    ExponentialHolding,
    GammaRate,
    GigMarginal,
    MixtureSpec,
    ParetoHolding,
    SemiMarkovSpec,
    SfHarrisParams,
    Trajectory,
    autocorrelation,
    integrate,
    integrate_grid,
    sample_at_times,
    semigroup_apply,
    simulate,
    simulate_mixture,
    simulate_semi_markov,
    transition_weights,
    trajectory_from_csv,
    trajectory_from_json,
    trajectory_to_csv,
    trajectory_to_json,
    tv_distance_discrete,
    uniform5,
)

GIG_Q = GigMarginal(GigParams(-2.0, 4.0, 1.0))


def lag_corr(trajs, h):
    x0 = np.array([t.start for t in trajs])
    xh = np.array([sample_at_times(t, h) for t in trajs])
    return float(np.corrcoef(x0, xh)[0, 1])


class TestTransitionWeights:
    def test_at_zero(self):
        assert transition_weights(3.0, 0.0) == (0.0, 1.0)

    def test_long_run(self):
        w_new, w_stay = transition_weights(2.0, 500.0)
        assert w_new == pytest.approx(1.0, abs=1e-12)
        assert w_stay == pytest.approx(0.0, abs=1e-12)

    def test_direct_arithmetic(self):
        w_new, w_stay = transition_weights(2.0, 0.5)
        assert w_stay == pytest.approx(math.exp(-1.0), rel=1e-15)
        assert w_new == pytest.approx(1.0 - math.exp(-1.0), rel=1e-15)

    def test_negative_time_rejected(self):
        with pytest.raises(DomainError):
            transition_weights(1.0, -0.1)


class TestSemigroup:
    def test_identity_function_gig(self):
        p = SfHarrisParams(1.7, GigMarginal(GigParams(0.0, 3.0, 4.0)))
        qmean = gig_moments(GigParams(0.0, 3.0, 4.0))[0]
        t, x = 0.8, 2.2
        got = semigroup_apply(p, lambda y: y, t, x)
        w_new, w_stay = transition_weights(1.7, t)
        assert got == pytest.approx(w_new * qmean + w_stay * x, rel=1e-7)

    def test_time_zero_is_pointwise(self):
        p = SfHarrisParams(2.0, uniform5())
        assert semigroup_apply(p, lambda y: y ** 2, 0.0, 3.0) == pytest.approx(9.0)

    def test_conservative(self):
        p = SfHarrisParams(2.0, uniform5())
        for t in (0.0, 0.3, 5.0):
            assert semigroup_apply(p, lambda y: 1.0, t, 4.0) == pytest.approx(1.0)


class TestTrajectoryType:
    def test_invariants_enforced(self):
        with pytest.raises(ValidationError):
            Trajectory(start=1.0, jump_times=[0.5, 0.4], states=[1.0, 2.0], horizon=1.0)
        with pytest.raises(ValidationError):
            Trajectory(start=1.0, jump_times=[0.5], states=[1.0, 2.0], horizon=1.0)
        with pytest.raises(ValidationError):
            Trajectory(start=1.0, jump_times=[1.5], states=[1.0], horizon=1.0)

    def test_holding_times_positive(self, rng):
        traj = simulate(SfHarrisParams(4.0, GIG_Q), 5.0, rng)
        assert np.all(traj.holding_times() > 0.0)

    def test_csv_roundtrip(self, rng, tmp_path):
        traj = simulate(SfHarrisParams(2.0, GIG_Q), 3.0, rng)
        path = tmp_path / "skel.csv"
        trajectory_to_csv(traj, path)
        back = trajectory_from_csv(path)
        assert back.start == traj.start and back.horizon == traj.horizon
        assert np.array_equal(back.jump_times, traj.jump_times)
        assert np.array_equal(back.states, traj.states)

    def test_json_roundtrip(self, rng, tmp_path):
        traj = simulate(SfHarrisParams(2.0, GIG_Q), 3.0, rng)
        path = tmp_path / "skel.json"
        trajectory_to_json(traj, path)
        back = trajectory_from_json(path)
        assert np.array_equal(back.states, traj.states)


class TestSimulate:
    def test_constant_path_flag(self, rng):
        par = SfHarrisParams(alpha=1.0, marginal=GIG_Q, constant=True)
        traj = simulate(par, 10.0, rng)
        assert traj.n_jumps == 0
        assert sample_at_times(traj, 7.3) == traj.start

    def test_mean_holding_time(self, rng):
        # the classic discrete-uniform scenario at rate 2; completed holdings
        # inside a window are length-biased, so check the first one per path
        par = SfHarrisParams(2.0, uniform5())
        first = []
        for _ in range(10_000):
            traj = simulate(par, 28.0, rng)
            if traj.n_jumps:
                first.append(traj.holding_times()[0])
        first = np.asarray(first)
        se = first.std() / math.sqrt(first.size)
        assert abs(first.mean() - 0.5) < 3.0 * se
        assert stats.kstest(first, "expon", args=(0.0, 0.5)).pvalue > 0.01

    def test_uniformization_equivalence(self, rng):
        par = SfHarrisParams(3.0, GIG_Q)
        a = np.array([sample_at_times(simulate(par, 1.0, rng, 0.0), 1.0)
                      for _ in range(10_000)])
        b = np.array([sample_at_times(simulate(par, 1.0, rng, 0.5), 1.0)
                      for _ in range(10_000)])
        assert stats.ks_2samp(a, b).pvalue > 0.05

    def test_invalid_epsilon(self, rng):
        with pytest.raises(ValidationError):
            simulate(SfHarrisParams(1.0, GIG_Q), 1.0, rng, uniformization_epsilon=1.0)


class TestSampleAtTimes:
    def test_before_first_jump(self):
        traj = Trajectory(start=5.0, jump_times=[1.0], states=[7.0], horizon=2.0)
        assert sample_at_times(traj, 0.5) == 5.0

    def test_right_continuity_at_jump(self):
        traj = Trajectory(start=5.0, jump_times=[1.0], states=[7.0], horizon=2.0)
        assert sample_at_times(traj, 1.0) == 7.0

    def test_plateau_count_matches_jumps(self, rng):
        traj = simulate(SfHarrisParams(0.8, GIG_Q), 10.0, rng)
        grid = np.linspace(0.0, 10.0, 1000)
        vals = sample_at_times(traj, grid)
        changes = int(np.sum(vals[1:] != vals[:-1]))
        assert changes == traj.n_jumps

    def test_out_of_range(self):
        traj = Trajectory(start=1.0, jump_times=[], states=[], horizon=1.0)
        with pytest.raises(DomainError):
            sample_at_times(traj, 1.5)


class TestIntegrate:
    def test_constant_path(self):
        traj = Trajectory(start=2.5, jump_times=[], states=[], horizon=4.0)
        assert integrate(traj, 3.0) == pytest.approx(7.5, rel=1e-15)

    def test_zero_time(self, rng):
        traj = simulate(SfHarrisParams(2.0, GIG_Q), 2.0, rng)
        assert integrate(traj, 0.0) == 0.0

    def test_riemann_oracle(self, rng):
        for _ in range(10):
            traj = simulate(SfHarrisParams(1.0, GIG_Q), 1.0, rng)
            grid = np.linspace(0.0, 1.0, 1_000_001)
            riemann = float(np.sum(sample_at_times(traj, grid[:-1]) * np.diff(grid)))
            tol = 1e-6 * 1.0 * max(abs(traj.start), np.abs(traj.states).max(initial=0.0))
            assert abs(integrate(traj, 1.0) - riemann) <= tol + 1e-12

    def test_additive_over_adjacent_intervals(self, rng):
        traj = simulate(SfHarrisParams(3.0, GIG_Q), 2.0, rng)
        s, t = 0.7, 1.9
        grid_vals = integrate_grid(traj, np.array([s, t]))
        direct_s, direct_t = integrate(traj, s), integrate(traj, t)
        assert grid_vals[0] == pytest.approx(direct_s, abs=1e-12)
        assert direct_s + (grid_vals[1] - grid_vals[0]) == pytest.approx(direct_t, abs=1e-12)

    def test_nondecreasing_for_positive_states(self, rng):
        traj = simulate(SfHarrisParams(3.0, GIG_Q), 2.0, rng)
        grid = np.linspace(0.0, 2.0, 400)
        vals = integrate_grid(traj, grid)
        assert np.all(np.diff(vals) >= 0.0)

    def test_out_of_range(self, rng):
        traj = simulate(SfHarrisParams(1.0, GIG_Q), 1.0, rng)
        with pytest.raises(DomainError):
            integrate(traj, 1.5)


class TestStationarity:
    def test_gig_marginal_ks(self, rng):
        par = SfHarrisParams(3.0, GIG_Q)
        trajs = [simulate(par, 10.0, rng) for _ in range(10_000)]
        p = GigParams(-2.0, 4.0, 1.0)
        for t_star in (0.1, 1.0, 10.0):
            vals = np.array([sample_at_times(t, t_star) for t in trajs])
            d = stats.kstest(vals, lambda x: gig_cdf(p, x)).statistic
            assert d < 1.628 / math.sqrt(vals.size)

    def test_uniform5_chi_square(self, rng):
        par = SfHarrisParams(3.0, uniform5())
        trajs = [simulate(par, 10.0, rng) for _ in range(10_000)]
        for t_star in (0.1, 1.0, 10.0):
            vals = np.array([sample_at_times(t, t_star) for t in trajs])
            counts = np.array([(vals == v).sum() for v in (1.0, 2.0, 3.0, 4.0, 5.0)])
            assert stats.chisquare(counts).pvalue > 0.01


class TestErgodicity:
    def test_tv_decay_rate_exact(self):
        probs = [0.2] * 5
        base = tv_distance_discrete(2.0, 0.0, probs, 0)
        for t in (0.3, 1.0, 2.5):
            ratio = tv_distance_discrete(2.0, t, probs, 0) / base
            assert ratio == pytest.approx(math.exp(-2.0 * t), rel=1e-12)

    def test_time_average_lln(self, rng):
        alpha = 2.0
        par = SfHarrisParams(alpha, GIG_Q)
        qmean = gig_moments(GigParams(-2.0, 4.0, 1.0))[0]
        horizon = 500.0 / alpha
        rel_errors = []
        for _ in range(100):
            traj = simulate(par, horizon, rng)
            rel_errors.append(abs(integrate(traj, horizon) / horizon - qmean) / qmean)
        assert np.mean(rel_errors) <= 0.05


class TestAutocorrelation:
    def test_sf_lag_zero(self):
        assert autocorrelation(SfHarrisParams(2.0, GIG_Q), 0.0) == 1.0

    def test_constant_path(self):
        assert autocorrelation(SfHarrisParams(2.0, GIG_Q, constant=True), 3.0) == 1.0

    def test_degenerate_mixture_reduces_to_markov(self):
        spec = MixtureSpec(DegenerateRate(2.0), GIG_Q)
        for h in (0.1, 1.0, 3.0):
            assert autocorrelation(spec, h) == pytest.approx(math.exp(-2.0 * h), rel=1e-12)

    def test_gamma_mixture_closed_form(self):
        spec = MixtureSpec(GammaRate(0.75), GIG_Q)
        assert autocorrelation(spec, 1.0) == pytest.approx(2.0 ** -0.5, rel=1e-12)

    def test_empirical_markov_correlation(self, rng):
        for alpha in (0.5, 3.0):
            par = SfHarrisParams(alpha, GIG_Q)
            trajs = [simulate(par, 1.0, rng) for _ in range(20_000)]
            for h in (0.1, 0.5, 1.0):
                got = lag_corr(trajs, h)
                se = 1.0 / math.sqrt(len(trajs))
                assert abs(got - math.exp(-alpha * h)) < 3.5 * se

    def test_unsupported_transform(self):
        spec = MixtureSpec(CallableRate(lambda n, rng: np.ones(n)), GIG_Q)
        with pytest.raises(DomainError):
            autocorrelation(spec, 1.0)


class TestSemiMarkov:
    def test_exponential_recovers_markov(self, rng):
        spec = SemiMarkovSpec(ExponentialHolding(3.0), GIG_Q)
        a = np.array([sample_at_times(simulate_semi_markov(spec, 1.0, rng), 1.0)
                      for _ in range(10_000)])
        par = SfHarrisParams(3.0, GIG_Q)
        b = np.array([sample_at_times(simulate(par, 1.0, rng), 1.0)
                      for _ in range(10_000)])
        assert stats.ks_2samp(a, b).pvalue > 0.05

    def test_pareto_correlation_matches_survival(self, rng):
        spec = SemiMarkovSpec(ParetoHolding(1.5), GIG_Q)
        trajs = [simulate_semi_markov(spec, 2.5, rng) for _ in range(30_000)]
        for h in (0.5, 1.0, 2.0):
            got = lag_corr(trajs, h)
            want = autocorrelation(spec, h)
            se = 1.0 / math.sqrt(len(trajs))
            assert abs(got - want) < 3.5 * se + 1e-12

    def test_single_plateau_when_first_holding_exceeds_horizon(self, rng):
        spec = SemiMarkovSpec(ParetoHolding(1.5, scale=5.0), GIG_Q)
        traj = simulate_semi_markov(spec, 2.0, rng)
        assert traj.n_jumps == 0


class TestMixture:
    def test_degenerate_matches_markov_distribution(self, rng):
        spec = MixtureSpec(DegenerateRate(3.0), GIG_Q)
        a = np.array([sample_at_times(simulate_mixture(spec, 1.0, rng), 1.0)
                      for _ in range(10_000)])
        par = SfHarrisParams(3.0, GIG_Q)
        b = np.array([sample_at_times(simulate(par, 1.0, rng), 1.0)
                      for _ in range(10_000)])
        assert stats.ks_2samp(a, b).pvalue > 0.05

    def test_discrete_mixture_correlation(self, rng):
        spec = MixtureSpec(DiscreteRate(values=(0.5, 4.0), weights=(0.3, 0.7)), GIG_Q)
        trajs = [simulate_mixture(spec, 1.5, rng) for _ in range(30_000)]
        for h in (0.25, 1.0):
            want = 0.3 * math.exp(-0.5 * h) + 0.7 * math.exp(-4.0 * h)
            se = 1.0 / math.sqrt(len(trajs))
            assert abs(lag_corr(trajs, h) - want) < 3.5 * se

    def test_gamma_mixture_correlation(self, rng):
        spec = MixtureSpec(GammaRate(0.75), GIG_Q)
        trajs = [simulate_mixture(spec, 1.5, rng) for _ in range(30_000)]
        for h in (0.5, 1.0):
            want = (1.0 + h) ** (-0.5)
            se = 1.0 / math.sqrt(len(trajs))
            assert abs(lag_corr(trajs, h) - want) < 3.5 * se

    def test_hurst_validation(self):
        with pytest.raises(ValidationError):
            GammaRate(0.4)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.2, 10.0), st.floats(0.01, 3.0), st.floats(0.01, 3.0))
def test_autocorrelation_monotone_in_lag(alpha, h1, h2):
    par = SfHarrisParams(alpha, uniform5())
    lo, hi = sorted((h1, h2))
    assert autocorrelation(par, hi) <= autocorrelation(par, lo) + 1e-15
