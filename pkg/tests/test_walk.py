import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bpre_lab.environment import lognormal_geometric, point_environment
from bpre_lab.offspring import OffspringLaw
from bpre_lab.oracle import enumerate_walk
from bpre_lab.stats import weighted_ks
from bpre_lab.streams import AttemptsExhaustedError
from bpre_lab.walk import (
    OutOfGridError,
    RenewalTable,
    check_harmonicity,
    default_grid,
    estimate_renewal,
    meander_scaling_snapshot,
    minimum_position_law,
    path_stats,
    sample_conditioned_path,
    sample_conditioned_paths,
    two_walk_overshoot_probability,
    walk_event_summary,
)


class TestPathStats:
    def test_examples(self):
        p = path_stats(0.0, [-1.0, 2.0])
        np.testing.assert_allclose(p.sums, [0.0, -1.0, 1.0])
        assert (p.min_index, p.running_min, p.running_max) == (1, -1.0, 1.0)
        assert path_stats(0.0, [1.0, 1.0]).min_index == 0
        q = path_stats(0.0, [-1.0, -1.0])
        assert q.min_index == 2 and q.running_max == -1.0

    def test_first_minimum_on_ties(self):
        assert path_stats(0.0, [-1.0, 1.0, -1.0]).min_index == 1

    def test_empty(self):
        with pytest.raises(ValueError):
            path_stats(0.0, [])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=30), st.floats(-3, 3))
    def test_invariants(self, inc, start):
        p = path_stats(start, inc)
        np.testing.assert_allclose(p.sums, start + np.concatenate([[0.0], np.cumsum(inc)]), atol=1e-12)
        assert np.all(p.sums[p.min_index] <= p.sums)
        assert np.all(p.sums[: p.min_index] > p.sums[p.min_index])
        assert p.running_min == p.sums[1:].min() and p.running_max == p.sums[1:].max()

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(-3, 3), min_size=1, max_size=20))
    def test_reversal_duality(self, inc):
        # {tau_n = n} for the path equals {M_n < 0} for the reversed increments
        p = path_stats(0.0, [float(v) for v in inc])
        r = p.reversed()
        assert (p.min_index == p.n) == (r.running_max < 0)


class TestConditionedSamplers:
    def test_one_step_acceptance(self, spec):
        s = sample_conditioned_paths(spec, "stay_neg", 1, 20_000, 3)
        assert np.all(s.sums[:, 0] < 0)
        se = math.sqrt(0.25 / s.attempts)
        assert abs(s.acceptance_rate - 0.5) < 4 * se

    def test_min_at_end_by_reversal(self, spec):
        s = sample_conditioned_paths(spec, "min_at_end", 50, 100_000, 4)
        sums = np.concatenate([np.zeros((s.size, 1)), s.sums], axis=1)
        assert np.all(np.argmin(sums, axis=1) == 50)
        rev = s.endpoint[:, None] - sums[:, ::-1][:, 1:]  # S_n - S_{n-j}
        assert np.all(rev.max(axis=1) < 0)

    def test_conditions_hold(self, spec):
        a = sample_conditioned_paths(spec, "stay_nonneg", 30, 2000, 5)
        b = sample_conditioned_paths(spec, "stay_below", 30, 2000, 6, level=0.5)
        assert np.all(a.sums >= 0) and np.all(b.sums < 0.5)

    def test_acceptance_ratio(self, spec):
        a = sample_conditioned_paths(spec, "stay_neg", 100, 40_000, 7, steps=())
        b = sample_conditioned_paths(spec, "stay_neg", 400, 20_000, 8, steps=())
        assert a.acceptance_rate / b.acceptance_rate == pytest.approx(2.0, rel=0.15)

    def test_attempts_exhausted(self, spec):
        with pytest.raises(AttemptsExhaustedError) as info:
            sample_conditioned_paths(spec, "stay_neg", 400, 10_000, 9, max_attempts=1000, chunk=500)
        assert 0 < info.value.acceptance_rate < 0.2

    def test_single_path(self, spec):
        p = sample_conditioned_path(spec, "min_at_end", 20, 10)
        assert p.min_index == 20


@pytest.fixture(scope="module")
def tables():
    spec = lognormal_geometric(1.0)
    return spec, estimate_renewal(spec, "u", N=100_000, rng=11), estimate_renewal(spec, "v", N=100_000, rng=12)


class TestRenewal:
    def test_u_anchor_and_support(self, tables):
        _, u, v = tables
        assert u(0.0) == 1.0
        assert u(-0.3) == 0.0
        assert v(0.4) == 0.0 and v(3.0) == 0.0

    def test_monotone(self, tables):
        _, u, v = tables
        assert np.all(np.diff(u.values) >= -u.standard_errors[1:])
        assert np.all(np.diff(v.values) <= v.standard_errors[1:])

    def test_v_at_zero_reported(self, tables):
        _, _, v = tables
        assert v.v_at_zero is not None and v.v_at_zero_se > 0
        assert v(0.0) == v.v_at_zero

    @pytest.mark.parametrize("which,x", [("u", 0.0), ("u", 1.0), ("v", -0.5)])
    def test_harmonicity(self, tables, which, x):
        spec, u, v = tables
        h = check_harmonicity(u if which == "u" else v, spec, x, 400_000, 13)
        assert h.within(3.0), h

    def test_wrong_side(self, tables):
        spec, u, _ = tables
        with pytest.raises(ValueError):
            check_harmonicity(u, spec, -1.0, 1000)

    def test_out_of_grid(self, tables):
        spec, u, _ = tables
        with pytest.raises(OutOfGridError):
            check_harmonicity(u, spec, 7.9, 10_000)

    def test_series_method_agrees(self, tables):
        # the truncated series estimator sits below the ladder estimate by its tail, O(K^{-1/2})
        spec, u, _ = tables
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            s = estimate_renewal(spec, "u", grid=u.grid, K=400, N=20_000, rng=14, method="series")
        assert s(0.0) == 1.0
        diff = u(1.0) - s(1.0)
        assert 0.0 < diff < 0.15

    def test_degenerate_increments_closed_form(self):
        # X = -1 always: E[u(x+X); x+X >= 0] is one table lookup
        grid = default_grid("u", extent=4.0, step=0.5)
        vals = 1.0 + grid
        table = RenewalTable("u", grid, vals, np.zeros_like(grid), np.zeros((grid.size, grid.size)), 0, 1)
        spec = point_environment(OffspringLaw.table([1 - 1 / math.e, 1 / math.e]))
        h = check_harmonicity(table, spec, 2.0, 100)
        assert h.lhs == pytest.approx(table(1.0), abs=1e-12)

    def test_csv(self, tables, tmp_path):
        _, u, _ = tables
        path = tmp_path / "u.csv"
        u.to_csv(path)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "x,value,stderr,side"
        assert len(lines) == u.grid.size + 1


class TestWalkStatistics:
    def test_duality(self, spec):
        s = walk_event_summary(spec, 50, 200_000, 21)
        d, se = s.duality()
        assert abs(d) < 3 * se

    def test_duality_exact_on_oracle(self, two_atom):
        for n in range(1, 11):
            tau = enumerate_walk(two_atom, n, "tau")
            neg = enumerate_walk(two_atom, n, "M_neg")
            assert tau.atoms.get(n, 0) == neg.atoms.get(1, 0)

    def test_minimum_position_n1(self, spec):
        law = minimum_position_law(spec, 1, 100_000, 22)
        assert law.masses[1] == pytest.approx(0.5, abs=3 * math.sqrt(0.25 / 1e5))

    def test_degenerate_negative_walk(self):
        spec = point_environment(OffspringLaw.table([1 - 1 / math.e, 1 / math.e]))
        law = minimum_position_law(spec, 10, 100, 23)
        assert law.masses[-1] == 1.0

    def test_meander_snapshot(self, spec):
        a = meander_scaling_snapshot(spec, 100, 0.0, 20_000, 24)
        b = meander_scaling_snapshot(spec, 400, 0.0, 20_000, 25)
        assert np.all(a.endpoint <= 0.0)
        assert a.a_n == pytest.approx(10.0)
        assert weighted_ks(a.endpoint, np.ones(a.endpoint.size), b.endpoint, np.ones(b.endpoint.size)) < 0.05

    def test_overshoot_edges(self, spec):
        assert two_walk_overshoot_probability(spec, 100, 0, 10, 26).value == 0.0
        small = two_walk_overshoot_probability(spec, 100, 10, 20_000, 27)
        large = two_walk_overshoot_probability(spec, 100, 99, 20_000, 28)
        assert large.value > small.value
