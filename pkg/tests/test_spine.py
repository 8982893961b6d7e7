import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bpre_lab import walk
from bpre_lab.offspring import DegenerateMeanError, OffspringLaw
from bpre_lab.spine import (
    _alpha_beta_arrays,
    alpha_beta,
    alpha_beta_regression,
    side_mean_identity,
    simulate_spine,
    simulate_spine_batch,
    spine_submartingale_bound,
    trace_from_batch,
    wplus_trajectory,
)

from conftest import geometric_env

ONE = OffspringLaw.point_mass(1)
TWO = OffspringLaw.point_mass(2)


class TestSimulateSpine:
    def test_identity_environment(self, rng):
        tr = simulate_spine([ONE] * 6, 6, rng)
        np.testing.assert_array_equal(tr.totals, np.ones(7))
        assert not tr.sides.any()

    def test_binary_tree(self, rng):
        tr = simulate_spine([TWO] * 7, 7, rng)
        assert tr.totals[-1] == 2**7
        np.testing.assert_array_equal(tr.spine_offspring, 2)

    def test_degenerate_mean(self, rng):
        with pytest.raises(DegenerateMeanError):
            simulate_spine([OffspringLaw.point_mass(0)], 1, rng)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 15))
    def test_structure(self, seed, n):
        tr = simulate_spine(geometric_env(n, seed), n, np.random.default_rng(seed))
        # representation identity, spine never dies, sides vanish for i >= k
        for k in range(n + 1):
            assert tr.totals[k] == 1 + tr.sides[k, :].sum()
            assert np.all(tr.sides[k, k:] == 0)
        assert np.all(tr.spine_offspring >= 1)
        assert np.all(tr.totals >= 1)

    @pytest.mark.parametrize("i,n", [(0, 5), (2, 10), (5, 20)])
    def test_side_mean_identity(self, i, n):
        env = geometric_env(n, 100 + n)
        batch = simulate_spine_batch(env, n, rows=100_000, rng=31)
        x = batch.sides[:, n, i].astype(float)
        se = x.std(ddof=1) / math.sqrt(x.size)
        assert abs(x.mean() - side_mean_identity(env, i, n)) < 3 * se

    def test_batch_trace_round_trip(self, tmp_path):
        env = geometric_env(6, 3)
        batch = simulate_spine_batch(env, 6, rows=4, rng=32)
        tr = trace_from_batch(batch, 2, env)
        np.testing.assert_array_equal(tr.totals, batch.totals[2])
        tr.to_csv(tmp_path / "t.csv", tmp_path / "s.csv")
        assert (tmp_path / "t.csv").read_text(encoding="utf-8").startswith("k,")


class TestWplus:
    def test_constant_for_point_masses(self, rng):
        for law in (ONE, TWO):
            w = wplus_trajectory(simulate_spine([law] * 10, 10, rng))
            np.testing.assert_allclose(w, 1.0, rtol=1e-12)

    def test_cap_freezes(self, spec):
        env = walk.sample_conditioned_paths(spec, "stay_nonneg", 40, 500, 33)
        b = simulate_spine_batch(spec, 40, rng=34, keep_sides=False, cap=1e3, codes=env.codes)
        assert b.frozen.any()
        w = b.wplus
        rows = np.flatnonzero(b.totals[:, -2] > 1e3)
        assert rows.size
        # rows already over the cap keep their normalised value
        np.testing.assert_allclose(w[rows, -1], w[rows, -2], rtol=1e-12)


class TestSubmartingaleBound:
    def test_identity_environment(self):
        b = simulate_spine_batch([ONE] * 8, 8, rows=100, rng=35)
        res = spine_submartingale_bound(b, 0, 0.5)
        assert res.lhs == 0.0

    def test_geometric_environment(self):
        env = geometric_env(15, 36)
        b = simulate_spine_batch(env, 15, rows=20_000, rng=37)
        assert spine_submartingale_bound(b, 0, 0.5).holds()

    def test_rhs_shrinks(self, spec):
        env = walk.sample_conditioned_paths(spec, "stay_nonneg", 30, 3000, 38)
        b = simulate_spine_batch(spec, 30, rng=39, codes=env.codes)
        r0 = spine_submartingale_bound(b, 0, 0.5)
        r10 = spine_submartingale_bound(b, 10, 0.5)
        assert r10.rhs <= r0.rhs
        assert r0.holds() and r10.holds()


class TestAlphaBeta:
    def test_full_window(self, rng):
        tr = simulate_spine(geometric_env(12, 40), 12, rng)
        ab = alpha_beta(tr, 20, 10)
        assert ab.z_hat_r == tr.totals[10] - 1

    def test_identity_environment(self, rng):
        tr = simulate_spine([ONE] * 10, 10, rng)
        ab = alpha_beta(tr, 2, 8)
        assert ab.alpha == 0.0 and ab.beta == 0.0

    def test_out_of_range_flag(self, rng):
        # an increasing walk has tau_r = 0; with a > r the shifted window is undefined
        tr = simulate_spine([TWO] * 6, 6, rng)
        ab = alpha_beta(tr, 7, 5)
        assert not ab.in_range and math.isnan(ab.beta)

    def test_conditional_mean_regression(self):
        env = geometric_env(30, 41)
        reg = None
        for a in (3, 4, 5, 6, 2):
            try:
                reg = alpha_beta_regression(env, a, 30, 40_000, 42)
                break
            except ValueError:
                continue
        assert reg is not None
        assert abs(reg.slope - 1.0) < 3 * reg.slope_se
        assert abs(reg.intercept - reg.expected_intercept) < 3 * reg.intercept_se

    def test_gap_shrinks_with_window(self, spec):
        r = 64
        c = walk.sample_conditioned_paths(spec, "min_at_end", 256, 5000, 43, steps=range(1, r + 1)).codes
        b = simulate_spine_batch(spec, r, rng=44, codes=c)
        freq = []
        for a in (8, 32):
            _, _, _, al, be, ok = _alpha_beta_arrays(b.sums, b.sides, a, r)
            freq.append(float(np.mean(np.abs(al - be)[ok] > 0.25)))
        assert freq[1] < freq[0]
