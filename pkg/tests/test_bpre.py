import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bpre_lab.bpre import (
    WeightedSampleSet,
    annealed_mean_check,
    conditioned_population,
    conditioned_survival_sampler,
    default_r,
    linear_fractional_survival,
    quenched_replicas,
    quenched_survival,
    simulate_quenched,
    survival_profile,
)
from bpre_lab.environment import mixture, point_environment
from bpre_lab.offspring import OffspringLaw
from bpre_lab.oracle import enumerate_bpre
from bpre_lab.stats import ZeroEffectiveSampleError, mean_se

from conftest import geometric_env

ONE = OffspringLaw.point_mass(1)
DEAD = OffspringLaw.point_mass(0)


class TestQuenched:
    def test_identity_environment(self, rng):
        tr = simulate_quenched([ONE] * 6, 3, 6, rng)
        assert tr.sizes == [3] * 7
        assert tr.survived_to == 6

    def test_absorption_first_step(self, rng):
        tr = simulate_quenched([DEAD, ONE, ONE], 1, 3, rng)
        assert tr.sizes == [1, 0, 0, 0]
        assert tr.survived_to == 0

    def test_walk_matches_laws(self, rng):
        env = geometric_env(8, 1)
        tr = simulate_quenched(env, 1, 8, rng)
        np.testing.assert_allclose(tr.walk.increments, [math.log(q.mean) for q in env], atol=1e-12)

    def test_cap_flag(self, rng):
        tr = simulate_quenched([OffspringLaw.point_mass(3)] * 10, 1, 10, rng, cap=50)
        assert tr.capped and tr.sizes[-1] > 50

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 12))
    def test_absorption_invariant(self, seed, n):
        env = geometric_env(n, seed)
        tr = simulate_quenched(env, 1, n, np.random.default_rng(seed))
        sizes = np.array(tr.sizes)
        assert sizes[0] == 1
        dead = np.flatnonzero(sizes == 0)
        if dead.size:
            assert np.all(sizes[dead[0]:] == 0)

    def test_quenched_mean(self):
        env = geometric_env(6, 2)
        z = quenched_replicas(env, 2, 6, 100_000, 3)[:, -1]
        m, se = mean_se(z)
        target = 2 * math.exp(sum(math.log(q.mean) for q in env))
        assert abs(m - target) < 3 * se


class TestQuenchedSurvival:
    def test_trivial(self):
        assert quenched_survival([ONE] * 5) == 1.0
        assert quenched_survival([OffspringLaw.table([0.3, 0.7])]) == pytest.approx(0.7, abs=1e-15)

    def test_geometric_closed_form(self):
        env = geometric_env(20, 4)
        s = np.concatenate([[0.0], np.cumsum([math.log(q.mean) for q in env])])
        assert quenched_survival(env) == pytest.approx(float(linear_fractional_survival(s)), rel=1e-12)

    def test_geometric_mc_and_bound(self):
        env = geometric_env(5, 5)
        p = quenched_survival(env)
        alive = quenched_replicas(env, 1, 5, 1_000_000, 6)[:, -1] > 0
        se = math.sqrt(p * (1 - p) / alive.size)
        assert abs(alive.mean() - p) < 3 * se
        s = np.concatenate([[0.0], np.cumsum([math.log(q.mean) for q in env])])
        assert p <= math.exp(s.min()) + 1e-15

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 30))
    def test_bound_on_random_environments(self, seed, n):
        env = geometric_env(n, seed)
        s = np.concatenate([[0.0], np.cumsum([math.log(q.mean) for q in env])])
        assert quenched_survival(env) <= math.exp(s.min()) * (1 + 1e-12)

    def test_table_against_replicas(self):
        env = [OffspringLaw.table([0.3, 0.3, 0.4]), OffspringLaw.table([0.5, 0.1, 0.1, 0.3]), OffspringLaw.poisson(0.9)]
        p = quenched_survival(env)
        alive = quenched_replicas(env, 1, 3, 400_000, 7)[:, -1] > 0
        assert abs(alive.mean() - p) < 3 * math.sqrt(p * (1 - p) / alive.size)

    def test_profile_matches_scalar(self, spec, rng):
        codes = spec.draw_codes("tilted", (3, 12), rng)
        t = survival_profile(spec, codes, 12)
        for row in range(3):
            laws = spec.laws(codes[row])
            for k in (0, 5, 11):
                assert t[row, k] == pytest.approx(quenched_survival(laws[k:]), rel=1e-12)


class TestConditionedPopulation:
    def test_oracle_law_of_z_path(self, two_atom):
        # the exact Doob transform, averaged over environments, reproduces the oracle law of Z_3
        s = conditioned_survival_sampler(two_atom, 3, 3, 400_000, 8, "tilted_rao_blackwell")
        exact = enumerate_bpre(two_atom, 3, "Zn").as_float()
        est, se = s.law("Z_r"), s.law_se("Z_r")
        for atom, p in exact.items():
            assert abs(est.get(atom, 0.0) - p) < 3 * se.get(atom, 1e-9) + 1e-12

    def test_survivors_only(self, spec, rng):
        codes = spec.draw_codes("tilted", (2000, 10), rng)
        t = survival_profile(spec, codes, 10)
        z = conditioned_population(spec, codes, t, 10, rng)
        assert np.all(z[:, -1] > 0)
        assert np.all(z[:, 0] == 1)


class TestSampler:
    def test_single_atom_exact(self):
        spec = point_environment(OffspringLaw.table({0: 0.5, 2: 0.5}))
        for strategy in ("tilted_rejection", "tilted_rao_blackwell"):
            s = conditioned_survival_sampler(spec, 1, 1, 5000, 9, strategy)
            assert s.law("Z_1") == {2: 1.0}

    def test_strategies_agree(self, spec):
        a = conditioned_survival_sampler(spec, 16, None, 100_000, 10, "tilted_rejection")
        b = conditioned_survival_sampler(spec, 16, None, 100_000, 11, "tilted_rao_blackwell")
        for name in ("Z_tau", "Z_r_normalized", "tau_r", "early_mean", "Z_1"):
            (ma, sa), (mb, sb) = a.mean(name), b.mean(name)
            assert abs(ma - mb) < 3 * math.hypot(sa, sb), name

    def test_ess_guard(self, spec):
        s = conditioned_survival_sampler(spec, 128, None, 50_000, 12)
        assert s.ess > 0.01 * 50_000

    def test_weights_bounded(self, spec):
        s = conditioned_survival_sampler(spec, 32, None, 10_000, 13)
        assert np.all(s.weights > 0) and np.all(s.weights <= 1.0)
        assert np.all(s.observables["Z_tau"] >= 1)
        assert np.all(s.observables["Z_r_normalized"] > 0)

    def test_zero_effective_sample(self):
        # critical binary splitting: survival to n = 4000 is rare, and 4 runs all die
        spec = point_environment(OffspringLaw.table({0: 0.5, 2: 0.5}))
        with pytest.raises(ZeroEffectiveSampleError):
            conditioned_survival_sampler(spec, 4000, None, 4, 14, "tilted_rejection")

    def test_annealed_mean(self, spec):
        chk = annealed_mean_check(spec, 10, 200_000, 15)
        assert abs(chk.ratio - 1.0) < 3 * chk.ratio_stderr

    def test_default_r(self):
        assert [default_r(n) for n in (1, 2, 4, 5, 64, 65, 512)] == [1, 2, 2, 3, 8, 9, 23]

    def test_merge_and_csv(self, spec, tmp_path):
        a = conditioned_survival_sampler(spec, 8, None, 100, 16)
        b = conditioned_survival_sampler(spec, 8, None, 50, 17)
        m = a.merge(b)
        assert len(m) == 150 and m.total_weight == pytest.approx(a.total_weight + b.total_weight)
        m.to_csv(tmp_path / "w.csv", tmp_path / "w.json")
        header = (tmp_path / "w.csv").read_text(encoding="utf-8").splitlines()[0].split(",")
        assert header[0] == "weight" and "Z_tau" in header and header[-2:] == ["n", "r"]
        assert isinstance(m, WeightedSampleSet)
