import json
import math

import numpy as np
import pytest

from bpre_lab.environment import point_environment
from bpre_lab.experiments import (
    DEFAULT_THRESHOLDS,
    OracleOnlySpecError,
    run_e1_theorem1_part1,
    run_e2_theorem1_part2,
    run_e3_environment_factorization,
    run_e4_wplus,
    run_e5_duality_and_arcsine,
    run_e7_two_walk,
    run_e8_transfer,
    run_experiment,
)
from bpre_lab.offspring import OffspringLaw
from bpre_lab.streams import Stream

ONE = point_environment(OffspringLaw.point_mass(1))
TWO = point_environment(OffspringLaw.point_mass(2))
DOWN = point_environment(OffspringLaw.table([1 - 1 / math.e, 1 / math.e]))  # X = -1


def values(res):
    return {k: v["value"] for k, v in res.statistics.items()}


class TestTrivialScenarios:
    def test_e1_degenerate(self):
        res = run_e1_theorem1_part1(ONE, [4, 8, 16], 2000, 1, allow_oracle_only=True)
        v = values(res)
        assert v["tv_n4_n8"] == 0.0 and v["tv_n8_n16"] == 0.0
        assert res.verdict in ("pass", "inconclusive")

    def test_e1_refuses_oracle_specs(self, two_atom):
        with pytest.raises(OracleOnlySpecError):
            run_e1_theorem1_part1(two_atom, [4, 8], 100, 1)

    def test_e2_point_mass_two(self):
        res = run_e2_theorem1_part2(TWO, [4, 9], 500, 2, allow_oracle_only=True)
        v = values(res)
        # tau_r = 0, so the statistic is 2^r e^{-r log 2} = 1
        assert v["min_value_n4"] == pytest.approx(1.0)
        assert v["near_zero_mass_n9"] == 0.0

    def test_e3_empty_blocks(self, spec):
        res = run_e3_environment_factorization(spec, 100, 0, 0, 100, 3)
        assert res.statistics["correlation"] == {"value": 0.0, "exact": True}

    def test_e4_constant(self):
        for env in (ONE, TWO):
            res = run_e4_wplus(env, [5, 10], 200, 4)
            v = values(res)
            assert v["terminal_q0.5_h10"] == pytest.approx(1.0)
            assert v["small_terminal_fraction_h10"] == 0.0

    def test_e5_negative_constant(self):
        res = run_e5_duality_and_arcsine(DOWN, [10], 1000, 5, arcsine_n=None)
        v = values(res)
        assert v["p_min_at_end_n10"] == 1.0 and v["p_max_neg_n10"] == 1.0

    def test_e7_zero_window(self, spec):
        res = run_e7_two_walk(spec, [(50, 0)], 100, 6)
        assert values(res)["overshoot_n50_r0"] == 0.0

    def test_e8_constant(self, spec):
        res = run_e8_transfer(spec, 64, [0, 1, 2], 1000, 7, functional="constant", constant=0.3)
        v = values(res)
        assert v["survival_estimate"] == 0.3
        assert all(v[f"spine_estimate_m{m}"] == 0.3 for m in (0, 1, 2))
        assert res.verdict == "pass"


class TestResultContract:
    def test_statistics_carry_errors(self, spec):
        res = run_experiment("e7", spec, 8, pairs=[[40, 6], [160, 12]], N=2000)
        for name, s in res.statistics.items():
            assert "stderr" in s or s.get("exact") is True, name

    def test_thresholds_are_data(self, spec):
        base = run_experiment("e5", spec, 9, n_list=[20], N=20_000, arcsine_n=None)
        assert base.verdict == "pass"
        strict = run_experiment("e5", spec, 9, thresholds={"e5": {"sigmas": 0.0}}, n_list=[20], N=20_000, arcsine_n=None)
        assert strict.parameters["thresholds"]["sigmas"] == 0.0
        assert strict.statistics == base.statistics
        assert DEFAULT_THRESHOLDS["e5"]["sigmas"] == 3.0

    def test_worker_invariance(self, spec, tmp_path):
        kw = dict(n_list=[8, 16], N=3000)
        a = run_experiment("e1", spec, Stream(10), **kw)
        b = run_experiment("e1", spec, Stream(10, workers=3), **kw)
        assert a.to_json() == b.to_json()

    def test_write(self, spec, tmp_path):
        res = run_experiment("e5", spec, 11, n_list=[10], N=1000, arcsine_n=50, arcsine_N=1000)
        names = res.write(tmp_path)
        assert "e5_result.json" in names and "e5_tau_law.csv" in names
        doc = json.loads((tmp_path / "e5_result.json").read_text(encoding="utf-8"))
        assert doc["parameters"]["seed"] == 11
        assert doc["spec"] == spec.to_dict()
        assert "workers" not in json.dumps(doc)

    def test_unknown(self, spec):
        with pytest.raises(KeyError):
            run_experiment("e0", spec, 1)


@pytest.mark.parametrize(
    "eid, params",
    [
        ("e1", dict(n_list=[8, 16], N=2000)),
        ("e2", dict(n_list=[8, 16], N=2000)),
        ("e3", dict(n=40, k=2, N=500)),
        ("e4", dict(horizon_list=[8, 16], N=200)),
        ("e5", dict(n_list=[10], N=1000, arcsine_n=40, arcsine_N=1000)),
        ("e6", dict(u_points=[0.5], v_points=[-0.5], N=2000, check_N=2000, K=30)),
        ("e7", dict(pairs=[[40, 6], [160, 12]], N=500)),
        ("e8", dict(n=36, N=2000)),
    ],
)
def test_every_experiment_writes_plot_data(spec, tmp_path, eid, params):
    res = run_experiment(eid, spec, 12, **params)
    names = res.write(tmp_path)
    assert f"{eid}_plot.csv" in names
    lines = (tmp_path / f"{eid}_plot.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "series,x,y" and len(lines) > 1
    assert len(names) >= 3  # result JSON, a histogram or table CSV, plot data
