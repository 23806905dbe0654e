import itertools
import math

import numpy as np
import pytest

from equivmd.bootstrap import BootstrapConfig
from equivmd.distributions import RngSeed
from equivmd.equivtests import STUDY_METHODS, Method
from equivmd.errors import IncompleteGridError, UnknownScenarioError
from equivmd.simharness import (
    SIZES,
    SimResult,
    build_scenario,
    derive_seed,
    parse_methods,
    read_results,
    replicate,
    run_scenario,
    summarize_mad,
    write_results,
)

BOOT = BootstrapConfig(200, RngSeed(3))


class TestScenarios:
    def test_s1(self):
        s = build_scenario("S1")
        np.testing.assert_array_equal(s.mu1, [20, 70, 88])
        np.testing.assert_array_equal(s.shift, [10, 10, 10])
        np.testing.assert_array_equal(s.sigma, [[120, 39, -9], [39, 146, 111], [-9, 111, 113]])
        assert s.family == "Normal" and s.is_size_study and s.sizes == (12, 24, 36, 48, 96, 120)

    def test_s4(self):
        s = build_scenario("S4")
        np.testing.assert_array_equal(s.mu1, [31, 61, 83, 94])
        np.testing.assert_array_equal(s.shift, [8, 8, 8, 8])
        np.testing.assert_array_equal(s.sigma, [[32, 52, 38, 26], [52, 87, 66, 44], [38, 66, 65, 35], [26, 44, 35, 30]])
        assert s.family == "Normal" and not s.is_size_study

    def test_s6(self):
        s = build_scenario("s6")
        assert s.p == 4 and s.family == "LogNormal" and s.is_size_study

    @pytest.mark.parametrize("i", range(1, 9))
    def test_invariants(self, i):
        s = build_scenario(f"S{i}")
        assert s.shift.size == s.mu1.size == s.p == s.sigma.shape[0]
        np.linalg.cholesky(s.sigma)
        assert s.family == ("Normal" if i <= 4 else "LogNormal")
        assert s.p == (3 if i % 2 == 1 else 4)
        assert s.is_size_study == (i in (1, 2, 5, 6))

    def test_boundary_consistency(self):
        # true squared distance equals the true margin for size studies
        for sid, exact in (("S1", 678700 / 239619), ("S2", 54875 / 1909)):
            s = build_scenario(sid)
            assert s.true_margin == pytest.approx(exact, rel=1e-12)

    def test_unknown(self):
        with pytest.raises(UnknownScenarioError):
            build_scenario("S9")

    def test_lognormal_params_are_moment_matched(self):
        s = build_scenario("S5")
        test, ref = s.params()
        mean = np.exp(ref.mean + np.diag(ref.cov) / 2)
        np.testing.assert_allclose(mean, s.mu1, rtol=1e-12)
        np.testing.assert_allclose(np.exp(test.mean + np.diag(test.cov) / 2), s.mu1 + s.shift, rtol=1e-12)


class TestSeeds:
    def test_same_tuple(self):
        assert derive_seed(RngSeed(1), "S1", 12, 5, "Test") == derive_seed(RngSeed(1), "S1", 12, 5, "Test")

    def test_groups_differ(self):
        a = derive_seed(RngSeed(1), "S1", 12, 5, "Test").generator().random(4)
        b = derive_seed(RngSeed(1), "S1", 12, 5, "Reference").generator().random(4)
        assert not np.array_equal(a, b)

    @pytest.mark.slow
    def test_injective_on_a_million_tuples(self):
        m = RngSeed(20240229)
        keys = set()
        count = 0
        for sid, n, g in itertools.product([f"S{i}" for i in range(1, 9)], SIZES, ("Test", "Reference")):
            for rep in range(10_417):
                keys.add(derive_seed(m, sid, n, rep, g).key())
                count += 1
        assert count >= 10**6 and len(keys) == count


class TestSimResult:
    def test_rate_and_se(self):
        r = SimResult("S1", "T2EQ", 12, 400, 20, 1)
        assert r.rate == 0.05
        assert r.mc_se == pytest.approx(math.sqrt(0.05 * 0.95 / 400))


class TestRunScenario:
    def test_single_rep(self):
        spec = build_scenario("S1", sizes=(12, 24))
        res = run_scenario(spec, [Method.T2EQ, Method.PCT_DIF_BC], reps=1, bootstrap=BOOT, seed=5)
        assert len(res) == 4
        assert all(r.replications == 1 and r.rejections in (0, 1) for r in res)
        assert res == run_scenario(spec, [Method.T2EQ, Method.PCT_DIF_BC], reps=1, bootstrap=BOOT, seed=5)

    def test_worker_invariance(self):
        spec = build_scenario("S2", sizes=(12, 24))
        runs = [run_scenario(spec, STUDY_METHODS, reps=12, bootstrap=BOOT, seed=9, workers=w, chunk=5) for w in (1, 3)]
        assert runs[0] == runs[1]

    def test_methods_share_the_sample(self, monkeypatch):
        import equivmd.simharness as sh

        seen = []
        real = sh.evaluate_methods

        def spy(xt, xr, methods, *a, **k):
            seen.append((xt.copy(), list(methods)))
            return real(xt, xr, methods, *a, **k)

        monkeypatch.setattr(sh, "evaluate_methods", spy)
        spec = build_scenario("S1", sizes=(12,))
        run_scenario(spec, [Method.T2EQ, Method.PCT_DIF], reps=3, bootstrap=BOOT, seed=1)
        assert len(seen) == 3 and all(len(m) == 2 for _, m in seen)

    def test_replicate_is_reproducible(self):
        spec = build_scenario("S6")
        a = replicate(spec, STUDY_METHODS, 24, 7, BOOT, RngSeed(4))
        b = replicate(spec, STUDY_METHODS, 24, 7, BOOT, RngSeed(4))
        assert {m: o.reject for m, o in a.items()} == {m: o.reject for m, o in b.items()}

    def test_failures_counted_not_raised(self):
        # p = 4 at n = 12 exercises the singular-resample paths
        spec = build_scenario("S2", sizes=(12,))
        res = run_scenario(spec, STUDY_METHODS, reps=5, bootstrap=BOOT, seed=2)
        assert all(r.replications == 5 and 0 <= r.failures <= 5 for r in res)

    def test_reps_validation(self):
        with pytest.raises(ValueError):
            run_scenario(build_scenario("S1"), [Method.T2EQ], reps=0)


def _grid(rates, scenario="S1", method="T2EQ", reps=10_000):
    return [SimResult(scenario, method, n, reps, round(r * reps), 0) for n, r in zip(SIZES, rates)]


class TestSummary:
    def test_zero(self):
        s = summarize_mad(_grid([0.05] * 6))
        assert s.get("T2EQ", "S1") == 0.0

    def test_arithmetic(self):
        s = summarize_mad(_grid([0.04, 0.06, 0.05, 0.05, 0.05, 0.05]))
        assert s.get("T2EQ", "S1") == pytest.approx(1 / 3)
        assert s.get("T2EQ") == pytest.approx(1 / 3)

    def test_sorted_by_average(self):
        res = _grid([0.05] * 6, method="A") + _grid([0.03] * 6, method="B") + _grid([0.06] * 6, method="C")
        res += _grid([0.05] * 6, "S2", "A") + _grid([0.05] * 6, "S2", "B") + _grid([0.05] * 6, "S2", "C")
        s = summarize_mad(res)
        assert s.methods() == ["A", "C", "B"]
        assert s.get("B") == pytest.approx(1.0)

    def test_incomplete(self):
        with pytest.raises(IncompleteGridError):
            summarize_mad([])
        res = _grid([0.05] * 6, method="A") + _grid([0.05] * 6, "S2", "B")
        with pytest.raises(IncompleteGridError):
            summarize_mad(res)
        with pytest.raises(IncompleteGridError):
            summarize_mad(_grid([0.05] * 6, method="A") + _grid([0.05] * 6, method="B")[:-1])

    def test_io_roundtrip(self, tmp_path):
        res = _grid([0.04, 0.06, 0.05, 0.05, 0.05, 0.05]) + _grid([0.05] * 6, "S2")
        path = tmp_path / "r.csv"
        write_results(res, path)
        assert read_results(path) == res
        summarize_mad(res).to_csv(tmp_path / "m.csv")
        assert (tmp_path / "m.csv").read_text().splitlines()[0] == "method,S1,S2,average"

    def test_malformed(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("scenario,method,n\nS1,T2EQ,12\n")
        with pytest.raises(ValueError):
            read_results(p)

    def test_parse_methods(self):
        assert parse_methods("all") == STUDY_METHODS
        assert parse_methods("T2EQ, PctBootstrapOnDifBC") == (Method.T2EQ, Method.PCT_DIF_BC)
