import numpy as np
import pytest

from cardmil.checks import (
    GRADIENT_TOLERANCE,
    ORACLE_TOLERANCE,
    CheckReport,
    large_bag_smoke,
    run_bench,
    run_gradient_check,
    run_oracle_check,
)


class TestCheckReport:
    def test_empty_passes(self):
        rep = CheckReport("x", 0, 1e-9)
        assert rep.passed and rep.worst_normalized == 0.0

    def test_fail_threshold(self):
        rep = CheckReport("x", 1, 1e-9, worst={"q": 1.0001})
        assert not rep.passed

    def test_lines_mention_verdict(self):
        rep = CheckReport("oracle", 3, 1e-9, worst={"posterior": 0.5}, seconds=0.1)
        text = "\n".join(rep.lines())
        assert "oracle: PASS" in text
        assert "posterior" in text


class TestOracleCheck:
    def test_small_run_passes(self):
        rep = run_oracle_check(trials=40, max_m=8, seed=7)
        assert rep.passed
        assert rep.trials == 40
        assert rep.tolerance == ORACLE_TOLERANCE
        assert set(rep.worst) == {
            "log_partition",
            "posterior",
            "conditional_marginals",
            "unconditional_marginals",
            "map_score",
        }

    def test_fault_injection_detected(self):
        rep = run_oracle_check(trials=10, max_m=6, seed=7, inject_fault=True)
        assert not rep.passed

    def test_max_m_capped_at_enumeration_limit(self):
        with pytest.raises(ValueError):
            run_oracle_check(trials=1, max_m=21)
        with pytest.raises(ValueError):
            run_oracle_check(trials=0)


class TestGradientCheck:
    def test_small_run_passes(self):
        rep = run_gradient_check(datasets=8, seed=3)
        assert rep.passed
        assert rep.tolerance == GRADIENT_TOLERANCE

    def test_fault_injection_detected(self):
        rep = run_gradient_check(datasets=5, seed=3, inject_fault=True)
        assert not rep.passed


class TestBench:
    def test_rows_shape(self):
        rows = run_bench(sizes=(32, 64), dimension=4, seed=0, repeats=1)
        ops = {r[0] for r in rows}
        assert ops == {"partition", "marginals", "kernel_pair"}
        for op, m, d, seconds in rows:
            assert m in (32, 64)
            assert d == 4
            assert seconds > 0.0

    def test_large_bag_smoke_small(self):
        out = large_bag_smoke(m=512, dimension=4, seed=0)
        assert out["m"] == 512
        assert np.isfinite(out["log_partition_pos"])
        assert np.isfinite(out["log_partition_neg"])
        assert out["marginals_finite"] and out["marginals_in_unit"]
        assert out["seconds"] > 0.0
