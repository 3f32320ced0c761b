from dataclasses import dataclass, replace

import numpy as np
import pytest

from bfe_gamp.admm import map_two_stage_solve
from bfe_gamp.errors import ParameterError
from bfe_gamp.estimators import EstimatorOutput, GaussianOutput, LogCoshQuadratic, PureQuadratic
from bfe_gamp.problem import GlmProblem
from bfe_gamp.verification import (SUITES, Case, SuiteReport, bfe_monotonicity_audit,
                                   contraction_rate_estimate, curvature_fixed_point_audit,
                                   finite_difference_check, gaussian_instance, hardening_audit,
                                   lmmse, logcosh_instance, map_reference_solve,
                                   power_iteration_norm, run_suites)


@dataclass
class _FakeRun:
    bfe_trajectory: object


@dataclass(frozen=True)
class _IgnoresTemperature(LogCoshQuadratic):
    def tempered(self, T):
        return self


def test_case_semantics():
    assert Case("a", 1.0, 1.0).passed and not Case("a", 1.0, 1.0, "lt").passed
    assert not Case("a", float("nan"), 1.0).passed
    assert not Case("a", float("inf"), float("inf")).passed
    rep = SuiteReport("s")
    assert not rep.passed  # empty suites do not pass
    rep.add("x", 0.5, 1.0)
    rep.add("y", 2.0, 1.0)
    assert [c.name for c in rep.failures()] == ["y"]
    assert rep.rows()[0] == ("s", "x", 0.5, 1.0, True)


def test_contraction_rate_estimate():
    assert contraction_rate_estimate(0.9 ** np.arange(40)) == pytest.approx(0.9, rel=1e-12)
    assert contraction_rate_estimate(np.ones(20)) == 1.0
    with pytest.raises(ParameterError):
        contraction_rate_estimate([1.0, 0.5])


def test_bfe_audit_negative_control():
    good = _FakeRun(np.array([3.0, 2.0, 1.5, 1.5]))
    assert bfe_monotonicity_audit(good).passed
    bad = _FakeRun(np.array([3.0, 2.0, 2.0 + 1e-6, 1.0]))
    rep = bfe_monotonicity_audit(bad)
    assert not rep.passed and "outer2" in rep.cases[0].name
    with pytest.raises(ParameterError):
        bfe_monotonicity_audit(_FakeRun(None))


def test_hardening_audit_negative_control():
    ok = hardening_audit([("logcosh", LogCoshQuadratic(alpha=0.5, c=2.0))])
    assert ok.passed
    bad = hardening_audit([("stuck", _IgnoresTemperature(alpha=0.5, c=2.0))])
    assert not bad.passed


def test_curvature_audit_negative_control():
    pr = logcosh_instance(0)
    run = map_two_stage_solve(pr)
    assert curvature_fixed_point_audit(run, pr).passed
    st = replace(run.state, tau_x=run.state.tau_x * (1 + 1e-4))
    rep = curvature_fixed_point_audit(replace(run, state=st), pr)
    assert not rep.passed


def test_finite_difference_check_flags_wrong_derivative():
    def wrong(r, tau):
        return EstimatorOutput(np.sin(r), tau * 0.5 * np.cos(r))

    assert finite_difference_check(wrong, np.linspace(-1, 1, 5), (1.0,)) > 1e-2


def test_map_reference_on_quadratics():
    pr = gaussian_instance(2)
    np.testing.assert_allclose(map_reference_solve(pr), lmmse(pr), atol=1e-8)
    zero = GlmProblem(pr.A, np.zeros(pr.m), PureQuadratic(), GaussianOutput(y=np.zeros(pr.m)))
    np.testing.assert_array_equal(map_reference_solve(zero), np.zeros(pr.n))


def test_power_iteration_norm():
    A = np.diag([3.0, 1.0, 0.5])
    assert power_iteration_norm(A) == pytest.approx(3.0, rel=1e-10)
    B = gaussian_instance(0).A
    assert power_iteration_norm(B) == pytest.approx(np.linalg.norm(B, 2), rel=1e-8)


def test_run_suites_rejects_unknown():
    with pytest.raises(ParameterError):
        run_suites(["nope"])


@pytest.mark.parametrize("name", list(SUITES))
def test_suite_passes(name):
    (rep,) = run_suites([name])
    assert rep.passed, [(c.name, c.measured, c.threshold) for c in rep.failures()]
