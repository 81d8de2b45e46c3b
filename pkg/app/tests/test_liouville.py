"""
Liouville probes: sign hypotheses, backward ODE trajectories and the growth gate
"""

import numpy as np
import pytest

from app.lab.errors import ConfigError, ExponentOutOfRange, InsufficientLadder
from app.lab.liouville import (
    LiouvilleCase,
    ancient_ode,
    check_sign_hypothesis,
    gate_exponent,
    growth_gate,
    liouville_verdict,
    sweep_beta,
)
from app.lab.solver import NonlinearitySpec


def _spec(tag, **params):
    return NonlinearitySpec(tag, params, 1)


def test_constant_source_reaches_zero_at_minus_one():
    trajectory = ancient_ode(_spec("constant", a=1.0), 1.0, -2.0, a=1.0)
    assert trajectory.violation_time == pytest.approx(-1.0, abs=1e-8)
    assert trajectory.bound == pytest.approx(-1.0)


def test_one_plus_square_reaches_zero_at_minus_quarter_pi():
    trajectory = ancient_ode(_spec("one-plus-square", a=1.0, b=1.0), 1.0, -2.0)
    assert trajectory.violation_time == pytest.approx(-np.pi / 4, abs=1e-6)


def test_backward_window_must_be_negative():
    with pytest.raises(ConfigError):
        ancient_ode(_spec("constant", a=1.0), 1.0, 0.5)


def test_sign_value_for_constant_source():
    report = check_sign_hypothesis("T2-ancient", _spec("constant", a=2.0), 1.2, -0.3)
    assert np.allclose(report.values, 1.54 * 2.0)
    assert report.holds
    assert report.equivalence_error <= 1e-10


def test_linear_source_fails_second_family():
    report = check_sign_hypothesis("T6-ancient", _spec("linear", a=1.0), 1.3)
    assert not report.holds
    assert report.sign_min < 0


def test_beta_sweep_covers_open_interval():
    sweep = sweep_beta(_spec("constant", a=1.0), 1.2, 2.0, count=5)
    betas = [beta for beta, _ in sweep]
    assert len(sweep) == 5
    assert -2 - np.sqrt(3) < min(betas) and max(betas) < -2 + np.sqrt(3)


def test_verdict_for_constant_source():
    case = LiouvilleCase("T6-ancient", 1.3, 2.0, _spec("constant", a=1.0))
    verdict = liouville_verdict(case)
    assert verdict.verdict == "no-ancient-solution"
    assert verdict.violation_time == pytest.approx(-1.0, abs=1e-8)


def test_verdict_when_sign_fails():
    case = LiouvilleCase("T6-ancient", 1.3, 2.0, _spec("linear", a=1.0))
    assert liouville_verdict(case).verdict == "hypotheses-not-met"


def test_case_checks_exponent_range():
    with pytest.raises(ExponentOutOfRange):
        LiouvilleCase("T6-ancient", 2.5, 2.0, _spec("constant", a=1.0))
    with pytest.raises(ExponentOutOfRange):
        LiouvilleCase("T2-ancient", 1.2, 2.0, _spec("constant", a=1.0), beta=0.5)


def test_gate_exponents():
    assert gate_exponent("T6-ancient", 1.3) == pytest.approx(0.3 / 0.8)
    assert gate_exponent("T2-ancient", 1.2, -2.0) == pytest.approx(0.5)


def test_growth_gate_on_log_ladder():
    radii = np.logspace(1, 4, 6)
    report = growth_gate("T6-ancient", 1.3, None, list(zip(radii, np.log(radii))))
    assert report.passed
    assert report.slope < 0


def test_growth_gate_rejects_exact_power():
    radii = np.logspace(1, 4, 6)
    exponent = gate_exponent("T6-ancient", 1.3)
    report = growth_gate("T6-ancient", 1.3, None, list(zip(radii, radii**exponent)))
    assert not report.passed


def test_growth_gate_accepts_bounded_pressure():
    radii = [10.0, 100.0, 1000.0]
    assert growth_gate("T6-ancient", 1.3, None, [(r, 2.0) for r in radii]).passed


def test_growth_gate_needs_three_radii():
    with pytest.raises(InsufficientLadder):
        growth_gate("T6-ancient", 1.3, None, [(10.0, 1.0), (100.0, 1.0)])
