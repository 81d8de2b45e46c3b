"""
Estimate engine: exponent ranges, calibrated constants and closed-manifold bounds
"""

import numpy as np
import pytest

from app.lab.errors import ConfigError, EmptyCylinder, ExponentOutOfRange, HypothesisViolated
from app.lab.estimates import (
    Cylinder,
    beta_admissible_range,
    corollary_bound_check,
    corollary_limit,
    estimate_context,
    hsz_rhs,
    liouville_rhs,
    pressure_transform,
    resolve_beta,
    sigma_frames,
    superflow_constant,
    t2_limit,
    t6_limit,
    u_from_pressure,
    verify_estimate,
)
from app.lab.solver import NonlinearitySpec, SolverConfig, initial_field, solve
from app.models.models import SpaceTimeField


def _pressure(ctx, p, nonlinearity="zero", n_params=None, t_end=0.1):
    spec = NonlinearitySpec(nonlinearity, n_params, ctx.n)
    cfg = SolverConfig(p=p, t_end=t_end, stepper="rk4", stride=4)
    u0 = initial_field(ctx, "static-sine", {"base": 2.0, "amp": 0.5}, 0.0, cfg.floor)
    result = solve(ctx, u0, spec, cfg)
    v = pressure_transform(result.u, p)
    return v, sigma_frames(spec, p, v)


@pytest.fixture(scope="module")
def baseline_pressure():
    from app.lab.geometry import GeometryContext
    from app.models.models import Chart

    ctx = GeometryContext.from_catalog(Chart(((0.0, 2 * np.pi),), (True,), (48,)), "flat", "zero", 2.0)
    v, sigma = _pressure(ctx, 1.2)
    return ctx, v, sigma


def test_exponent_limits():
    assert t2_limit(2.0) == pytest.approx(4.0 / 3.0)
    assert t6_limit(2.0) == pytest.approx(2.0)
    assert corollary_limit(2.0, 2.0) == pytest.approx(2.0)
    assert corollary_limit(3.0, 3.0) == pytest.approx(1.5)


def test_beta_interval_and_midpoint():
    span = beta_admissible_range(1.2, 2.0)
    assert span.beta1 == pytest.approx(-2 - np.sqrt(3))
    assert span.beta2 == pytest.approx(-2 + np.sqrt(3))
    assert span.midpoint == pytest.approx(-2.0)
    assert resolve_beta(1.2, 2.0) == pytest.approx(-2.0)


def test_beta_outside_interval():
    with pytest.raises(ExponentOutOfRange) as excinfo:
        resolve_beta(1.2, 2.0, 0.5)
    assert "beta-interval" in str(excinfo.value)


def test_p_outside_first_family():
    with pytest.raises(ExponentOutOfRange):
        beta_admissible_range(1.4, 2.0)


def test_pressure_is_positive_and_scaled(baseline_pressure):
    ctx, v, _ = baseline_pressure
    assert np.min(v.values) > 0
    assert v.values[0, 0] == pytest.approx(1.2 * 2.0**0.2 / 0.2)


def test_static_estimate_calibrates_then_passes_fixed(baseline_pressure):
    ctx, v, sigma = baseline_pressure
    cylinder = Cylinder((3.0,), float(v.times[-1]), 1.5, 0.08)
    ectx = estimate_context(ctx, v, 1.2, cylinder, sigma=sigma, beta=resolve_beta(1.2, 2.0))
    report = verify_estimate(ectx, hsz_rhs("T2-static", ectx), "calibrate")
    assert np.isfinite(report.c_star) and report.c_star > 0
    assert set(report.argsup) >= {"x", "t", "lhs", "rhs", "M"}

    fixed = verify_estimate(ectx, hsz_rhs("T2-static", ectx), "fixed", report.c_star * 1.01)
    assert fixed.passed
    strict = verify_estimate(ectx, hsz_rhs("T2-static", ectx), "fixed", report.c_star * 0.5)
    assert not strict.passed


def test_static_estimate_omits_h_term(baseline_pressure):
    ctx, v, sigma = baseline_pressure
    cylinder = Cylinder((3.0,), float(v.times[-1]), 1.5, 0.08)
    ectx = estimate_context(ctx, v, 1.2, cylinder, sigma=sigma, beta=-2.0)
    assert "sqrt_h" not in hsz_rhs("T2-static", ectx).breakdown
    assert "sqrt_h" in hsz_rhs("T2-local", ectx).breakdown


def test_fixed_mode_needs_c(baseline_pressure):
    ctx, v, sigma = baseline_pressure
    ectx = estimate_context(ctx, v, 1.2, Cylinder((3.0,), float(v.times[-1]), 1.5, 0.08), sigma=sigma, beta=-2.0)
    with pytest.raises(ConfigError):
        verify_estimate(ectx, hsz_rhs("T2-static", ectx), "fixed")


def test_cylinder_outside_stored_window(baseline_pressure):
    ctx, v, sigma = baseline_pressure
    with pytest.raises(EmptyCylinder):
        estimate_context(ctx, v, 1.2, Cylinder((3.0,), 5.0, 1.0, 0.5), sigma=sigma, beta=-2.0)


def test_kt_bound_on_closed_torus(torus_1d):
    v, sigma = _pressure(torus_1d, 1.5)
    report = corollary_bound_check("C10-kt", torus_1d, v, 1.5, sigma)
    assert report.passed
    assert report.extras["relative_slack_min"] >= -1e-6


def test_kt_bound_rejects_positive_source(torus_1d):
    v, sigma = _pressure(torus_1d, 1.5, nonlinearity="constant", n_params={"a": 1.0})
    with pytest.raises(HypothesisViolated) as excinfo:
        corollary_bound_check("C10-kt", torus_1d, v, 1.5, sigma)
    assert excinfo.value.context["bullet"] == "Sigma <= 0"


def test_corollary_exponent_range(torus_1d):
    v, sigma = _pressure(torus_1d, 2.5, t_end=0.02)
    with pytest.raises(ExponentOutOfRange):
        corollary_bound_check("C10-kt", torus_1d, v, 2.5, sigma)


def test_superflow_constant():
    assert superflow_constant(0.0, 0.3, 5.0, 1.5, 3.0) == pytest.approx(0.3)
    assert superflow_constant(1.0, 0.0, 4.0, 1.5, 3.0) == pytest.approx(1.5 * 2.0 * 2.0)


def test_liouville_rhs_decays_with_radius():
    radii = np.array([10.0, 100.0])
    values = liouville_rhs(np.array([1.0, 1.0]), radii, -1.0)
    assert values[1] < values[0]


def test_pressure_scales_with_u(baseline_pressure):
    ctx, v, _ = baseline_pressure
    u = SpaceTimeField(v.chart, v.times, u_from_pressure(v.values, 1.2))
    for lam in (0.5, 3.0):
        scaled = pressure_transform(SpaceTimeField(u.chart, u.times, lam * u.values), 1.2)
        assert np.allclose(scaled.values, lam**0.2 * v.values, rtol=1e-12)


def test_beta_midpoint_lies_inside_the_interval():
    rng = np.random.default_rng(7)
    for m in rng.uniform(1.0, 12.0, 100):
        p = 1 + rng.uniform(0.02, 0.98) * (t2_limit(m) - 1)
        span = beta_admissible_range(p, m)
        assert span.beta1 < span.midpoint < span.beta2
        b = (2 - p) / (p - 1)
        assert span.midpoint**2 + b * span.midpoint + m / 2 < 0


def _local_context(baseline_pressure, k=0.0, h=0.0):
    ctx, v, sigma = baseline_pressure
    cylinder = Cylinder((3.0,), float(v.times[-1]), 1.5, 0.08)
    return estimate_context(ctx, v, 1.2, cylinder, sigma=sigma, k=k, h=h, beta=-2.0)


@pytest.mark.parametrize("theorem", ["T2-local", "T2-global"])
def test_rhs_grows_with_curvature_constants(baseline_pressure, theorem):
    base = hsz_rhs(theorem, _local_context(baseline_pressure)).rhs
    for k, h in ((0.5, 0.0), (0.0, 0.5), (0.5, 0.5), (2.0, 1.0)):
        assert np.all(hsz_rhs(theorem, _local_context(baseline_pressure, k, h)).rhs >= base)


def test_rhs_grows_with_M_and_sigma_x(baseline_pressure):
    ectx = _local_context(baseline_pressure, k=0.3, h=0.2)
    base = hsz_rhs("T2-local", ectx).rhs
    ectx.v = ectx.v * 2.0
    assert np.all(hsz_rhs("T2-local", ectx).rhs >= base)
    ectx.v = ectx.v / 2.0
    previous = base
    for level in (0.1, 1.0, 10.0):
        ectx.sigma_x_norm = np.full_like(ectx.v, level)
        rhs = hsz_rhs("T2-local", ectx).rhs
        assert np.all(rhs >= previous)
        previous = rhs


def test_term_toggles(baseline_pressure):
    report = hsz_rhs("T2-local", _local_context(baseline_pressure))
    breakdown = report.breakdown
    assert np.all(breakdown["sigma_x"] == 0.0)
    assert np.all(breakdown["sigma_v"] == 0.0)
    assert np.all(breakdown["sqrt_h"] == 0.0)
    assert np.all(breakdown["time"] > 0.0)
    M = report.argsup["M"]
    assert np.allclose(breakdown["curvature"], M ** (1 - (-2.0) / 2) / 1.5, rtol=1e-12)


def test_t6_static_calibrates_then_passes_fixed(torus_1d):
    v, sigma = _pressure(torus_1d, 1.3)
    cylinder = Cylinder((3.0,), float(v.times[-1]), 1.5, 0.08)
    ectx = estimate_context(torus_1d, v, 1.3, cylinder, sigma=sigma)
    report = verify_estimate(ectx, hsz_rhs("T6-static", ectx), "calibrate")
    assert np.isfinite(report.c_star) and report.c_star > 0
    assert verify_estimate(ectx, hsz_rhs("T6-static", ectx), "fixed", report.c_star).passed
    assert not verify_estimate(ectx, hsz_rhs("T6-static", ectx), "fixed", report.c_star * 0.5).passed
