"""
Porous medium solver: configuration rules, conservation, the ODE reduction and Barenblatt
"""

import numpy as np
import pytest

from app.lab.errors import ConfigError, NonPositiveInput, NonPositiveV, ShapeMismatch
from app.lab.solver import (
    ManufacturedCase,
    NonlinearitySpec,
    SolverConfig,
    barenblatt_error,
    initial_field,
    manufacture,
    mass_drift,
    ode_reduction_error,
    solve,
    time_derivative,
)
from app.lab import catalog
from app.models.models import ScalarField


def _run(ctx, profile="static-sine", params=None, nonlinearity="zero", n_params=None, **cfg):
    config = SolverConfig(**{"p": 2.0, "t_end": 0.05, "stepper": "rk4", "stride": 4, **cfg})
    spec = NonlinearitySpec(nonlinearity, n_params, ctx.n)
    u0 = initial_field(ctx, profile, params or {"base": 2.0, "amp": 0.5}, config.t_start, config.floor)
    return solve(ctx, u0, spec, config)


def test_config_rejects_fast_diffusion():
    with pytest.raises(ConfigError) as excinfo:
        SolverConfig(p=1.0)
    assert "slow-diffusion" in str(excinfo.value)


def test_config_rejects_unknown_stepper():
    with pytest.raises(ConfigError):
        SolverConfig(p=2.0, stepper="euler")


def test_initial_data_below_floor(torus_1d):
    spec = NonlinearitySpec("zero", {}, 1)
    u0 = ScalarField(torus_1d.chart, np.zeros(torus_1d.chart.shape))
    with pytest.raises(NonPositiveInput):
        solve(torus_1d, u0, spec, SolverConfig(p=2.0, t_end=0.1))


def test_frames_are_uniform_and_end_at_t_end(torus_1d):
    result = _run(torus_1d)
    times = result.u.times
    assert times[0] == 0.0
    assert times[-1] == 0.05
    assert np.allclose(np.diff(times), times[1] - times[0])
    assert result.floor_activations == 0


def test_mass_is_conserved_on_the_torus(torus_1d):
    result = _run(torus_1d, p=1.5)
    assert mass_drift(torus_1d, result) <= 1e-8


def test_constant_data_follows_the_ode(torus_1d):
    result = _run(torus_1d, profile="constant", params={"value": 1.0}, nonlinearity="one-plus-square")
    stats = ode_reduction_error(torus_1d, result)
    assert stats["ode_error"] <= 1e-6
    assert stats["spatial_spread"] <= 1e-10


def test_ode_reduction_needs_autonomous_source(torus_1d):
    n_params = {"a": {"tag": "sine", "amp": 0.1, "base": 1.0}}
    result = _run(torus_1d, profile="constant", params={"value": 1.0}, nonlinearity="constant", n_params=n_params)
    with pytest.raises(ConfigError):
        ode_reduction_error(torus_1d, result)


def test_nonlinearity_partials():
    spec = NonlinearitySpec("one-plus-square", {"a": 1.0, "b": 2.0}, 1)
    points = np.zeros((3, 1))
    u = np.array([0.5, 1.0, 2.0])
    assert spec(points, 0.0, u) == pytest.approx(1 + 2 * u**2)
    assert spec.partial_u(points, 0.0, u) == pytest.approx(4 * u)
    assert spec.autonomous


def test_unknown_nonlinearity():
    with pytest.raises(ConfigError):
        NonlinearitySpec("cubic", {}, 1)


def test_manufactured_sigma_matches_grid_assembly(torus_1d):
    case = ManufacturedCase(torus_1d, catalog.profile_expression("static-sine", 1, {"amp": 0.5}), 2.0)
    exact = case.sigma(torus_1d.chart.points, 0.0)
    assert np.max(np.abs(case.sigma_discrete(0.0) - exact)) < 1e-5


def test_manufactured_pressure_must_stay_positive(torus_1d):
    with pytest.raises(NonPositiveV):
        manufacture(torus_1d, "sine", 2.0)


def test_time_derivative_needs_six_frames():
    with pytest.raises(ShapeMismatch):
        time_derivative(np.zeros((5, 8)), 0.1)


def test_time_derivative_of_quadratic():
    t = np.linspace(0.0, 1.0, 11)
    frames = np.repeat((t**2)[:, None], 4, axis=1)
    derivative = time_derivative(frames, t[1] - t[0])
    assert np.allclose(derivative[:, 0], 2 * t, atol=1e-10)


def test_barenblatt_profile():
    stats = barenblatt_error(p=2.0, resolution=512)
    assert stats["l1_error"] <= 0.02
