"""
Geometry kernel: charts, curvature certificates and model distances
"""

import numpy as np
import pytest

from app.lab.errors import ConfigError, OutOfChart, UnsupportedModel
from app.lab.geometry import (
    GeometryContext,
    ModelDistance,
    Region,
    certify_lower_bounds,
    curvature_frame,
    curvature_on_grid,
    model_for,
)
from app.models.models import Chart


def test_chart_rejects_coarse_grid():
    with pytest.raises(ConfigError) as excinfo:
        Chart(((0.0, 1.0),), (False,), (4,))
    assert "[rule: chart-resolution]" in str(excinfo.value)


def test_chart_spacing_depends_on_topology():
    periodic = Chart(((0.0, 1.0),), (True,), (10,))
    bounded = Chart(((0.0, 1.0),), (False,), (11,))
    assert periodic.spacing[0] == pytest.approx(0.1)
    assert bounded.spacing[0] == pytest.approx(0.1)
    assert bounded.interior.sum() == 11 - 4


def test_flat_torus_certificate_is_zero(torus_1d):
    report = certify_lower_bounds(torus_1d, Region(0.0, 1.0, n_times=3))
    assert report.k == 0.0
    assert report.h == 0.0
    assert len(report.times) == 3


def test_hyperbolic_plane_needs_unit_k():
    chart = Chart(((-1.0, 1.0), (0.5, 2.0)), (False, False), (24, 24))
    ctx = GeometryContext.from_catalog(chart, "hyperbolic", "zero", np.inf)
    report = certify_lower_bounds(ctx, Region(0.0, 0.0))
    assert report.k == pytest.approx(1.0, abs=1e-8)


def test_round_sphere_is_nonnegatively_curved():
    chart = Chart(((0.2, np.pi - 0.2), (0.0, 2 * np.pi)), (False, True), (24, 24))
    ctx = GeometryContext.from_catalog(chart, "round-sphere", "zero", np.inf)
    report = certify_lower_bounds(ctx, Region(0.0, 0.0))
    assert report.k == 0.0
    assert float(np.min(report.lambda_min)) == pytest.approx(1.0, abs=1e-8)


def test_shrinking_conformal_metric_reports_h():
    chart = Chart(((0.0, 2 * np.pi), (0.0, 2 * np.pi)), (True, True), (16, 16))
    ctx = GeometryContext.from_catalog(chart, "conformal-flat", "zero", np.inf, {"rate": -0.5})
    report = certify_lower_bounds(ctx, Region(0.0, 1.0, n_times=2))
    assert report.h == pytest.approx(0.5, abs=1e-10)
    assert report.k == pytest.approx(0.0, abs=1e-10)


def test_curvature_frame_columns(torus_2d):
    report = certify_lower_bounds(torus_2d, Region(0.0, 0.0))
    frame = curvature_frame(report)
    assert list(frame.columns) == ["x1", "x2", "t", "lambda_min", "k_local", "h_local"]
    assert len(frame) == 32 * 32


def test_region_outside_chart(torus_1d):
    with pytest.raises(OutOfChart):
        certify_lower_bounds(torus_1d, Region(0.0, 0.0, box=((-1.0, 1.0),)))


def test_flat_distance_wraps_on_torus(torus_1d):
    model = model_for(torus_1d, [0.1])
    rho, drho = model(np.array([[6.2]]), 0.0)
    assert rho[0] == pytest.approx(0.1 + (2 * np.pi - 6.2))
    assert drho[0] == 0.0


def test_unsupported_model():
    with pytest.raises(UnsupportedModel):
        ModelDistance("conformal-periodic", (0.0,))


def test_lambda_min_grows_with_m():
    chart = Chart(((0.0, 2 * np.pi), (0.0, 2 * np.pi)), (True, True), (16, 16))
    lams = []
    for m in (2.5, 3.0, 6.0, np.inf):
        ctx = GeometryContext.from_catalog(chart, "flat", "sine", m, potential_params={"amplitude": 0.4})
        lams.append(curvature_on_grid(ctx)["lambda_min"])
    for lower, upper in zip(lams, lams[1:]):
        assert np.all(upper >= lower - 1e-12)
    assert np.any(lams[-1] > lams[0] + 1e-3)


@pytest.mark.parametrize(
    "model, low, high",
    [
        (ModelDistance("flat", (0.0, 0.0), periods=(2 * np.pi, 2 * np.pi)), (0.0, 0.0), (2 * np.pi, 2 * np.pi)),
        (ModelDistance("round-sphere", (1.0, 0.0)), (0.1, 0.0), (np.pi - 0.1, 2 * np.pi)),
        (ModelDistance("hyperbolic", (0.0, 1.0)), (-2.0, 0.2), (2.0, 3.0)),
    ],
)
def test_model_distance_triangle_inequality(model, low, high):
    rng = np.random.default_rng(11)
    x, y, z = (rng.uniform(low, high, (200, 2)) for _ in range(3))
    xy = model.distance(x, y, 0.0)[0]
    yz = model.distance(y, z, 0.0)[0]
    xz = model.distance(x, z, 0.0)[0]
    assert np.all(xz <= xy + yz + 1e-9)


def test_model_distance_shrinks_no_faster_than_h():
    chart = Chart(((0.0, 2 * np.pi), (0.0, 2 * np.pi)), (True, True), (16, 16))
    ctx = GeometryContext.from_catalog(chart, "conformal-flat", "zero", np.inf, {"rate": -0.5})
    h = certify_lower_bounds(ctx, Region(0.0, 1.0, n_times=3)).h
    model = model_for(ctx, [1.0, 1.0])
    for t in (0.0, 0.4, 1.0):
        rho, drho = model(chart.points, t)
        assert np.all(drho >= -h * rho - 1e-9)
