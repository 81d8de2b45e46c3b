"""
Discrete operators against the symbolic oracle
"""

import numpy as np
import pytest

from app.lab.errors import MissingArtifact, ShapeMismatch, UnknownCase
from app.lab.fields import (
    bochner_residual,
    cauchy_schwarz_slack,
    convergence_order,
    export_csv,
    f_laplacian,
    gradient,
    integration_by_parts_defect,
    observed_orders,
    read_dump,
    write_dump,
)
from app.models.models import Chart, ScalarField


def _field(ctx, fn):
    return ScalarField(ctx.chart, fn(ctx.chart.points))


def test_gradient_of_sine(torus_1d):
    w = _field(torus_1d, lambda x: np.sin(x[..., 0]))
    _, grad_sq = gradient(torus_1d, w)
    exact = np.cos(torus_1d.chart.points[..., 0]) ** 2
    assert np.max(np.abs(grad_sq.values - exact)) < 1e-5


def test_laplacian_forms_agree(torus_1d):
    w = _field(torus_1d, lambda x: 2.0 + 0.5 * np.sin(x[..., 0]))
    coefficient = f_laplacian(torus_1d, w).values
    divergence = f_laplacian(torus_1d, w, form="divergence").values
    exact = -0.5 * np.sin(torus_1d.chart.points[..., 0])
    assert np.max(np.abs(coefficient - exact)) < 1e-5
    assert np.max(np.abs(divergence - exact)) < 1e-4


def test_field_must_match_chart(torus_1d):
    with pytest.raises(ShapeMismatch):
        ScalarField(torus_1d.chart, np.zeros(10))


def test_laplacian_order_on_torus():
    report = convergence_order("f_laplacian", "sin-x", [16, 32, 64])
    assert report.order is not None and report.order >= 3.5


def test_gradient_of_linear_field_is_exact():
    report = convergence_order("gradient", "linear-x1", [16, 32])
    assert report.exact
    assert report.summary()["order"] == "exact"


def test_bochner_residual_converges():
    report = convergence_order("bochner_residual", "sin-x1-2d", [16, 32, 64])
    assert report.order >= 1.9


def test_weighted_bochner_slack_is_nonnegative():
    from app.lab.fields import FIELD_CASES

    ctx = FIELD_CASES["weighted-sine"].context(64)
    w = _field(ctx, lambda x: np.sin(x[..., 0]) * np.cos(x[..., 1]))
    _, slack = bochner_residual(ctx, w)
    scale = np.maximum(1.0, np.abs(slack.values))
    assert np.min(slack.values / scale) >= -5e-3


def test_cauchy_schwarz_slack(torus_2d):
    v = _field(torus_2d, lambda x: 2.0 + np.sin(x[..., 0]) * np.cos(x[..., 1]))
    assert np.min(cauchy_schwarz_slack(torus_2d, v).values) >= -1e-10


def test_integration_by_parts_on_closed_chart(torus_2d):
    u = _field(torus_2d, lambda x: np.cos(x[..., 0]) + np.sin(x[..., 1]))
    v = _field(torus_2d, lambda x: np.sin(x[..., 0] + x[..., 1]))
    assert abs(integration_by_parts_defect(torus_2d, u, v)) < 1e-3


def test_observed_orders():
    assert observed_orders([1e-2, 2.5e-3], [16, 32]) == pytest.approx([2.0])


def test_unknown_case():
    with pytest.raises(UnknownCase):
        convergence_order("gradient", "no-such-case", [16, 32])


def test_dump_and_csv(tmp_path):
    chart = Chart(((0.0, 1.0), (0.0, 2.0)), (False, False), (9, 11))
    values = np.arange(99, dtype=float).reshape(9, 11) / 7.0
    path = write_dump(values, tmp_path / "field.bin")
    assert np.array_equal(read_dump(path), values)
    csv = export_csv(ScalarField(chart, values), tmp_path / "field.csv")
    lines = csv.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "x1,x2,value"
    assert len(lines) == 100


def test_missing_dump(tmp_path):
    with pytest.raises(MissingArtifact):
        read_dump(tmp_path / "absent.bin")
