"""
Catalog expressions and the pointwise geometry operators built on them
"""

import numpy as np
import pytest

from app.lab import catalog
from app.lab.errors import ConfigError
from app.lab.geometry import (
    GeometryContext,
    bakry_emery_ricci,
    christoffel,
    curvature_on_grid,
    jacobi_eigenvalues,
)
from app.models.models import Chart


def _hyperbolic():
    chart = Chart(((-1.0, 1.0), (0.5, 2.0)), (False, False), (16, 16))
    return GeometryContext.from_catalog(chart, "hyperbolic", "zero", np.inf)


def test_listing_names_every_family():
    listing = catalog.catalog_listing()
    assert set(listing) == {"metrics", "potentials", "profiles", "nonlinearities", "time_weights", "gamma_aux"}
    assert "round-sphere" in listing["metrics"]


def test_unknown_tags():
    with pytest.raises(ConfigError):
        catalog.time_weight("linear")
    with pytest.raises(ConfigError):
        catalog.gamma_aux("cubic", 2.0)


def test_kt_time_weight():
    zeta = catalog.time_weight("kt", {"kappa": 0.5})
    t = np.array([0.0, 1.0, 2.0])
    assert zeta(t) == pytest.approx(t / (1 + t))
    assert zeta.derivative(t) == pytest.approx(1 / (1 + t) ** 2)


def test_power_gamma_derivatives():
    gamma = catalog.gamma_aux("power", 2.0)
    v = np.array([0.5, 1.0, 3.0])
    assert gamma(v) == pytest.approx(v**2 / 4)
    assert gamma.d1(v) == pytest.approx(v / 2)
    assert gamma.d2(v) == pytest.approx(np.full(3, 0.5))


def test_tabulated_gamma_reproduces_a_cubic():
    v = np.linspace(0.0, 2.0, 9)
    gamma = catalog.gamma_aux("tabulated", 2.0, {"table": np.column_stack([v, v**2]).tolist()})
    assert gamma(1.3) == pytest.approx(1.69, abs=1e-3)
    with pytest.raises(ConfigError):
        catalog.gamma_aux("tabulated", 2.0, {"table": [[0.0, 0.0], [1.0, 1.0]]})


def test_jacobi_matches_lapack():
    rng = np.random.default_rng(4)
    a = rng.standard_normal((20, 4, 4))
    a = a + np.swapaxes(a, 1, 2)
    assert np.allclose(jacobi_eigenvalues(a), np.linalg.eigvalsh(a), atol=1e-12)


def test_hyperbolic_pointwise_curvature():
    ctx = _hyperbolic()
    ric = bakry_emery_ricci(ctx, [0.0, 1.0], 0.0)
    assert ric == pytest.approx(-np.eye(2), abs=1e-12)
    gamma = christoffel(ctx, [0.0, 1.0], 0.0)
    assert gamma[0, 0, 1] == pytest.approx(-1.0)
    assert gamma[1, 0, 0] == pytest.approx(1.0)


def test_curvature_on_grid_shapes():
    grid = curvature_on_grid(_hyperbolic())
    assert grid["christoffel"].shape == (16, 16, 2, 2, 2)
    assert grid["ric_fm"].shape == (16, 16, 2, 2)
    assert np.allclose(grid["lambda_min"], -1.0, atol=1e-8)


def test_sphere_christoffel():
    chart = Chart(((0.2, np.pi - 0.2), (0.0, 2 * np.pi)), (False, True), (16, 16))
    ctx = GeometryContext.from_catalog(chart, "round-sphere", "zero", np.inf)
    assert christoffel(ctx, [np.pi / 4, 0.0], 0.0)[1, 0, 1] == pytest.approx(1.0)
    assert np.allclose(christoffel(ctx, [np.pi / 2, 0.0], 0.0), 0.0, atol=1e-12)


def test_require_tag():
    assert catalog.require_tag("kt", catalog.TIME_WEIGHTS, "time weight") == "kt"
    with pytest.raises(ValueError, match=r"\[rule: catalog-tag\]"):
        catalog.require_tag("linear", catalog.TIME_WEIGHTS, "time weight")
