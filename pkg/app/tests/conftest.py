import json

import numpy as np
import pytest

from app.lab.geometry import GeometryContext
from app.models.models import Chart

TWO_PI = 2 * np.pi


@pytest.fixture
def torus_1d():
    chart = Chart(((0.0, TWO_PI),), (True,), (64,))
    return GeometryContext.from_catalog(chart, "flat", "zero", 2.0)


@pytest.fixture
def torus_2d():
    chart = Chart(((0.0, TWO_PI), (0.0, TWO_PI)), (True, True), (32, 32))
    return GeometryContext.from_catalog(chart, "flat", "zero", 3.0)


@pytest.fixture
def lab_dirs(tmp_path, monkeypatch):
    """Run and golden directories redirected into tmp_path"""
    monkeypatch.setenv("LAB_OUTPUT_DIR", str(tmp_path / "runs"))
    monkeypatch.setenv("LAB_GOLDEN_DIR", str(tmp_path / "goldens"))
    return tmp_path


@pytest.fixture
def write_scenario(tmp_path):
    def _write(data, name="scenario.json"):
        path = tmp_path / name
        path.write_text(json.dumps(data, indent=2), encoding="utf-8")
        return path

    return _write


@pytest.fixture
def small_baseline():
    """Baseline torus scenario on a coarse grid"""
    return {
        "name": "small-baseline",
        "seed": 3,
        "geometry": {"metric": "flat", "m": 2.0, "extents": [[0.0, TWO_PI]], "periodic": [True], "resolution": 32},
        "solver": {
            "p": 1.2,
            "initial": "static-sine",
            "initial_params": {"base": 2.0, "amp": 0.5},
            "t_end": 0.1,
            "stride": 4,
        },
        "estimates": [{"name": "t2-static", "theorem": "T2-static", "x0": [3.0], "R": 1.5, "T": 0.08}],
        "lemmas": [{"name": "mass", "kind": "mass"}, {"name": "curvature", "kind": "curvature"}],
    }
