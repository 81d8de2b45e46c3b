"""
HTTP surface: catalog, validation, runs and the run history
"""

import pytest
from fastapi.testclient import TestClient
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker

from app.api.main import app
from app.models.database import get_db, init_db


@pytest.fixture
def client(tmp_path, lab_dirs):
    engine = create_engine(f"sqlite:///{tmp_path / 'runs.db'}", connect_args={"check_same_thread": False})
    init_db(bind=engine)
    Session = sessionmaker(autocommit=False, autoflush=False, bind=engine)

    def override_get_db():
        db = Session()
        try:
            yield db
        finally:
            db.close()

    app.dependency_overrides[get_db] = override_get_db
    yield TestClient(app)
    app.dependency_overrides.clear()


def test_root(client):
    response = client.get("/")
    assert response.status_code == 200
    body = response.json()
    assert body["service"] == "pme-lab"
    assert "numpy" in body["versions"]


def test_catalog(client):
    body = client.get("/api/catalog").json()
    assert "flat" in body["metrics"]
    assert "one-plus-square" in body["nonlinearities"]


def test_validate(client, small_baseline):
    body = client.post("/api/validate", json=small_baseline).json()
    assert body["valid"]
    assert body["checks"] == 3

    small_baseline["solver"]["p"] = 1.4
    body = client.post("/api/validate", json=small_baseline).json()
    assert not body["valid"]
    assert "t2-exponent-range" in body["errors"][0]


def test_run_records_history(client, small_baseline):
    response = client.post("/api/run", json=small_baseline)
    assert response.status_code == 200
    body = response.json()
    assert body["passed"]
    assert set(body["verdicts"]) == {"t2-static", "mass", "curvature"}

    runs = client.get("/api/runs").json()
    assert len(runs) == 1
    assert runs[0]["scenario"] == "small-baseline"
    assert runs[0]["checks"] == 3


def test_run_rejects_invalid_scenario(client, small_baseline):
    small_baseline["solver"]["p"] = 0.5
    response = client.post("/api/run", json=small_baseline)
    assert response.status_code == 422
    assert "slow-diffusion" in response.json()["detail"]
