import logging
from typing import Any, Dict, List, Optional

from fastapi import Depends, FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from sqlalchemy.orm import Session

from app import __version__
from app.lab import catalog, runner
from app.lab.errors import ConfigError, ExponentOutOfRange, LabError
from app.models.database import RunRecord, get_db, init_db, record_run
from app.models.models import RunResponse, RunSummary, ValidateResponse
from app.models.scenario import parse_scenario

logger = logging.getLogger(__name__)

app = FastAPI(title="PME Gradient-Estimate Lab", version=__version__)

# CORS middleware
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


@app.on_event("startup")
def startup():
    init_db()


@app.get("/")
async def root():
    return {"service": "pme-lab", "version": __version__, "versions": runner.versions()}


@app.get("/api/catalog")
async def get_catalog():
    """All catalog tags the scenario files may reference"""
    return catalog.catalog_listing()


@app.post("/api/validate", response_model=ValidateResponse)
async def validate_scenario(scenario: Dict[str, Any]):
    try:
        parsed = parse_scenario(scenario)
        return ValidateResponse(name=parsed.name, valid=True, checks=parsed.n_checks)
    except (ConfigError, ExponentOutOfRange) as e:
        return ValidateResponse(name=str(scenario.get("name", "")), valid=False, checks=0, errors=[str(e)])


@app.post("/api/run", response_model=RunResponse)
def run_scenario(
    scenario: Dict[str, Any],
    seed: Optional[int] = None,
    jobs: int = 1,
    record: bool = True,
    db: Session = Depends(get_db),
):
    """
    Run a scenario posted as JSON; blocks until every check has finished
    """
    try:
        parsed = parse_scenario(scenario)
    except (ConfigError, ExponentOutOfRange) as e:
        raise HTTPException(status_code=422, detail=f"Invalid scenario: {str(e)}")
    try:
        manifest = runner.run_scenario(parsed, runner.canonical_json(scenario), seed=seed, jobs=jobs)
    except LabError as e:
        raise HTTPException(status_code=500, detail=f"Error running scenario: {str(e)}")
    out_dir = runner.run_directory(parsed)
    if record:
        record_run(db, manifest, str(out_dir / "manifest.json"))
    return RunResponse(
        scenario=manifest.scenario,
        scenario_hash=manifest.scenario_hash,
        passed=manifest.passed,
        verdicts=manifest.verdicts,
        artifacts=manifest.artifacts,
        output_dir=str(out_dir),
    )


@app.get("/api/runs", response_model=List[RunSummary])
async def list_runs(limit: int = 50, db: Session = Depends(get_db)):
    try:
        rows = db.query(RunRecord).order_by(RunRecord.id.desc()).limit(limit).all()
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Error fetching runs: {str(e)}")
    return [
        RunSummary(
            id=row.id,
            scenario=row.scenario,
            scenario_hash=row.scenario_hash,
            seed=row.seed,
            passed=row.passed,
            checks=row.n_checks,
            output_dir=row.manifest_path,
            created_at=row.created_at.isoformat() if row.created_at else "",
        )
        for row in rows
    ]


if __name__ == "__main__":
    import uvicorn

    uvicorn.run(app, host="0.0.0.0", port=8000)
