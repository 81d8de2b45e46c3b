import os
from datetime import datetime, timezone

from dotenv import load_dotenv
from sqlalchemy import Boolean, Column, DateTime, Integer, String, create_engine
from sqlalchemy.orm import declarative_base, sessionmaker

load_dotenv()

# Database configuration
DATABASE_URL = os.getenv("DATABASE_URL", "sqlite:///./lab_runs.db")

# Create engine
connect_args = {"check_same_thread": False} if DATABASE_URL.startswith("sqlite") else {}
engine = create_engine(DATABASE_URL, connect_args=connect_args)

# Create session factory
SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)

# Create base class for models
Base = declarative_base()


class RunRecord(Base):
    """One completed scenario run"""

    __tablename__ = "lab_runs"

    id = Column(Integer, primary_key=True, index=True)
    scenario = Column(String(200), index=True, nullable=False)
    scenario_hash = Column(String(64), nullable=False)
    seed = Column(Integer, nullable=False, default=0)
    passed = Column(Boolean, nullable=False)
    n_checks = Column(Integer, nullable=False, default=0)
    manifest_path = Column(String(500), nullable=False)
    created_at = Column(DateTime, default=lambda: datetime.now(timezone.utc))


def init_db(bind=None):
    Base.metadata.create_all(bind=bind or engine)


def get_db():
    """Dependency to get database session"""
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()


def record_run(db, manifest, manifest_path: str) -> RunRecord:
    row = RunRecord(
        scenario=manifest.scenario,
        scenario_hash=manifest.scenario_hash,
        seed=manifest.seed,
        passed=manifest.passed,
        n_checks=len(manifest.verdicts),
        manifest_path=str(manifest_path),
    )
    db.add(row)
    db.commit()
    db.refresh(row)
    return row
