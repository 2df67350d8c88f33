# Routers/experiment.py
import logging
import math
from typing import List

from fastapi import APIRouter, Depends, HTTPException
from sqlalchemy.orm import Session

import models, schemas
from database import engine, Base, SessionLocal
from Services.errors import ConfigError, DataError, FairSSLError, InfeasibleConstraintError
from Services.harness import run_baselines, run_decomposition, run_sweep

logger = logging.getLogger(__name__)

# Create tables if they don't exist
Base.metadata.create_all(bind=engine)

router = APIRouter(
    prefix="/experiment",
    tags=["Experiments"]
)


# Dependency: database session
def get_db():
    try:
        db = SessionLocal()
        yield db
    finally:
        db.close()


def _json_safe(row):
    # NaN is not valid JSON; failed cells come back as null
    return {
        key: None if isinstance(value, float) and math.isnan(value) else value
        for key, value in row.model_dump(mode="python").items()
    }


def _status_code(error: FairSSLError):
    if isinstance(error, InfeasibleConstraintError):
        return 422
    if isinstance(error, (ConfigError, DataError)):
        return 400
    return 500


def _run(kind, runner, cfg: schemas.ExperimentConfig, db: Session):
    run = models.ExperimentRun(kind=kind, config=cfg.model_dump(mode="json"), status="running")
    db.add(run)
    db.commit()
    db.refresh(run)

    try:
        rows = [_json_safe(row) for row in runner(cfg)]
    except FairSSLError as e:
        logger.warning("%s run %d failed: %s", kind, run.id, e)
        run.status = "failed"
        db.commit()
        raise HTTPException(status_code=_status_code(e), detail=str(e))
    except Exception as e:
        logger.exception("%s run %d crashed", kind, run.id)
        run.status = "failed"
        db.commit()
        raise HTTPException(status_code=500, detail=f"{kind} run failed: {e}")

    run.results = [models.ResultRecord(payload=row) for row in rows]
    run.status = "ok"
    db.commit()
    db.refresh(run)
    return schemas.RunOut(run_id=run.id, kind=run.kind, status=run.status, rows=rows)


# --------------------- RUN EXPERIMENTS ---------------------
@router.post("/sweep", response_model=schemas.RunOut)
def sweep(cfg: schemas.ExperimentConfig, db: Session = Depends(get_db)):
    """c-grid x unlabeled-size x seed sweep with one aggregate row per (c, size)."""
    return _run("sweep", run_sweep, cfg, db)


@router.post("/baseline", response_model=schemas.RunOut)
def baseline(cfg: schemas.ExperimentConfig, db: Session = Depends(get_db)):
    return _run("baseline", run_baselines, cfg, db)


@router.post("/decompose", response_model=schemas.RunOut)
def decompose(cfg: schemas.ExperimentConfig, db: Session = Depends(get_db)):
    return _run("decompose", run_decomposition, cfg, db)


# --------------------- STORED RUNS ---------------------
@router.get("/runs", response_model=List[schemas.RunSummary])
def list_runs(db: Session = Depends(get_db)):
    return db.query(models.ExperimentRun).order_by(models.ExperimentRun.id).all()


@router.get("/runs/{run_id}", response_model=schemas.RunOut)
def get_run(run_id: int, db: Session = Depends(get_db)):
    run = db.query(models.ExperimentRun).filter(models.ExperimentRun.id == run_id).first()
    if not run:
        raise HTTPException(status_code=404, detail="Run not found")
    return schemas.RunOut(
        run_id=run.id,
        kind=run.kind,
        status=run.status,
        rows=[record.payload for record in run.results],
    )
