from fastapi import FastAPI, HTTPException, Depends, BackgroundTasks
from fastapi.security import HTTPBearer, HTTPAuthorizationCredentials
from fastapi.middleware.cors import CORSMiddleware
import logging
import uuid
from datetime import datetime
from typing import List, Optional

from pydantic import ValidationError

from ..core.config import settings
from ..core.database import get_db, get_run, list_runs, record_run, run_counts
from ..harness.experiment import run_experiment
from .models import ExperimentConfig, ExperimentReport, RunAccepted, RunSummary

logger = logging.getLogger(__name__)

app = FastAPI(title="JustDense Lab Results API", version="1.0.0")
security = HTTPBearer()

# CORS middleware
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


def verify_token(credentials: HTTPAuthorizationCredentials = Depends(security)):
    if credentials.credentials != settings.API_SECRET_KEY:
        raise HTTPException(status_code=401, detail="Invalid authentication token")
    return credentials.credentials


def execute_run(config: ExperimentConfig, run_id: str):
    """Background task body; failures are already recorded on the run"""
    try:
        run_experiment(config, echo={key: str(value) for key, value in config.model_dump(mode="json").items()},
                       run_id=run_id)
    except Exception as e:
        logger.error(f"Background run {run_id} failed: {e}")


@app.get("/health")
async def health_check():
    """Health check endpoint"""
    return {"status": "healthy", "timestamp": datetime.utcnow()}


@app.get("/experiments", response_model=List[RunSummary])
async def get_experiments(
        status: Optional[str] = None,
        limit: int = 100,
        token: str = Depends(verify_token),
        db=Depends(get_db)
):
    """Summaries of recorded runs, newest first"""
    return [RunSummary.model_validate(run, from_attributes=True) for run in list_runs(db, status, limit)]


@app.get("/experiments/{run_id}", response_model=ExperimentReport)
async def get_experiment(run_id: str, token: str = Depends(verify_token), db=Depends(get_db)):
    """Full report of one run"""
    run = get_run(db, run_id)
    if run is None:
        raise HTTPException(status_code=404, detail=f"Unknown run {run_id}")
    if not run.report:
        raise HTTPException(status_code=409, detail=f"Run {run_id} is {run.status}; no report yet")
    try:
        return ExperimentReport.model_validate_json(run.report)
    except ValidationError as e:
        raise HTTPException(status_code=500, detail=f"Stored report is unreadable: {str(e)}")


@app.post("/experiments", response_model=RunAccepted, status_code=202)
async def create_experiment(
        config: ExperimentConfig,
        background_tasks: BackgroundTasks,
        token: str = Depends(verify_token),
        db=Depends(get_db)
):
    """Queue an Orig-vs-JD comparison"""
    if config.data == "csv":
        raise HTTPException(status_code=400, detail="CSV data is only accepted from the command line")
    run_id = uuid.uuid4().hex[:12]
    try:
        record_run(db, run_id, template=config.template, mixer=config.mixer, task=config.task.value,
                   seed=config.seed, status="queued", created_at=datetime.utcnow())
    except Exception as e:
        db.rollback()
        raise HTTPException(status_code=500, detail=f"Database error: {str(e)}")
    background_tasks.add_task(execute_run, config, run_id)
    logger.info(f"Queued run {run_id} ({config.template})")
    return RunAccepted(run_id=run_id)


@app.get("/stats")
async def get_stats(token: str = Depends(verify_token), db=Depends(get_db)):
    """Run counts by status and template"""
    try:
        counts = run_counts(db)
        return {**counts, "total_runs": sum(counts["by_status"].values()), "timestamp": datetime.utcnow()}
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Error getting stats: {str(e)}")
