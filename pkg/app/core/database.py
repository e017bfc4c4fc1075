from sqlalchemy import create_engine, Column, Integer, String, DateTime, Text, Float, func
from sqlalchemy.orm import declarative_base, sessionmaker, Session
from datetime import datetime
from typing import Dict, List, Optional

from .config import settings

_connect_args = {"check_same_thread": False} if settings.DATABASE_URL.startswith("sqlite") else {}
engine = create_engine(settings.DATABASE_URL, connect_args=_connect_args)
SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)
Base = declarative_base()


class ExperimentRun(Base):
    __tablename__ = "experiment_runs"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(String, unique=True, index=True)
    template = Column(String, index=True)
    mixer = Column(String, nullable=True)
    task = Column(String)
    seed = Column(Integer)
    status = Column(String, index=True)  # queued, running, complete, failed
    orig_metric = Column(Float, nullable=True)
    jd_metric = Column(Float, nullable=True)
    report = Column(Text, nullable=True)  # ExperimentReport JSON
    error = Column(Text, nullable=True)
    created_at = Column(DateTime, default=datetime.utcnow)
    updated_at = Column(DateTime, default=datetime.utcnow)


# Create tables
Base.metadata.create_all(bind=engine)


def get_db():
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()


def record_run(db: Session, run_id: str, **fields) -> ExperimentRun:
    """Insert or update one run row"""
    run = db.query(ExperimentRun).filter(ExperimentRun.run_id == run_id).first()
    if run is None:
        run = ExperimentRun(run_id=run_id)
        db.add(run)
    for key, value in fields.items():
        setattr(run, key, value)
    run.updated_at = datetime.utcnow()
    db.commit()
    db.refresh(run)
    return run


def list_runs(db: Session, status: Optional[str] = None, limit: int = 100) -> List[ExperimentRun]:
    query = db.query(ExperimentRun)
    if status:
        query = query.filter(ExperimentRun.status == status)
    return query.order_by(ExperimentRun.created_at.desc()).limit(limit).all()


def get_run(db: Session, run_id: str) -> Optional[ExperimentRun]:
    return db.query(ExperimentRun).filter(ExperimentRun.run_id == run_id).first()


def run_counts(db: Session) -> Dict[str, Dict[str, int]]:
    by_status = db.query(ExperimentRun.status, func.count(ExperimentRun.id)).group_by(ExperimentRun.status).all()
    by_template = db.query(ExperimentRun.template, func.count(ExperimentRun.id)).group_by(ExperimentRun.template).all()
    return {"by_status": dict(by_status), "by_template": dict(by_template)}
