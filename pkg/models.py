# models.py
from datetime import datetime, timezone

from sqlalchemy import Column, DateTime, ForeignKey, Integer, JSON, String
from sqlalchemy.orm import relationship

from database import Base


def _utcnow():
    return datetime.now(timezone.utc)


class ExperimentRun(Base):
    __tablename__ = "experiment_run"

    id = Column(Integer, primary_key=True, index=True)
    kind = Column(String, nullable=False)  # sweep | baseline | decompose
    config = Column(JSON, nullable=False)
    status = Column(String, nullable=False, default="running")
    created_at = Column(DateTime(timezone=True), nullable=False, default=_utcnow)

    results = relationship("ResultRecord", back_populates="run", cascade="all, delete", order_by="ResultRecord.id")


class ResultRecord(Base):
    __tablename__ = "result_record"

    id = Column(Integer, primary_key=True, index=True)
    payload = Column(JSON, nullable=False)

    run_id = Column(Integer, ForeignKey("experiment_run.id"), nullable=False)
    run = relationship("ExperimentRun", back_populates="results")
