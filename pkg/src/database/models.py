from datetime import datetime, timezone

from sqlalchemy import Column, DateTime, Float, ForeignKey, Integer, String
from sqlalchemy.orm import declarative_base, relationship

Base = declarative_base()


def _now() -> datetime:
    return datetime.now(timezone.utc)


"""
EvaluationRun model

input_path, gt_path, mesh_path - evaluated prediction, ground truth and optional mesh;
cd, hd - Chamfer and Hausdorff distance, x10^3, in the ground truth's normalized frame;
p2f_mean, p2f_max - point-to-surface distance, x10^3, empty without a mesh.
"""
class EvaluationRun(Base):
    __tablename__ = "evaluation_runs"

    id = Column(Integer, primary_key=True, index=True)
    created_at = Column(DateTime, default=_now)
    input_path = Column(String(512), nullable=False)
    gt_path = Column(String(512), nullable=False)
    mesh_path = Column(String(512))
    cd = Column(Float, nullable=False)
    hd = Column(Float, nullable=False)
    p2f_mean = Column(Float)
    p2f_max = Column(Float)


"""
DiagnosticRun model

source - 'planted' for the planted-outlier benchmark, otherwise the input path;
repeats - seeds averaged per row.

Association: DiagnosticRun with DiagnosticRow in one-to-many
"""
class DiagnosticRun(Base):
    __tablename__ = "diagnostic_runs"

    id = Column(Integer, primary_key=True, index=True)
    created_at = Column(DateTime, default=_now)
    source = Column(String(512), nullable=False)
    resolution = Column(Integer, nullable=False)
    seed = Column(Integer, default=0)
    repeats = Column(Integer, default=1)

    rows = relationship("DiagnosticRow", back_populates="run", cascade="all, delete-orphan")


class DiagnosticRow(Base):
    __tablename__ = "diagnostic_rows"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(Integer, ForeignKey("diagnostic_runs.id"), nullable=False)
    method = Column(String(32), nullable=False)
    multiplier = Column(Float, nullable=False)
    precision = Column(Float, nullable=False)
    missing_rate = Column(Float, nullable=False)
    cell_cd = Column(Float, nullable=False)

    run = relationship("DiagnosticRun", back_populates="rows")
