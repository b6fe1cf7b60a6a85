import logging
from typing import Optional

from ..metrics.losses import MetricsReport
from .db_setup import get_db_session, get_engine
from .models import DiagnosticRow, DiagnosticRun, EvaluationRun

logger = logging.getLogger(__name__)


def store_evaluation(report: MetricsReport, input_path: str, gt_path: str, mesh_path: Optional[str] = None, url: Optional[str] = None) -> Optional[int]:
    if get_engine(url) is None:
        return None
    scaled = report.scaled()
    for db in get_db_session(url):
        run = EvaluationRun(
            input_path=input_path,
            gt_path=gt_path,
            mesh_path=mesh_path,
            cd=scaled["cd"],
            hd=scaled["hd"],
            p2f_mean=scaled.get("p2f_mean"),
            p2f_max=scaled.get("p2f_max"),
        )
        db.add(run)
        db.commit()
        logger.info(f"Stored evaluation run {run.id}")
        return run.id


def store_diagnostics(table, source: str, resolution: int, seed: int, repeats: int, url: Optional[str] = None) -> Optional[int]:
    """Persist a diagnostics table (method, multiplier, precision, missing_rate, cell_cd rows)."""
    if get_engine(url) is None:
        return None
    for db in get_db_session(url):
        run = DiagnosticRun(source=source, resolution=resolution, seed=seed, repeats=repeats)
        for row in table.itertuples(index=False):
            run.rows.append(DiagnosticRow(
                method=row.method,
                multiplier=float(row.multiplier),
                precision=float(row.precision),
                missing_rate=float(row.missing_rate),
                cell_cd=float(row.cell_cd),
            ))
        db.add(run)
        db.commit()
        logger.info(f"Stored diagnostic run {run.id} with {len(table)} rows")
        return run.id
