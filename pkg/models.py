import logging
from datetime import datetime

from sqlalchemy import Column, DateTime, Float, Integer, String, Text, select

from extensions import Base, get_session

logger = logging.getLogger(__name__)


class TrainingRun(Base):
    __tablename__ = "training_runs"

    id = Column(Integer, primary_key=True)
    fingerprint = Column(String(64), nullable=False, index=True)
    seed = Column(Integer, nullable=False)
    iterations = Column(Integer, nullable=False)
    final_l_diff = Column(Float, nullable=True)
    final_l_freq = Column(Float, nullable=True)
    checkpoint_path = Column(Text, nullable=True)
    timestamp = Column(DateTime, nullable=False, default=datetime.utcnow)


class AblationCell(Base):
    __tablename__ = "ablation_cells"

    id = Column(Integer, primary_key=True)
    matrix = Column(String(64), nullable=False)
    cell = Column(String(128), nullable=False)
    seed = Column(Integer, nullable=False)
    fingerprint = Column(String(64), nullable=False)
    status = Column(String(10), nullable=False)
    accuracy = Column(Float, nullable=True)
    error = Column(Text, nullable=True)
    timestamp = Column(DateTime, nullable=False, default=datetime.utcnow)


def record(row, url=None):
    """Best-effort insert; ledger problems are logged and never propagate."""
    session = None
    try:
        session = get_session(url)
        session.add(row)
        session.commit()
        return True
    except Exception as e:
        if session is not None and session.is_active:
            session.rollback()
        logger.error(f"Error writing {type(row).__name__} to run ledger: {e}")
        return False
    finally:
        if session is not None:
            session.close()


def completed_cells(matrix, url=None):
    """{(cell, seed, fingerprint): accuracy} for cells that already succeeded."""
    session = None
    try:
        session = get_session(url)
        rows = session.execute(select(AblationCell).where(AblationCell.matrix == matrix,
                                                          AblationCell.status == "ok")).scalars()
        return {(r.cell, r.seed, r.fingerprint): r.accuracy for r in rows}
    except Exception as e:
        logger.error(f"Error reading run ledger, resuming from scratch: {e}")
        return {}
    finally:
        if session is not None:
            session.close()
