import logging
from typing import Dict, Optional

from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import sessionmaker

from ..config import DATABASE_URL
from .models import Base

logger = logging.getLogger(__name__)

_engines: Dict[str, Engine] = {}


def get_engine(url: Optional[str] = None) -> Optional[Engine]:
    # Nothing is stored when neither --db nor DATABASE_URL is given
    url = url or DATABASE_URL
    if not url:
        return None
    if url not in _engines:
        engine = create_engine(url, echo=False)  # echo=True for debugging
        Base.metadata.create_all(engine)
        _engines[url] = engine
        logger.info(f"Results store ready at {engine.url.render_as_string(hide_password=True)}")
    return _engines[url]


def get_db_session(url: Optional[str] = None):
    engine = get_engine(url)
    if engine is None:
        raise RuntimeError("No results store configured, set DATABASE_URL or pass --db")
    db = sessionmaker(bind=engine)()
    try:
        yield db
    finally:
        db.close()
