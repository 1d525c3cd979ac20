import logging
import os

from sqlalchemy import create_engine
from sqlalchemy.orm import declarative_base, sessionmaker

logger = logging.getLogger(__name__)

LEDGER_ENV = "FDSM_LEDGER_URL"
DEFAULT_LEDGER_URL = "sqlite:///fdsm_runs.db"

Base = declarative_base()

_engines = {}


def ledger_url(environ=None):
    environ = os.environ if environ is None else environ
    url = environ.get(LEDGER_ENV)
    if not url:  # fallback to SQLite when no ledger database is configured
        logger.debug(f"No {LEDGER_ENV} found, using fallback SQLite: {DEFAULT_LEDGER_URL}")
        return DEFAULT_LEDGER_URL
    if url.startswith("postgres://"):
        # SQLAlchemy only accepts the postgresql:// scheme
        url = url.replace("postgres://", "postgresql://", 1)
        logger.info("Converted ledger URL format for SQLAlchemy")
    return url


def get_session(url=None):
    """Session bound to the ledger database; tables are created on first use of a URL."""
    url = url or ledger_url()
    if url not in _engines:
        engine = create_engine(url, future=True)
        import models  # noqa: F401  registers the ledger tables on Base

        Base.metadata.create_all(engine)
        _engines[url] = sessionmaker(bind=engine, future=True)
        logger.debug(f"ledger tables ready at {url[:10]}...")
    return _engines[url]()
