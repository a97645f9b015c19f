"""
Gestión de la base de datos del registro de corridas (SQLAlchemy):
- Crea engine + scoped_session.
- Activa PRAGMA foreign_keys en SQLite.
- init_db(): crea las tablas de los modelos ORM.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Optional

from sqlalchemy import create_engine, event
from sqlalchemy.engine import Engine
from sqlalchemy.orm import scoped_session, sessionmaker

from src.utils.helpers import _frozen_dir, read_config

DEFAULT_URL = "sqlite:///app_data/runs.db"

logger = logging.getLogger("hdsa.registry")

_engine: Optional[Engine] = None
SessionLocal: Optional[scoped_session] = None


def _safe_sqlite_url(db_url: str) -> str:
    """Si es SQLite con ruta relativa, la resuelve junto al ejecutable o el cwd y crea el directorio."""
    prefix = "sqlite:///"
    if not db_url.startswith(prefix) or db_url == "sqlite:///:memory:":
        return db_url
    path = Path(db_url[len(prefix):])
    if not path.is_absolute():
        exedir = _frozen_dir()
        path = (exedir if exedir is not None else Path.cwd()) / path
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError:
        pass
    return f"sqlite:///{path.resolve().as_posix()}"


def database_url() -> str:
    """HDSA_DATABASE_URL > settings [database] url > SQLite local."""
    env_url = os.getenv("HDSA_DATABASE_URL", "").strip()
    if env_url:
        return env_url
    return read_config().get("database", "url", fallback=DEFAULT_URL)


def get_engine() -> Engine:
    global _engine
    if _engine is not None:
        return _engine

    db_url = _safe_sqlite_url(database_url())
    _engine = create_engine(db_url, future=True, pool_pre_ping=True)

    if _engine.url.get_backend_name() == "sqlite":
        @event.listens_for(_engine, "connect")
        def _set_sqlite_pragma(dbapi_connection, connection_record):
            cursor = dbapi_connection.cursor()
            cursor.execute("PRAGMA foreign_keys=ON;")
            cursor.close()

    logger.debug("Engine del registro: %s", _engine.url.render_as_string(hide_password=True))
    return _engine


def get_session() -> scoped_session:
    """Retorna un scoped_session global para el repositorio de corridas."""
    global SessionLocal
    if SessionLocal is None:
        SessionLocal = scoped_session(
            sessionmaker(bind=get_engine(), autoflush=False, autocommit=False, future=True)
        )
    return SessionLocal


def init_db() -> None:
    """Crea las tablas definidas en los modelos (idempotente)."""
    from .models import Base  # noqa: WPS433

    engine = get_engine()
    get_session()
    Base.metadata.create_all(bind=engine)


def dispose_engine() -> None:
    """Cierra el engine y limpia el scoped_session (útil para tests)."""
    global _engine, SessionLocal
    if SessionLocal is not None:
        SessionLocal.remove()
        SessionLocal = None
    if _engine is not None:
        _engine.dispose()
        _engine = None
