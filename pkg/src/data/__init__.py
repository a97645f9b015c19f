from .database import dispose_engine, get_session, init_db
from .models import Base, Run, RunFile
from .repository import RunRepository

__all__ = ["Base", "Run", "RunFile", "RunRepository", "dispose_engine", "get_session", "init_db"]
