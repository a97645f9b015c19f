from __future__ import annotations

import json
import logging
from typing import Generic, List, Optional, Type, TypeVar

from sqlalchemy import select
from sqlalchemy.orm import Session

from .models import Base, Run, RunFile

T = TypeVar("T", bound=Base)

logger = logging.getLogger("hdsa.registry")


class BaseRepository(Generic[T]):
    """Repositorio base con CRUD simple."""
    def __init__(self, session: Session, model: Type[T]) -> None:
        self.session = session
        self.model = model

    def add(self, obj: T) -> T:
        """Agrega el objeto al Session (no hace commit)."""
        self.session.add(obj)
        return obj

    def get(self, id_: int) -> Optional[T]:
        return self.session.get(self.model, id_)

    def list(self) -> List[T]:
        return list(self.session.scalars(select(self.model)).all())


# ---------------------------
# Runs
# ---------------------------
class RunRepository(BaseRepository[Run]):
    def __init__(self, session: Session) -> None:
        super().__init__(session, Run)

    def record(self, manifest, command: Optional[str] = None) -> Run:
        """Registra una corrida a partir de su RunManifest y hace commit."""
        data = manifest.to_dict()
        run = Run(
            command=command or manifest.command,
            benchmark=manifest.benchmark,
            fingerprint=manifest.fingerprint,
            model_fingerprint=manifest.model_fingerprint,
            seed=int(manifest.seed),
            status=manifest.status,
            output_dir=str(manifest.output_dir),
            manifest_json=json.dumps(data, sort_keys=True),
        )
        for name, digest in sorted(manifest.files.items()):
            run.files.append(RunFile(name=name, sha256=digest))
        self.add(run)
        try:
            self.session.commit()
        except Exception:
            self.session.rollback()
            raise
        logger.info("Corrida registrada: id=%s %s/%s (%s)", run.id, run.command, run.benchmark, run.status)
        return run

    def latest(self, fingerprint: str, command: str = "optimize", status: str = "ok") -> Optional[Run]:
        """Última corrida con esa huella de modelo (o de configuración completa)."""
        stmt = (
            select(Run)
            .where(Run.command == command, Run.status == status)
            .where((Run.model_fingerprint == fingerprint) | (Run.fingerprint == fingerprint))
            .order_by(Run.created_at.desc(), Run.id.desc())
            .limit(1)
        )
        return self.session.scalars(stmt).first()

    def recent(self, limit: int = 20) -> List[Run]:
        stmt = select(Run).order_by(Run.created_at.desc(), Run.id.desc()).limit(int(limit))
        return list(self.session.scalars(stmt).all())
