from __future__ import annotations

from datetime import datetime as dt
from typing import List, Optional

from sqlalchemy import DateTime, ForeignKey, Integer, String, Text, UniqueConstraint
from sqlalchemy.orm import DeclarativeBase, Mapped, mapped_column, relationship


class Base(DeclarativeBase):
    """Base declarativa para todos los modelos."""
    pass


# ====================================================
# CORRIDAS
# ====================================================
class Run(Base):
    __tablename__ = "runs"

    id: Mapped[int] = mapped_column(Integer, primary_key=True, autoincrement=True)
    command: Mapped[str] = mapped_column(String, nullable=False)
    benchmark: Mapped[str] = mapped_column(String, nullable=False)
    # huella SHA-256 de la configuración completa
    fingerprint: Mapped[str] = mapped_column(String(64), nullable=False, index=True)
    # huella de lo que determina z̃ (modelo, malla, física, optimizador)
    model_fingerprint: Mapped[Optional[str]] = mapped_column(String(64), index=True)
    seed: Mapped[int] = mapped_column(Integer, nullable=False)
    status: Mapped[str] = mapped_column(String, nullable=False, default="ok")
    output_dir: Mapped[str] = mapped_column(String, nullable=False)
    created_at: Mapped[dt] = mapped_column(DateTime, nullable=False, default=dt.utcnow)
    manifest_json: Mapped[str] = mapped_column(Text, nullable=False)

    files: Mapped[List["RunFile"]] = relationship(
        back_populates="run",
        cascade="all, delete-orphan",
        order_by="RunFile.name",
    )

    def __repr__(self) -> str:
        return f"<Run id={self.id} command={self.command} benchmark={self.benchmark} status={self.status}>"


class RunFile(Base):
    __tablename__ = "run_files"
    __table_args__ = (UniqueConstraint("run_id", "name", name="uq_run_files_run_name"),)

    id: Mapped[int] = mapped_column(Integer, primary_key=True, autoincrement=True)
    run_id: Mapped[int] = mapped_column(ForeignKey("runs.id", ondelete="CASCADE"), nullable=False)
    name: Mapped[str] = mapped_column(String, nullable=False)
    sha256: Mapped[str] = mapped_column(String(64), nullable=False)

    run: Mapped["Run"] = relationship(back_populates="files")

    def __repr__(self) -> str:
        return f"<RunFile {self.name} run_id={self.run_id}>"
