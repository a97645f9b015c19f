from __future__ import annotations

import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional

from src.app_meta import get_app_meta
from src.reports.export import sha256_file, write_json
from src.utils.helpers import RunConfig

MANIFEST_NAME = "manifest.json"


@dataclass
class RunManifest:
    """Inventario reproducible de una corrida: configuración, semillas, versiones y archivos."""

    command: str
    benchmark: str
    fingerprint: str
    model_fingerprint: str
    seed: int
    output_dir: Path
    config: dict[str, Any] = field(default_factory=dict)
    defaults: dict[str, Any] = field(default_factory=dict)
    seeds: dict[str, Any] = field(default_factory=dict)
    versions: dict[str, str] = field(default_factory=dict)
    timing: dict[str, float] = field(default_factory=dict)
    files: dict[str, str] = field(default_factory=dict)
    status: str = "ok"
    message: Optional[str] = None
    started_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))
    _clock: float = field(default_factory=time.perf_counter, repr=False)

    @classmethod
    def start(cls, command: str, config: RunConfig, output_dir: Optional[Path] = None) -> "RunManifest":
        return cls(
            command=command,
            benchmark=config.benchmark,
            fingerprint=config.fingerprint(),
            model_fingerprint=config.model_fingerprint(),
            seed=config.seed,
            output_dir=Path(output_dir if output_dir is not None else config.output_dir),
            config=config.as_dict(),
            versions=get_app_meta().versions(),
        )

    def add_file(self, path: Path) -> Path:
        path = Path(path)
        self.files[path.relative_to(self.output_dir).as_posix()] = sha256_file(path)
        return path

    def tic(self, name: str) -> "_Timer":
        return _Timer(self, name)

    def fail(self, error: BaseException) -> None:
        self.status = "failed"
        self.message = f"{type(error).__name__}: {error}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "command": self.command,
            "benchmark": self.benchmark,
            "fingerprint": self.fingerprint,
            "model_fingerprint": self.model_fingerprint,
            "seed": self.seed,
            "output_dir": str(self.output_dir),
            "config": self.config,
            "defaults": self.defaults,
            "seeds": self.seeds,
            "versions": self.versions,
            "timing": self.timing,
            "files": dict(sorted(self.files.items())),
            "status": self.status,
            "message": self.message,
            "started_at": self.started_at,
        }

    def write(self) -> Path:
        self.timing["total_seconds"] = time.perf_counter() - self._clock
        return write_json(self.output_dir / MANIFEST_NAME, self.to_dict())


class _Timer:
    def __init__(self, manifest: RunManifest, name: str) -> None:
        self.manifest = manifest
        self.name = name

    def __enter__(self) -> "_Timer":
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, *exc) -> None:
        self.manifest.timing[f"{self.name}_seconds"] = time.perf_counter() - self._t0
