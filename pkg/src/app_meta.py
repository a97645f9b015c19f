from __future__ import annotations

import json
import platform
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import scipy

from src.utils.helpers import _candidate_paths

BUILD_INFO_PATH = Path("config/build_info.json")


def _read_json(rel_path: Path) -> dict[str, Any]:
    for path in _candidate_paths(rel_path):
        try:
            if path.exists():
                return json.loads(path.read_text(encoding="utf-8-sig"))
        except (OSError, ValueError):
            continue
    return {}


@dataclass(frozen=True)
class AppMeta:
    app_name: str
    version: str
    channel: str

    def versions(self) -> dict[str, str]:
        """Versiones que determinan la reproducibilidad numérica de una corrida."""
        return {
            self.app_name: self.version,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "platform": sys.platform,
        }


def get_app_meta() -> AppMeta:
    build_info = _read_json(BUILD_INFO_PATH)
    return AppMeta(
        app_name=str(build_info.get("app_name") or "hdsa-update"),
        version=str(build_info.get("version") or "0.1.0-dev"),
        channel=str(build_info.get("channel") or "dev"),
    )


def get_current_version() -> str:
    return get_app_meta().version
