"""
Fixtures de prueba:
- Registro de corridas en una BD SQLite temporal (HDSA_DATABASE_URL).
- Sin log rotativo en archivo y un solo hilo de trabajo.
- Mallas e instancias densas pequeñas para las pruebas numéricas.
"""

from __future__ import annotations

import numpy as np
import pytest

from src.core.dense_oracle import random_instance
from src.core.fem import assemble
from src.core.mesh import build_interval_mesh
from src.data import database as db


@pytest.fixture(autouse=True)
def isolated_db(tmp_path, monkeypatch):
    """
    BD aislada por test:
    - HDSA_DATABASE_URL apunta a runs_test.db en tmp.
    - Reinicia engine/sesión antes y después.
    """
    dbfile = tmp_path / "runs_test.db"
    monkeypatch.setenv("HDSA_DATABASE_URL", f"sqlite:///{dbfile.as_posix()}")
    monkeypatch.setenv("HDSA_DISABLE_FILE_LOG", "1")
    monkeypatch.setenv("HDSA_THREADS", "1")

    db.dispose_engine()
    db.init_db()

    yield

    db.dispose_engine()


@pytest.fixture()
def session():
    """Entrega la sesión SQLAlchemy (scoped_session proxied)."""
    return db.get_session()


@pytest.fixture()
def unit_fem():
    """FEM P1 sobre [0, 1] con 49 elementos (m = 50)."""
    return assemble(build_interval_mesh(0.0, 1.0, 49))


@pytest.fixture()
def dense_instance():
    return random_instance(3, m=4, n=5, N=2)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
