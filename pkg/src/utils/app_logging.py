from __future__ import annotations

import atexit
import faulthandler
import logging
import os
import sys
import threading
from contextlib import contextmanager
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Iterator


_PROJECT_ROOT = Path(__file__).resolve().parents[2]
_LOG_DIR = _PROJECT_ROOT / "app_data" / "logs"
_MAIN_LOG = _LOG_DIR / "app.log"

ITERATION_LOGGER = "hdsa.optimizer.iterations"


def _ensure_log_dir() -> Path:
    _LOG_DIR.mkdir(parents=True, exist_ok=True)
    return _LOG_DIR


def get_log_dir() -> Path:
    return _ensure_log_dir()


def _install_fault_handler() -> None:
    try:
        fault_file = (_ensure_log_dir() / "crash.log").open("a", encoding="utf-8")
        faulthandler.enable(file=fault_file, all_threads=True)
        atexit.register(fault_file.close)
    except Exception:
        pass


def _install_exception_hooks() -> None:
    logger = logging.getLogger("hdsa")

    def _sys_hook(exc_type, exc_value, exc_tb):
        logger.critical("Excepcion no controlada", exc_info=(exc_type, exc_value, exc_tb))
        sys.__excepthook__(exc_type, exc_value, exc_tb)

    def _thread_hook(args):
        logger.critical(
            "Excepcion no controlada en hilo %s",
            getattr(args.thread, "name", "unknown"),
            exc_info=(args.exc_type, args.exc_value, args.exc_traceback),
        )

    sys.excepthook = _sys_hook
    threading.excepthook = _thread_hook


def configure_global_logging(*, quiet: bool = False, file_log: bool = True) -> None:
    """Configura logging raíz: archivo rotativo + consola + crash log.

    - HDSA_DISABLE_FILE_LOG=1 desactiva el archivo rotativo (útil en CI).
    - HDSA_LOG_LEVEL fija el nivel de consola (INFO por defecto, WARNING con quiet).
    """
    root_logger = logging.getLogger()
    if getattr(root_logger, "_hdsa_logging_ready", False):
        return

    root_logger.setLevel(logging.DEBUG)
    formatter = logging.Formatter(
        fmt="%(asctime)s [%(levelname)s] %(name)s | %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )

    if file_log and os.getenv("HDSA_DISABLE_FILE_LOG", "").strip() != "1":
        _ensure_log_dir()
        app_handler = RotatingFileHandler(_MAIN_LOG, maxBytes=2_000_000, backupCount=5, encoding="utf-8")
        app_handler.setLevel(logging.DEBUG)
        app_handler.setFormatter(formatter)
        root_logger.addHandler(app_handler)
        _install_fault_handler()

    console_level = os.getenv("HDSA_LOG_LEVEL", "").strip().upper()
    console_handler = logging.StreamHandler()
    console_handler.setLevel(console_level or (logging.WARNING if quiet else logging.INFO))
    console_handler.setFormatter(formatter)
    root_logger.addHandler(console_handler)

    # SQLAlchemy/matplotlib son muy verbosos en DEBUG
    for name in ("sqlalchemy", "matplotlib"):
        logging.getLogger(name).setLevel(logging.WARNING)

    setattr(root_logger, "_hdsa_logging_ready", True)
    _install_exception_hooks()
    logging.getLogger("hdsa").debug("Logging inicializado en %s", _LOG_DIR)


@contextmanager
def attach_iteration_log(path: Path) -> Iterator[Path]:
    """Agrega un FileHandler de texto plano para la traza de iteraciones del optimizador."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(path, mode="w", encoding="utf-8")
    handler.setLevel(logging.INFO)
    handler.setFormatter(logging.Formatter("%(message)s"))
    logger = logging.getLogger(ITERATION_LOGGER)
    logger.setLevel(logging.INFO)
    logger.addHandler(handler)
    try:
        yield path
    finally:
        logger.removeHandler(handler)
        handler.close()
