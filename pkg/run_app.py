"""
Launcher de hdsa-update desde la raíz del proyecto.
Ejecuta:  python run_app.py run config/diffusion_reaction.ini
"""
import sys
import pathlib

ROOT = pathlib.Path(__file__).resolve().parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from src.main import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
