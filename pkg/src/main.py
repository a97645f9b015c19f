from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from src.app_meta import get_app_meta
from src.benchmarks import BenchmarkError
from src.core.calibration import CalibrationError
from src.core.cost_model import CostParams
from src.core.nonlinear import ForwardSolveError
from src.core.optimizer import OptimizationError
from src.core.prior import PriorError
from src.core.solution_update import ProjectionError
from src.data.database import dispose_engine
from src.utils.app_logging import configure_global_logging
from src.utils.helpers import ConfigError, load_run_config, parse_int_list, read_config
from src import workflows

EXIT_OK = 0
EXIT_SOLVER = 1
EXIT_CONFIG = 2

SOLVER_ERRORS = (ForwardSolveError, OptimizationError, CalibrationError, ProjectionError, PriorError)

logger = logging.getLogger("hdsa.cli")


def _overrides(items: Sequence[str]) -> dict[str, str]:
    out: dict[str, str] = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set espera seccion.clave=valor: {item!r}", key=item)
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    meta = get_app_meta()
    parser = argparse.ArgumentParser(
        prog=meta.app_name,
        description="Actualización post-optimalidad de soluciones con discrepancia de modelo calibrada.",
    )
    parser.add_argument("--version", action="version", version=f"{meta.app_name} {meta.version}")
    parser.add_argument("-q", "--quiet", action="store_true", help="solo advertencias en consola")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p: argparse.ArgumentParser) -> argparse.ArgumentParser:
        p.add_argument("config", type=Path, help="archivo INI de la corrida")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECCION.CLAVE=VALOR",
                       help="sobrescribe una clave de la configuración (repetible)")
        return p

    p = with_config(sub.add_parser("optimize", help="optimización de baja fidelidad"))
    p.add_argument("--refine", action="store_true", help="refina la malla hasta que J̃ cambie menos que --refine-tol")
    p.add_argument("--refine-tol", type=float, default=0.01)
    p.add_argument("--max-levels", type=int, default=4)

    with_config(sub.add_parser("preview-prior", help="muestras de las priors para ajustar hiperparámetros"))
    p = with_config(sub.add_parser("run", help="calibración y ensamble posterior de soluciones"))
    p.add_argument("--dump", action="store_true", help="escribe matrices y factores de la prior en tripletes")

    p = with_config(sub.add_parser("rank-sweep", help="error y varianza posterior por rango del proyector"))
    p.add_argument("--ranks", default="1-20", help="lista de rangos, p. ej. '1-10,15,20'")

    p = sub.add_parser("cost-estimate", help="costo en resoluciones de EDP")
    for name, default in CostParams().as_dict().items():
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=type(default), default=default)

    p = sub.add_parser("oracle-check", help="verificación contra el cálculo denso en instancias pequeñas")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", type=Path, default=None)
    p.add_argument("--dump", action="store_true", help="matrices densas de cada instancia en <output>/matrices")

    p = sub.add_parser("history", help="últimas corridas registradas")
    p.add_argument("--limit", type=int, default=20)
    return parser


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "cost-estimate":
        params = CostParams(**{k: getattr(args, k) for k in CostParams().as_dict()})
        print(json.dumps(workflows.cmd_cost_estimate(params), indent=2, sort_keys=True))
        return EXIT_OK
    if args.command == "oracle-check":
        if args.dump and args.output is None:
            raise ConfigError("--dump requiere --output", key="output")
        passed, reports = workflows.cmd_oracle_check(args.instances, args.seed, args.output, dump=args.dump)
        n_checks = sum(len(r.checks) for r in reports)
        n_fail = sum(len(r.failures) for r in reports)
        print(f"{len(reports)} instancias, {n_checks} comprobaciones, {n_fail} fallas")
        return EXIT_OK if passed else EXIT_SOLVER
    if args.command == "history":
        for row in workflows.history(args.limit):
            print(json.dumps(row, sort_keys=True))
        return EXIT_OK

    overrides = _overrides(args.overrides)
    if getattr(args, "dump", False):
        overrides["run.dump"] = "true"
    config = load_run_config(args.config, overrides)
    if args.command == "optimize":
        manifest = workflows.cmd_optimize(config, refine=args.refine, refine_tol=args.refine_tol,
                                          max_levels=args.max_levels)
    elif args.command == "preview-prior":
        manifest = workflows.cmd_preview_prior(config)
    elif args.command == "run":
        manifest = workflows.cmd_run(config)
    else:
        try:
            ranks = parse_int_list(args.ranks)
        except ValueError as exc:
            raise ConfigError(f"--ranks inválido: {exc}", key="ranks")
        manifest = workflows.cmd_rank_sweep(config, ranks)
    print(manifest.output_dir / "manifest.json")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    settings = read_config()
    configure_global_logging(
        quiet=args.quiet or settings.getboolean("logging", "quiet", fallback=False),
        file_log=settings.getboolean("logging", "file_log", fallback=True),
    )
    meta = get_app_meta()
    logger.info("Iniciando %s %s: %s", meta.app_name, meta.version, args.command)
    try:
        return _dispatch(args)
    except (ConfigError, BenchmarkError) as exc:
        key = getattr(exc, "key", None)
        logger.error("Error de configuración%s: %s", f" [{key}]" if key else "", exc)
        print(f"error de configuración: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SOLVER_ERRORS as exc:
        log_path = getattr(exc, "log_path", None)
        logger.error("Falla del solver: %s%s", exc, f" (traza en {log_path})" if log_path else "")
        print(f"falla del solver: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    finally:
        dispose_engine()


if __name__ == "__main__":
    sys.exit(main())
