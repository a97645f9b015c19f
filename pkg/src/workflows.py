"""
Orquestación de los subcomandos: optimizar, previsualizar priors, calibrar y muestrear,
barrido de rangos, costo y oráculo denso.

Cada comando escribe sus tablas en <output_dir>/<comando>/ junto con manifest.json
y registra la corrida en la base de datos del registro.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from sqlalchemy.exc import SQLAlchemyError

from src.benchmarks import Benchmark, build_benchmark, sample_secondary_input
from src.core.calibration import (
    TrainingData,
    build_spectrum,
    calibration_report,
    delta_eval,
    posterior_coefficients,
    posterior_mean,
    sample_delta_breve,
)
from src.core.cost_model import CostParams, cost_summary
from src.core.dense_oracle import IdentityReport, build_A_dense, build_Wtheta_dense, oracle_instances, run_oracle_suite
from src.core.optimizer import OptimizationError, OptimizationResult, solve_lofi
from src.core.prior import OptPrior, StatePrior
from src.core.solution_update import (
    PROJECTOR_STREAM,
    SAMPLE_STREAM,
    BreveOperator,
    HessianProjector,
    PosteriorEnsemble,
    UpdateInputs,
    apply_B,
    choose_projector_rank,
    gen_eig_H,
    posterior_solution_samples,
    projector_diagnostics,
    unprojected_update,
)
from src.data import RunRepository, get_session, init_db
from src.reports.export import (
    export_workbook,
    field_columns,
    read_csv_columns,
    sha256_file,
    write_columns,
    write_csv,
    write_json,
    write_samples,
    write_triplets,
)
from src.reports.manifest import RunManifest
from src.utils.app_logging import attach_iteration_log
from src.utils.helpers import RunConfig, get_thread_count

logger = logging.getLogger("hdsa.cli")

# flujos aleatorios adicionales a los de muestreo (1) y proyector (2)
GSVD_STREAM = 3
PREVIEW_STREAM = 4
SECONDARY_STREAM = 5

REFINE_KEYS = {
    "diffusion_reaction": ("n_elems",),
    "mass_spring": ("n_steps",),
    "advection_diffusion": ("nx", "ny"),
}


# ---------------------------
# Piezas comunes
# ---------------------------
def _benchmark(config: RunConfig) -> Benchmark:
    return build_benchmark(config.benchmark, config.mesh, config.physics)


def _metric(bench: Benchmark):
    return bench.opt_fem.mass if bench.function_valued else None


def _hessian_mode(config: RunConfig) -> str:
    return config.hessian or "full"


def _state_prior(bench: Benchmark, config: RunConfig) -> StatePrior:
    return bench.state_prior(
        config.hyper.alpha_u,
        config.hyper.beta_u,
        q=config.prior_q,
        q_max=config.prior_q_max,
        oversample=config.prior_oversample,
        rank_tol=config.prior_rank_tol,
        seed=np.random.default_rng([config.seed, GSVD_STREAM]),
    )


def _opt_prior(bench: Benchmark, config: RunConfig) -> OptPrior:
    return bench.opt_prior(config.hyper.alpha_z, config.hyper.beta_z)


def _secondary_input(wz: OptPrior, z_tilde: np.ndarray, config: RunConfig, index: int) -> np.ndarray:
    rng = np.random.default_rng([config.seed, SECONDARY_STREAM, index])
    return sample_secondary_input(wz, z_tilde, rng, config.secondary_magnitude)


def _parallel_map(fn: Callable, items: Sequence, threads: int) -> list:
    """Mapa ordenado; ante un error devuelve lo calculado hasta ese índice en exc.partial."""
    out: list = []
    if threads <= 1 or len(items) <= 1:
        for item in items:
            try:
                out.append(fn(item))
            except Exception as exc:
                exc.partial = out
                raise
        return out
    with ThreadPoolExecutor(max_workers=threads, thread_name_prefix="hdsa-eval") as pool:
        futures = [pool.submit(fn, item) for item in items]
        for fut in futures:
            try:
                out.append(fut.result())
            except Exception as exc:
                exc.partial = out
                raise
    return out


def _write_matrices(folder: Path, matrices: dict) -> list[Path]:
    """Un archivo de tripletes <nombre>.txt por matriz; los vectores se escriben como columna."""
    paths = []
    for name, matrix in matrices.items():
        if not sp.issparse(matrix):
            matrix = np.asarray(matrix, dtype=float)
            if matrix.ndim == 1:
                matrix = matrix[:, None]
        paths.append(write_triplets(folder / f"{name}.txt", matrix))
    return paths


def _record(manifest: RunManifest) -> Optional[int]:
    try:
        init_db()
        return RunRepository(get_session()).record(manifest).id
    except SQLAlchemyError as exc:
        logger.warning("No se pudo registrar la corrida en la base de datos: %s", exc)
        return None


def _finish(manifest: RunManifest) -> RunManifest:
    manifest.write()
    _record(manifest)
    return manifest


@dataclass
class _Session:
    """Estado de un comando en curso: configuración, benchmark, manifiesto y carpeta."""

    config: RunConfig
    bench: Benchmark
    manifest: RunManifest
    threads: int

    @property
    def out(self) -> Path:
        return self.manifest.output_dir

    @classmethod
    def open(cls, command: str, config: RunConfig) -> "_Session":
        bench = _benchmark(config)
        out = Path(config.output_dir) / command
        out.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest.start(command, config, out)
        manifest.defaults["benchmark"] = dict(bench.settings)
        manifest.seeds = {
            "master": config.seed,
            "streams": {
                "samples": SAMPLE_STREAM,
                "projector": PROJECTOR_STREAM,
                "gsvd": GSVD_STREAM,
                "preview": PREVIEW_STREAM,
                "secondary": SECONDARY_STREAM,
            },
        }
        threads = get_thread_count()
        logger.info("%s: benchmark=%s salida=%s hilos=%d", command, config.benchmark, out, threads)
        return cls(config=config, bench=bench, manifest=manifest, threads=threads)

    def control_table(self, name: str, fields: dict) -> Path:
        path = write_columns(self.out / name, field_columns(self.bench.control_coords, self.bench.control_columns, fields))
        return self.manifest.add_file(path)

    def state_table(self, name: str, fields: dict) -> Path:
        path = write_columns(self.out / name, field_columns(self.bench.state_coords, self.bench.state_columns, fields))
        return self.manifest.add_file(path)


# ---------------------------
# Optimización
# ---------------------------
def _optimize(bench: Benchmark, config: RunConfig, log_path: Path, *, hifi: bool = False,
              z0: Optional[np.ndarray] = None) -> OptimizationResult:
    prob = bench.hifi_problem(_hessian_mode(config)) if hifi else bench.make_problem(_hessian_mode(config))
    start = bench.initial_guess() if z0 is None else z0
    with attach_iteration_log(log_path):
        try:
            result = solve_lofi(
                prob,
                start,
                gtol=config.gtol_rel,
                max_iter=config.max_iter,
                metric=_metric(bench),
                gtol_abs=config.gtol_abs,
                initial_radius=config.initial_radius,
            )
        except OptimizationError as exc:
            exc.log_path = str(log_path)
            raise
    if not result.converged:
        logger.warning("El optimizador no alcanzó la tolerancia; ver %s", log_path)
    return result


def solve_hifi(bench: Benchmark, config: RunConfig, log_path: Path, z0: Optional[np.ndarray] = None) -> OptimizationResult:
    """Óptimo de alta fidelidad con el mismo solver (solo para validación)."""
    logger.info("Optimización de alta fidelidad (%s)", bench.name)
    return _optimize(bench, config, log_path, hifi=True, z0=z0)


def _optimizer_summary(result: OptimizationResult) -> dict:
    return {
        "objective": result.objective,
        "grad_norm": result.grad_norm,
        "initial_grad_norm": result.initial_grad_norm,
        "iterations": result.iterations,
        "converged": result.converged,
        "min_curvature": result.min_curvature,
        "settings": result.settings,
    }


def refine_resolution(config: RunConfig, tol: float = 0.01, max_levels: int = 4) -> tuple[RunConfig, list[dict]]:
    """Duplica la resolución hasta que J̃ óptimo cambie menos de tol (relativo).

    Devuelve la configuración de la resolución más gruesa cuyo refinamiento ya no cambia J̃.
    """
    keys = REFINE_KEYS[config.benchmark]
    rows: list[dict] = []
    current = config
    previous: Optional[float] = None
    log_dir = Path(config.output_dir) / "optimize"
    for level in range(max_levels + 1):
        bench = _benchmark(current)
        result = _optimize(bench, current, log_dir / f"refine_{level}.log")
        change = None if previous is None else abs(result.objective - previous) / max(abs(previous), 1e-300)
        rows.append({"level": level, **{k: current.mesh[k] for k in keys}, "objective": result.objective, "change": change})
        logger.info("Refinamiento %d: %s J=%.6e cambio=%s", level, {k: current.mesh[k] for k in keys},
                    result.objective, "-" if change is None else f"{change:.3e}")
        if change is not None and change < tol:
            coarser = {**current.mesh, **{k: current.mesh[k] // 2 for k in keys}}
            return replace(current, mesh=coarser), rows
        previous = result.objective
        if level < max_levels:
            current = replace(current, mesh={**current.mesh, **{k: 2 * current.mesh[k] for k in keys}})
    logger.warning("Sin convergencia en malla tras %d niveles; se usa la más fina", max_levels)
    return current, rows


def _lookup_z_tilde(config: RunConfig, size: int) -> Optional[tuple[np.ndarray, int]]:
    """z̃ de una corrida 'optimize' previa con la misma huella de modelo, si su archivo sigue intacto."""
    try:
        init_db()
        run = RunRepository(get_session()).latest(config.model_fingerprint(), "optimize")
    except SQLAlchemyError as exc:
        logger.warning("Registro no disponible: %s", exc)
        return None
    if run is None:
        return None
    path = Path(run.output_dir) / "z_tilde.csv"
    expected = json.loads(run.manifest_json).get("files", {}).get("z_tilde.csv")
    if not path.exists() or (expected and sha256_file(path) != expected):
        logger.warning("z̃ registrado en %s no está disponible o fue modificado; se recalcula", path)
        return None
    z = read_csv_columns(path)["z_tilde"]
    if z.size != size:
        return None
    return z, run.id


def _z_tilde(session: _Session) -> np.ndarray:
    found = _lookup_z_tilde(session.config, session.bench.control_size)
    if found is not None:
        z, run_id = found
        logger.info("Se reutiliza z̃ de la corrida %d", run_id)
        session.manifest.defaults["z_tilde_source"] = f"registry:{run_id}"
    else:
        with session.manifest.tic("optimize"):
            result = _optimize(session.bench, session.config, session.out / "optimize.log")
        session.manifest.add_file(session.out / "optimize.log")
        session.manifest.defaults["optimizer"] = _optimizer_summary(result)
        session.manifest.defaults["z_tilde_source"] = "inline"
        z = result.z_tilde
    session.control_table("z_tilde.csv", {"z_tilde": z})
    return z


# ---------------------------
# Subcomandos
# ---------------------------
def cmd_optimize(config: RunConfig, *, refine: bool = False, refine_tol: float = 0.01, max_levels: int = 4) -> RunManifest:
    """z̃ y los estados de baja y alta fidelidad en z̃."""
    refinement: list[dict] = []
    if refine:
        config, refinement = refine_resolution(config, refine_tol, max_levels)
    s = _Session.open("optimize", config)
    bench = s.bench
    try:
        if refinement:
            keys = REFINE_KEYS[config.benchmark]
            path = write_csv(s.out / "refinement.csv", ["level", *keys, "objective", "change"],
                             ([r["level"], *[r[k] for k in keys], r["objective"], r["change"]] for r in refinement))
            s.manifest.add_file(path)
            s.manifest.defaults["refinement"] = {"tol": refine_tol, "chosen_mesh": dict(config.mesh)}
        with s.manifest.tic("optimize"):
            result = _optimize(bench, config, s.out / "optimize.log")
        s.manifest.add_file(s.out / "optimize.log")
        z = result.z_tilde
        s.control_table("z_tilde.csv", {"z_tilde": z})
        target = bench.objective.target
        with s.manifest.tic("hifi_state"):
            state_hifi = bench.pair.hifi_solve(z)
        s.state_table("state_lofi.csv", {"state": bench.pair.lofi_solve(z), "target": target})
        s.state_table("state_hifi.csv", {"state": state_hifi, "target": target})
        s.manifest.defaults["optimizer"] = _optimizer_summary(result)
        s.manifest.defaults["objective"] = {
            "lofi_at_z_tilde": result.objective,
            "hifi_at_z_tilde": bench.objective.value(state_hifi, z),
        }
    except Exception as exc:
        s.manifest.fail(exc)
        _finish(s.manifest)
        raise
    return _finish(s.manifest)


def cmd_preview_prior(config: RunConfig) -> RunManifest:
    """Muestras de las priors de estado y de optimización y de δ̆(z_ref) para ajustar hiperparámetros."""
    s = _Session.open("preview-prior", config)
    bench, n_prev = s.bench, config.preview_samples
    try:
        wu = _state_prior(bench, config)
        wz = _opt_prior(bench, config)
        s.manifest.defaults["state_prior_rank"] = wu.rank
        state = np.array([wu.sample(np.random.default_rng([config.seed, PREVIEW_STREAM, 0, k])) for k in range(n_prev)])
        opt = np.array([wz.sample(np.random.default_rng([config.seed, PREVIEW_STREAM, 1, k])) for k in range(n_prev)])
        s.manifest.add_file(write_samples(s.out / "prior_state_samples.csv", bench.state_coords, bench.state_columns,
                                          state.reshape(n_prev, bench.state_size)))
        s.manifest.add_file(write_samples(s.out / "prior_opt_samples.csv", bench.control_coords, bench.control_columns,
                                          opt.reshape(n_prev, bench.control_size)))

        z_tilde = _z_tilde(s)
        inputs = [z_tilde] + [_secondary_input(wz, z_tilde, config, ell) for ell in range(1, config.n_training)]
        data = TrainingData.from_columns(inputs, [np.zeros(bench.state_size)] * len(inputs))
        spectrum = build_spectrum(data, wz)
        if config.preview_z_ref == "z_tilde":
            z_ref = z_tilde
        else:
            z_ref = _secondary_input(wz, z_tilde, config, config.n_training)
        breve = np.array([
            sample_delta_breve(spectrum, wz, z_ref, wu, np.random.default_rng([config.seed, PREVIEW_STREAM, 2, k]))
            for k in range(n_prev)
        ])
        s.manifest.add_file(write_samples(s.out / "breve_samples.csv", bench.state_coords, bench.state_columns,
                                          breve.reshape(n_prev, bench.state_size)))
        s.control_table("z_ref.csv", {"z_ref": z_ref})
        s.manifest.defaults["z_ref"] = config.preview_z_ref
    except Exception as exc:
        s.manifest.fail(exc)
        _finish(s.manifest)
        raise
    return _finish(s.manifest)


@dataclass(frozen=True, eq=False)
class Calibrated:
    """Artefactos compartidos por run y rank-sweep."""

    inputs: UpdateInputs
    full_projector: HessianProjector
    hess_vec: Callable[[np.ndarray], np.ndarray]


def _dump_run_matrices(s: _Session, wu: StatePrior) -> list[Path]:
    bench = s.bench
    matrices = {
        "state_coords": bench.state_coords,
        "state_mass": bench.state_fem.mass,
        "state_stiffness": bench.state_fem.stiffness,
    }
    if bench.opt_fem is not None:
        matrices["opt_mass"] = bench.opt_fem.mass
        matrices["opt_stiffness"] = bench.opt_fem.stiffness
    if bench.control_basis is not None:
        matrices["control_basis"] = bench.control_basis
    matrices["prior_V"] = wu.V
    matrices["prior_pi"] = sp.diags(wu.pi)
    return _write_matrices(s.out / "matrices", matrices)


def _calibrate(s: _Session, z_tilde: np.ndarray, r_max: int) -> Calibrated:
    config, bench = s.config, s.bench
    wu = _state_prior(bench, config)
    wz = _opt_prior(bench, config)
    s.manifest.defaults["state_prior_rank"] = wu.rank

    Z = [z_tilde] + [_secondary_input(wz, z_tilde, config, ell) for ell in range(1, config.n_training)]
    s.control_table("training_inputs.csv", {f"z_{ell}": z for ell, z in enumerate(Z)})
    try:
        with s.manifest.tic("hifi_training"):
            D = _parallel_map(bench.pair.discrepancy_eval, Z, s.threads)
    except Exception as exc:
        done = getattr(exc, "partial", [])
        if done:
            s.state_table("discrepancy.csv", {f"d_{ell}": d for ell, d in enumerate(done)})
        raise
    data = TrainingData.from_columns(Z, D)

    with s.manifest.tic("calibration"):
        spectrum = build_spectrum(data, wz)
        coeffs = posterior_coefficients(spectrum, wu, config.hyper.alpha_d)
        mean = posterior_mean(spectrum, wu, config.hyper.alpha_d, coeffs)
    fits = {f"delta_mean_{ell}": delta_eval(mean, Z[ell]) for ell in range(len(Z))}
    s.state_table("discrepancy.csv", {**{f"d_{ell}": d for ell, d in enumerate(D)}, **fits})
    s.manifest.add_file(write_json(s.out / "calibration.json", calibration_report(spectrum, coeffs, mean, wu.mass)))

    prob = bench.make_problem(_hessian_mode(config))
    pieces = prob.b_pieces(z_tilde)
    breve = BreveOperator.build(spectrum, wu, pieces.grad_u)

    def hess_vec(v: np.ndarray) -> np.ndarray:
        return prob.hess_vec(z_tilde, v)

    r_max = max(1, min(r_max, bench.control_size))
    with s.manifest.tic("projector"):
        projector = gen_eig_H(hess_vec, wz, r_max, config.projector_oversample,
                              seed=np.random.default_rng([config.seed, PROJECTOR_STREAM]),
                              power_iterations=config.projector_power_iterations)
        diagnostics = projector_diagnostics(projector, hess_vec, config.projector_residual_tol)
    s.manifest.defaults["projector"] = {
        "power_iterations": config.projector_power_iterations,
        "oversample": config.projector_oversample,
        **diagnostics,
    }
    path = write_csv(s.out / "eigenvalues.csv", ["index", "rho", "residual"],
                     ((j + 1, rho, res) for j, (rho, res) in enumerate(zip(projector.rho, diagnostics["residuals"]))))
    s.manifest.add_file(path)
    n_vec = min(projector.rank, 10)
    s.control_table("eigenvectors.csv", {f"v_{j + 1}": projector.V[:, j] for j in range(n_vec)})

    if config.dump:
        for path in _dump_run_matrices(s, wu):
            s.manifest.add_file(path)

    inputs = UpdateInputs(
        spectrum=spectrum,
        mean=mean,
        state_prior=wu,
        opt_prior=wz,
        alpha_d=config.hyper.alpha_d,
        pieces=pieces,
        projector=projector,
        breve=breve,
    )
    return Calibrated(inputs=inputs, full_projector=projector, hess_vec=hess_vec)


def _ensemble(cal: Calibrated, r: int, config: RunConfig, threads: int) -> PosteriorEnsemble:
    inputs = replace(cal.inputs, projector=cal.full_projector.truncate(r))
    return posterior_solution_samples(inputs, config.samples, config.seed, threads=threads)


def _wz_variance(ensemble: PosteriorEnsemble, wz: OptPrior) -> float:
    """tr(W_z Cov) muestral; no decrece con r porque las muestras comparten semilla."""
    if ensemble.n_samples < 2:
        return 0.0
    dev = ensemble.samples - ensemble.samples.mean(axis=1, keepdims=True)
    total = sum(float(dev[:, k] @ wz.apply(dev[:, k])) for k in range(ensemble.n_samples))
    return total / (ensemble.n_samples - 1)


def _m_norm(x: np.ndarray, mass) -> float:
    return float(np.sqrt(max(float(x @ (mass @ x)), 0.0)))


def _ranks(requested: Sequence[int], cal_rank: int, fallback: int) -> list[int]:
    ranks = list(dict.fromkeys(int(r) for r in requested)) or [fallback]
    clipped = [min(r, cal_rank) for r in ranks]
    if clipped != ranks:
        logger.warning("Rangos recortados al máximo calculado %d: %s", cal_rank, ranks)
    return list(dict.fromkeys(clipped))


def cmd_run(config: RunConfig) -> RunManifest:
    """Calibración, proyector y ensamble posterior de soluciones para cada rango pedido."""
    s = _Session.open("run", config)
    bench = s.bench
    try:
        z_tilde = _z_tilde(s)
        r_max = max(config.ranks) if config.ranks else config.projector_r_max
        cal = _calibrate(s, z_tilde, r_max)
        wz = cal.inputs.opt_prior
        ranks = _ranks(config.ranks, cal.full_projector.rank,
                       choose_projector_rank(cal.full_projector.rho, config.projector_eig_tol))
        s.manifest.defaults["ranks"] = ranks

        markers = [("z_tilde", None)]
        J = {"z_tilde": bench.hifi_objective(z_tilde)} if config.evaluate_objective else {}
        if config.compute_hifi_optimum:
            with s.manifest.tic("hifi_optimum"):
                hifi = solve_hifi(bench, config, s.out / "hifi_optimize.log", z0=z_tilde)
            s.manifest.add_file(s.out / "hifi_optimize.log")
            s.control_table("z_hifi.csv", {"z_hifi": hifi.z_tilde})
            J["z_hifi"] = hifi.objective
            markers.append(("z_hifi", None))

        summary_rows = []
        for r in ranks:
            with s.manifest.tic(f"samples_r{r}"):
                ens = _ensemble(cal, r, config, s.threads)
            fields = {"z_tilde": z_tilde, "mean": ens.mean, "std": ens.pointwise_std()}
            s.control_table(f"ensemble_r{r}.csv", fields)
            if ens.n_samples:
                s.manifest.add_file(write_samples(s.out / f"samples_r{r}.csv", bench.control_coords,
                                                  bench.control_columns, ens.samples.T))
            if config.evaluate_objective:
                J[f"z_bar_r{r}"] = bench.hifi_objective(ens.mean)
                markers.append((f"z_bar_r{r}", r))
                if ens.n_samples:
                    with s.manifest.tic(f"objective_r{r}"):
                        values = _parallel_map(bench.hifi_objective, list(ens.samples.T), s.threads)
                    s.manifest.add_file(write_csv(s.out / f"objective_r{r}.csv", ["sample", "objective"],
                                                  enumerate(values)))
            summary_rows.append([
                r,
                ens.n_samples,
                _m_norm(ens.mean_update, wz.mass),
                ens.integrated_variance(wz.mass),
                ens.max_projection_residual(cal.full_projector.truncate(r)),
            ])

        s.manifest.add_file(write_csv(
            s.out / "ensemble_summary.csv",
            ["rank", "samples", "mean_update_norm", "integrated_variance", "max_projection_residual"],
            summary_rows,
        ))
        if J:
            s.manifest.add_file(write_csv(s.out / "markers.csv", ["name", "rank", "objective"],
                                          ([name, "" if r is None else r, J[name]] for name, r in markers if name in J)))
        if config.unprojected_mean:
            b_mean = apply_B(cal.inputs.mean, cal.inputs.pieces)
            with s.manifest.tic("unprojected_mean"):
                z_unproj = z_tilde + unprojected_update(cal.hess_vec, b_mean)
            s.control_table("unprojected_mean.csv", {"z_tilde": z_tilde, "mean": z_unproj})
        if config.xlsx:
            csvs = sorted(p for p in s.out.glob("*.csv"))
            s.manifest.add_file(export_workbook(s.out / "summary.xlsx", csvs, f"{bench.name} run"))
    except Exception as exc:
        s.manifest.fail(exc)
        _finish(s.manifest)
        raise
    return _finish(s.manifest)


def cmd_rank_sweep(config: RunConfig, r_list: Sequence[int], z_hifi: Optional[np.ndarray] = None) -> RunManifest:
    """Error relativo de la media y varianza integrada del posterior para cada rango."""
    s = _Session.open("rank-sweep", config)
    bench = s.bench
    try:
        z_tilde = _z_tilde(s)
        if z_hifi is None:
            with s.manifest.tic("hifi_optimum"):
                z_hifi = solve_hifi(bench, config, s.out / "hifi_optimize.log", z0=z_tilde).z_tilde
            s.manifest.add_file(s.out / "hifi_optimize.log")
        s.control_table("z_hifi.csv", {"z_hifi": z_hifi})

        requested = list(dict.fromkeys(int(r) for r in r_list))
        cal = _calibrate(s, z_tilde, max(requested + [1]))
        wz = cal.inputs.opt_prior
        mass = wz.mass
        ranks = _ranks(requested, cal.full_projector.rank, cal.full_projector.rank)
        s.manifest.defaults["ranks"] = ranks
        ref = _m_norm(z_hifi, mass) or 1.0
        rows = []
        for r in sorted(ranks):
            ens = _ensemble(cal, r, config, s.threads)
            rows.append([
                r,
                _m_norm(ens.mean - z_hifi, mass) / ref,
                ens.integrated_variance(mass),
                _wz_variance(ens, wz),
            ])
            logger.info("Rango %d: error medio %.4e", r, rows[-1][1])
        s.manifest.add_file(write_csv(s.out / "rank_sweep.csv",
                                      ["rank", "mean_relative_error", "integrated_variance", "wz_variance"], rows))
    except Exception as exc:
        s.manifest.fail(exc)
        _finish(s.manifest)
        raise
    return _finish(s.manifest)


def cmd_cost_estimate(params: CostParams | None = None) -> dict:
    params = params or CostParams()
    out = cost_summary(params)
    logger.info("Costo: optimización %.6g, posterior %.6g, razón %.4g",
                out["lofi_optimization"], out["posterior"], out["ratio"])
    return {"params": params.as_dict(), **out}


def cmd_oracle_check(n_instances: int = 20, seed: int = 0, output_dir: Optional[Path] = None,
                     dump: bool = False) -> tuple[bool, list[IdentityReport]]:
    reports = run_oracle_suite(n_instances, seed)
    passed = all(r.passed for r in reports)
    if output_dir is not None:
        rows = [row for r in reports for row in r.as_rows()]
        write_csv(Path(output_dir) / "oracle.csv", ["instance", "check", "error", "tolerance", "passed"],
                  ([row["instance"], row["check"], row["error"], row["tolerance"], row["passed"]] for row in rows))
        if dump:
            for label, inst in oracle_instances(n_instances, seed):
                _write_matrices(Path(output_dir) / "matrices" / label, {
                    "M_u": inst.M_u, "W_u": inst.W_u, "M_z": inst.M_z, "W_z": inst.W_z,
                    "Z": inst.Z, "D": inst.D, "A": build_A_dense(inst), "W_theta": build_Wtheta_dense(inst),
                })
    for r in reports:
        for check in r.failures:
            logger.error("Oráculo %s: %s error=%.3e > %.1e", r.label, check.name, check.error, check.tolerance)
    return passed, reports


def history(limit: int = 20) -> list[dict]:
    """Últimas corridas del registro."""
    init_db()
    runs = RunRepository(get_session()).recent(limit)
    return [
        {
            "id": run.id,
            "command": run.command,
            "benchmark": run.benchmark,
            "status": run.status,
            "seed": run.seed,
            "created_at": run.created_at.isoformat(timespec="seconds"),
            "output_dir": run.output_dir,
            "files": len(run.files),
        }
        for run in runs
    ]
