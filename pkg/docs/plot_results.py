"""
Figuras a partir de las tablas CSV de una corrida (la herramienta nunca grafica).

Uso:
    python docs/plot_results.py results/diffusion_reaction [--out figuras/]

Lee lo que encuentre en <resultados>/run y <resultados>/rank-sweep:
- ensemble_r*.csv      media posterior ± 2 desviaciones frente a z̃ (controles 1D)
- objective_r*.csv     histograma de J(S(z^k), z^k) con los marcadores de markers.csv
- eigenvalues.csv      decaimiento de ρ_j
- rank_sweep.csv       error relativo de la media y varianza integrada por rango
"""

from __future__ import annotations

import argparse
import re
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from src.reports.export import read_csv_columns  # noqa: E402

RANK_FILE = re.compile(r"_r(\d+)\.csv$")


def _rank(path: Path) -> int:
    m = RANK_FILE.search(path.name)
    return int(m.group(1)) if m else -1


def _save(fig, out: Path, name: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    print(f"[OK] {path}")
    return path


def plot_ensembles(run_dir: Path, out: Path) -> None:
    for path in sorted(run_dir.glob("ensemble_r*.csv"), key=_rank):
        cols = read_csv_columns(path)
        coord = next(iter(cols))
        if coord == "index" or "std" not in cols:
            continue  # controlador paramétrico: no hay eje espacial
        x = cols[coord]
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(x, cols["z_tilde"], "k--", label="z̃")
        ax.plot(x, cols["mean"], "C0", label="z̄")
        ax.fill_between(x, cols["mean"] - 2 * cols["std"], cols["mean"] + 2 * cols["std"], color="C0", alpha=0.25,
                        label="±2σ")
        ax.set_xlabel(coord)
        ax.set_title(f"Posterior de soluciones, r = {_rank(path)}")
        ax.legend()
        _save(fig, out, f"ensemble_r{_rank(path)}.png")


def plot_objectives(run_dir: Path, out: Path) -> None:
    markers = {}
    if (run_dir / "markers.csv").exists():
        with (run_dir / "markers.csv").open(encoding="utf-8") as fh:
            next(fh)
            for line in fh:
                name, _, value = line.strip().split(",")
                markers[name] = float(value)
    for path in sorted(run_dir.glob("objective_r*.csv"), key=_rank):
        values = read_csv_columns(path)["objective"]
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.hist(values, bins=30, color="C0", alpha=0.7)
        for k, (name, value) in enumerate(markers.items()):
            if name.startswith("z_bar_r") and name != f"z_bar_r{_rank(path)}":
                continue
            ax.axvline(value, color=f"C{k + 1}", linestyle="--", label=name)
        ax.set_xlabel("J(S(z), z)")
        ax.legend()
        _save(fig, out, f"objective_r{_rank(path)}.png")


def plot_eigenvalues(run_dir: Path, out: Path) -> None:
    path = run_dir / "eigenvalues.csv"
    if not path.exists():
        return
    cols = read_csv_columns(path)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.semilogy(cols["index"], cols["rho"], "o-")
    ax.set_xlabel("j")
    ax.set_ylabel("ρ_j")
    _save(fig, out, "eigenvalues.png")


def plot_rank_sweep(sweep_dir: Path, out: Path) -> None:
    path = sweep_dir / "rank_sweep.csv"
    if not path.exists():
        return
    cols = read_csv_columns(path)
    fig, (left, right) = plt.subplots(1, 2, figsize=(10, 4))
    left.semilogy(cols["rank"], cols["mean_relative_error"], "o-")
    left.set_xlabel("r")
    left.set_ylabel("‖z̄ − z*‖ / ‖z*‖")
    right.plot(cols["rank"], cols["integrated_variance"], "o-")
    right.set_xlabel("r")
    right.set_ylabel("varianza integrada")
    _save(fig, out, "rank_sweep.png")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Figuras a partir de las tablas de una corrida")
    parser.add_argument("results", type=Path, help="carpeta output_dir de la corrida")
    parser.add_argument("--out", type=Path, default=None, help="carpeta de figuras (por defecto <results>/figures)")
    args = parser.parse_args(argv)
    out = args.out or args.results / "figures"
    run_dir = args.results / "run"
    plot_ensembles(run_dir, out)
    plot_objectives(run_dir, out)
    plot_eigenvalues(run_dir, out)
    plot_rank_sweep(args.results / "rank-sweep", out)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
