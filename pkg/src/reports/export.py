"""
Escritura de tablas numéricas de una corrida.

Los CSV llevan una línea de encabezado y flotantes con 17 cifras significativas,
de modo que dos corridas con la misma configuración producen archivos idénticos.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from openpyxl import Workbook
from openpyxl.styles import Alignment, Font, PatternFill
from openpyxl.utils import get_column_letter

logger = logging.getLogger("hdsa.cli")

FLOAT_FORMAT = "%.17g"


def _cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT % float(value)
    return "" if value is None else str(value)


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """CSV con encabezado de una línea; filas de cualquier iterable de secuencias."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = len(header)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            row = list(row)
            if len(row) != n:
                raise ValueError(f"{path.name}: fila con {len(row)} columnas, se esperaban {n}")
            writer.writerow([_cell(v) for v in row])
    logger.debug("CSV escrito: %s", path)
    return path


def write_columns(path: Path, columns: Mapping[str, np.ndarray]) -> Path:
    """Columnas del mismo largo (coordenadas seguidas de campos) como tabla."""
    arrays = [np.asarray(c) for c in columns.values()]
    lengths = {a.shape[0] for a in arrays}
    if len(lengths) > 1:
        raise ValueError(f"{Path(path).name}: columnas de largo distinto {sorted(lengths)}")
    return write_csv(path, list(columns), zip(*arrays))


def field_columns(coords: np.ndarray, coord_names: Sequence[str], fields: Mapping[str, np.ndarray]) -> dict:
    coords = np.atleast_2d(np.asarray(coords))
    out: dict[str, np.ndarray] = {name: coords[:, j] for j, name in enumerate(coord_names)}
    out.update({k: np.asarray(v) for k, v in fields.items()})
    return out


def write_samples(path: Path, coords: np.ndarray, coord_names: Sequence[str], samples: np.ndarray, prefix: str = "sample") -> Path:
    """Una fila por nodo, una columna por muestra."""
    samples = np.atleast_2d(samples)
    fields = {f"{prefix}_{k}": samples[k] for k in range(samples.shape[0])}
    return write_columns(path, field_columns(coords, coord_names, fields))


def write_triplets(path: Path, matrix: sp.spmatrix) -> Path:
    """Línea '% filas columnas nnz' y luego 'row col value' ordenado por fila y columna."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"% {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for k in order:
            fh.write(f"{coo.row[k]} {coo.col[k]} {FLOAT_FORMAT % coo.data[k]}\n")
    return path


def write_json(path: Path, data: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
    return path


def _json_default(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"No serializable: {type(obj).__name__}")


def read_csv_columns(path: Path) -> dict[str, np.ndarray]:
    """Lee un CSV escrito por write_csv como columnas numéricas."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return {name: data[:, j] for j, name in enumerate(header)}


# ---------------------------
# Libro XLSX
# ---------------------------
def export_workbook(path: Path, csv_paths: Sequence[Path], title: str, max_rows: int = 100_000) -> Path:
    """Una hoja por tabla CSV, con encabezado destacado y ancho automático."""
    wb = Workbook()
    wb.remove(wb.active)
    for csv_path in csv_paths:
        ws = wb.create_sheet(title=Path(csv_path).stem[:31])
        with Path(csv_path).open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            ws.append(header)
            for i, row in enumerate(reader):
                if i >= max_rows:
                    logger.warning("%s truncada a %d filas en el libro", Path(csv_path).name, max_rows)
                    break
                ws.append([_to_number(v) for v in row])
        for c in range(1, len(header) + 1):
            cell = ws.cell(row=1, column=c)
            cell.font = Font(bold=True)
            cell.alignment = Alignment(horizontal="center")
            cell.fill = PatternFill("solid", fgColor="DDDDDD")
            letter = get_column_letter(c)
            ws.column_dimensions[letter].width = min(max(12, len(header[c - 1]) + 2), 40)
        ws.freeze_panes = "A2"
    if not wb.sheetnames:
        wb.create_sheet(title="vacio")
    wb.properties.title = title
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    wb.save(path)
    return path


def _to_number(value: str) -> Any:
    try:
        return float(value)
    except ValueError:
        return value
