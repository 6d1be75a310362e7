"""CSV and legacy VTK output."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np


class OutputError(OSError):
    pass


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "nan" if math.isnan(x) else repr(float(x))
    return str(x)


def write_csv(rows: Iterable[Mapping], path, columns: Sequence[str],
              header: Optional[Mapping] = None) -> Path:
    """Write ``rows`` with a fixed column order.

    ``header`` entries become leading ``# key = value`` comment lines.  Floats
    are written with ``repr`` so a round trip through :func:`read_csv` is exact.
    """
    path = Path(path)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for k, v in (header or {}).items():
                fh.write(f"# {k} = {_fmt(v)}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([_fmt(row.get(c)) for c in columns])
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def _parse(s):
    if s == "":
        return None
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def read_csv(path):
    """Returns ``(header dict, columns, rows)``; numeric fields are parsed."""
    path = Path(path)
    header = {}
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, val = line[1:].partition("=")
            header[key.strip()] = val.strip()
        else:
            body.append(line)
    reader = csv.reader(body)
    columns = next(reader)
    rows = [{c: _parse(v) for c, v in zip(columns, rec)} for rec in reader]
    return header, columns, rows


def write_vtk(mesh, path, v=None, p=None, B=None, title="vefem state") -> Path:
    """Legacy ASCII VTK 3.0 unstructured grid of the P1 triangulation.

    Velocity is written at the vertices (the vertex values of the P2 field);
    B is written as a full 3x3 tensor with zero third row and column.
    """
    path = Path(path)
    nv = mesh.n_vertices
    nt = mesh.n_triangles
    out = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {nv} double"]
    out += [f"{x!r} {y!r} 0.0" for x, y in mesh.vertices]
    out.append(f"CELLS {nt} {4 * nt}")
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    out.append(f"CELL_TYPES {nt}")
    out += ["5"] * nt
    if v is not None or p is not None or B is not None:
        out.append(f"POINT_DATA {nv}")
    if p is not None:
        out += ["SCALARS pressure double 1", "LOOKUP_TABLE default"]
        out += [repr(float(x)) for x in p]
    if v is not None:
        vv = np.asarray(v)[:nv]
        out.append("VECTORS velocity double")
        out += [f"{a!r} {b!r} 0.0" for a, b in vv.tolist()]
    if B is not None:
        out.append("TENSORS B double")
        for b11, b12, b22 in np.asarray(B).tolist():
            out += [f"{b11!r} {b12!r} 0.0", f"{b12!r} {b22!r} 0.0", "0.0 0.0 0.0", ""]
    try:
        path.write_text("\n".join(out) + "\n", encoding="ascii")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path
