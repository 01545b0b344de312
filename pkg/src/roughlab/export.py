"""Legacy VTK ASCII and CSV writers."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .fem import NewtonDiagnostics
from .lab import rows_to_csv
from .meshing import TriangleMesh


def vtk_text(mesh: TriangleMesh, point_data: Optional[Mapping[str, np.ndarray]] = None,
             cell_data: Optional[Mapping[str, np.ndarray]] = None, title: str = "roughlab") -> str:
    """UNSTRUCTURED_GRID of triangles (cell type 5) with scalar point and cell data."""
    v = mesh.vertices
    t = mesh.triangles
    out = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
           "DATASET UNSTRUCTURED_GRID", f"POINTS {len(v)} double"]
    out += [f"{x:.17g} {y:.17g} 0" for x, y in v]
    out.append(f"CELLS {len(t)} {4 * len(t)}")
    out += [f"3 {a} {b} {c}" for a, b, c in t]
    out.append(f"CELL_TYPES {len(t)}")
    out += ["5"] * len(t)
    if point_data:
        out.append(f"POINT_DATA {len(v)}")
        for name, vals in point_data.items():
            out += _scalars(name, vals, len(v))
    cells = {"region": mesh.region, **(cell_data or {})}
    out.append(f"CELL_DATA {len(t)}")
    for name, vals in cells.items():
        out += _scalars(name, vals, len(t))
    return "\n".join(out) + "\n"


def _scalars(name: str, vals, n: int) -> list:
    vals = np.asarray(vals)
    if vals.shape != (n,):
        raise ValueError(f"data {name!r} has shape {vals.shape}, expected ({n},)")
    kind = "int" if np.issubdtype(vals.dtype, np.integer) else "double"
    fmt = (lambda a: str(int(a))) if kind == "int" else (lambda a: f"{float(a):.17g}")
    return [f"SCALARS {name} {kind} 1", "LOOKUP_TABLE default"] + [fmt(a) for a in vals]


def write_vtk(path, mesh: TriangleMesh, point_data=None, cell_data=None, title: str = "roughlab") -> Path:
    path = Path(path)
    path.write_text(vtk_text(mesh, point_data, cell_data, title))
    return path


def newton_csv(stages) -> str:
    """Newton history of a continuation run: one row per (stage, iteration)."""
    rows = []
    for s in stages:
        diag: NewtonDiagnostics = s["newton"]
        for it, res, damp in diag.rows():
            rows.append((s["p"], it, res, damp, s.get("picard_iterations", 0)))
    return rows_to_csv(("p", "iteration", "residual", "damping", "picard_iterations"), rows)


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.write_text(text)
    return path
