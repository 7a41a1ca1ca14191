"""Benchmark artifacts: stats table, crack-opening profile, legacy VTK fields."""
from __future__ import annotations

import csv
import os

import numpy as np

from .fem import DofMap
from .model import State

__all__ = ["fmt", "write_stats", "write_cod_profile", "write_vtk", "write_outputs"]


def fmt(value) -> str:
    """Full-precision text for doubles; ints and strings pass through."""
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def _open_for_write(path: str):
    try:
        return open(path, "w", newline="")
    except OSError as exc:
        raise RuntimeError(f"cannot write output file {path}: {exc}") from exc


def write_stats(report, path: str) -> None:
    with _open_for_write(path) as fh:
        writer = csv.writer(fh)
        writer.writerow(report.columns)
        for row in report.rows:
            writer.writerow([fmt(v) for v in row])


def write_cod_profile(report, path: str) -> None:
    xs, vals, refs = report.profile
    with _open_for_write(path) as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "cod", "cod_ref"])
        for x, v, r in zip(xs, vals, refs):
            writer.writerow([fmt(x), fmt(v), fmt(r)])


def write_vtk(path: str, dof_map: DofMap, state: State) -> None:
    """Legacy ASCII unstructured grid with u, p, phi at the mesh vertices.

    Slit meshes carry duplicated vertices, so both crack lips keep their own
    point data.
    """
    nv = dof_map.n_q1_nodes
    points = dof_map.q1_coords
    cells = dof_map.cell_dofs_q1
    ux = state.u[0:2 * nv:2]
    uy = state.u[1:2 * nv:2]
    with _open_for_write(path) as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write("displacement, pressure and phase field\n")
        fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {nv} double\n")
        for x, y in points:
            fh.write(f"{fmt(x)} {fmt(y)} 0\n")
        fh.write(f"CELLS {len(cells)} {5 * len(cells)}\n")
        for quad in cells:
            fh.write("4 " + " ".join(str(int(v)) for v in quad) + "\n")
        fh.write(f"CELL_TYPES {len(cells)}\n")
        fh.write("9\n" * len(cells))
        fh.write(f"POINT_DATA {nv}\n")
        fh.write("VECTORS u double\n")
        for a, b in zip(ux, uy):
            fh.write(f"{fmt(a)} {fmt(b)} 0\n")
        fh.write("SCALARS p double 1\nLOOKUP_TABLE default\n")
        for v in state.p:
            fh.write(fmt(v) + "\n")
        fh.write("SCALARS phi double 1\nLOOKUP_TABLE default\n")
        for v in state.phi:
            fh.write(fmt(v) + "\n")


def write_outputs(report, state: State | None, dof_map: DofMap, out_dir: str) -> None:
    """stats.csv always; cod_profile.csv and fields.vtk when data exists."""
    os.makedirs(out_dir, exist_ok=True)
    write_stats(report, os.path.join(out_dir, "stats.csv"))
    if report.profile is not None:
        write_cod_profile(report, os.path.join(out_dir, "cod_profile.csv"))
    if state is not None:
        write_vtk(os.path.join(out_dir, "fields.vtk"), dof_map, state)
