"""Axis-aligned quadrilateral meshes with one-irregular adaptive refinement.

Cells are stored as a forest: refining a cell appends its four children and
keeps the parent around (inactive) so parent/child links survive.  Meshes are
immutable; every refinement call returns a new mesh.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Mesh",
    "Box",
    "HangingFace",
    "build_rectangle",
    "refine_uniform",
    "refine_region",
    "refine_cells",
]


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle used as a refinement region predicate."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return (
            (points[..., 0] >= self.xmin)
            & (points[..., 0] <= self.xmax)
            & (points[..., 1] >= self.ymin)
            & (points[..., 1] <= self.ymax)
        )

    def overlaps(self, xlo, ylo, xhi, yhi) -> np.ndarray:
        """Positive-area overlap test against cell bounding boxes."""
        return (xlo < self.xmax) & (xhi > self.xmin) & (ylo < self.ymax) & (yhi > self.ymin)

    def inflate(self, margin: float) -> "Box":
        return Box(self.xmin - margin, self.xmax + margin, self.ymin - margin, self.ymax + margin)


@dataclass(frozen=True)
class HangingFace:
    """One coarse face carrying a hanging midpoint vertex.

    ``va``/``vb`` are the coarse corner vertices in the coarse cell's local
    face orientation and ``vm`` the fine-side midpoint vertex between them.
    """

    coarse_cell: int
    va: int
    vb: int
    vm: int


class Mesh:
    """Forest-of-quads mesh.

    Parameters
    ----------
    vertices : (n, 2) float array
    cells : (m, 4) int array
        Corner vertices ordered (lower-left, lower-right, upper-right,
        upper-left), i.e. counterclockwise.
    level, parent : (m,) int arrays
        Refinement generation and parent cell (-1 for root cells).
    children : (m, 4) int array
        Child cells, -1 rows for leaves.  Leaves are the active cells.
    edge_midpoint : dict
        Maps a sorted vertex pair to the vertex placed at the midpoint when
        that edge was first split.  Shared by all refinement generations so
        neighboring cells agree on split vertices without coordinate lookup.
    """

    def __init__(self, vertices, cells, level, parent, children, edge_midpoint):
        self.vertices = np.asarray(vertices, dtype=float)
        self.cells = np.asarray(cells, dtype=np.int64)
        self.level = np.asarray(level, dtype=np.int64)
        self.parent = np.asarray(parent, dtype=np.int64)
        self.children = np.asarray(children, dtype=np.int64)
        self.edge_midpoint = dict(edge_midpoint)
        self._validate()

    # -- basic queries ----------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def active(self) -> np.ndarray:
        return self.children[:, 0] < 0

    def active_cells(self) -> np.ndarray:
        """Indices of leaf cells, ascending."""
        return np.flatnonzero(self.active)

    @property
    def n_active(self) -> int:
        return int(np.count_nonzero(self.active))

    def cell_bounds(self, cells=None):
        """(xlo, ylo, xhi, yhi) arrays for the given cells (default: active)."""
        if cells is None:
            cells = self.active_cells()
        lo = self.vertices[self.cells[cells, 0]]
        hi = self.vertices[self.cells[cells, 2]]
        return lo[:, 0], lo[:, 1], hi[:, 0], hi[:, 1]

    def cell_diameters(self, cells=None) -> np.ndarray:
        xlo, ylo, xhi, yhi = self.cell_bounds(cells)
        return np.hypot(xhi - xlo, yhi - ylo)

    def cell_centers(self, cells=None) -> np.ndarray:
        xlo, ylo, xhi, yhi = self.cell_bounds(cells)
        return np.column_stack([0.5 * (xlo + xhi), 0.5 * (ylo + yhi)])

    def bounding_box(self) -> Box:
        v = self.vertices
        return Box(v[:, 0].min(), v[:, 0].max(), v[:, 1].min(), v[:, 1].max())

    # -- topology ----------------------------------------------------------

    def _face_key(self, a: int, b: int):
        return (a, b) if a < b else (b, a)

    def active_face_map(self) -> dict:
        """Sorted vertex pair -> list of (cell, local_face) over active cells."""
        faces: dict = {}
        for c in self.active_cells():
            verts = self.cells[c]
            for f in range(4):
                key = self._face_key(verts[f], verts[(f + 1) % 4])
                faces.setdefault(key, []).append((c, f))
        return faces

    def hanging_faces(self) -> list[HangingFace]:
        """Coarse faces whose neighbors across the face are one level finer."""
        faces = self.active_face_map()
        out = []
        for c in self.active_cells():
            verts = self.cells[c]
            for f in range(4):
                va, vb = int(verts[f]), int(verts[(f + 1) % 4])
                key = self._face_key(va, vb)
                if len(faces[key]) == 2:
                    continue  # conforming interior face
                vm = self.edge_midpoint.get(key)
                if vm is None:
                    continue  # boundary face
                if self._face_key(va, vm) in faces and self._face_key(vm, vb) in faces:
                    out.append(HangingFace(int(c), va, vb, int(vm)))
        return out

    def hanging_vertices(self) -> np.ndarray:
        return np.array(sorted({hf.vm for hf in self.hanging_faces()}), dtype=np.int64)

    # -- consistency -------------------------------------------------------

    def _validate(self) -> None:
        v = self.vertices
        cells = self.cells[self.active_cells()]
        x0, y0 = v[cells[:, 0], 0], v[cells[:, 0], 1]
        x1, y1 = v[cells[:, 1], 0], v[cells[:, 1], 1]
        x2, y2 = v[cells[:, 2], 0], v[cells[:, 2], 1]
        x3, y3 = v[cells[:, 3], 0], v[cells[:, 3], 1]
        ok = (
            np.allclose(y0, y1)
            and np.allclose(x1, x2)
            and np.allclose(y2, y3)
            and np.allclose(x3, x0)
            and np.all(x1 > x0)
            and np.all(y2 > y1)
        )
        if not ok:
            raise ValueError("active cells must be axis-aligned rectangles with CCW corners")

    def check_one_irregular(self) -> bool:
        """Adjacent active cells never differ by more than one level."""
        faces = self.active_face_map()
        for cells in faces.values():
            if len(cells) == 2:
                (c0, _), (c1, _) = cells
                if abs(int(self.level[c0]) - int(self.level[c1])) > 1:
                    return False
        for hf in self.hanging_faces():
            fine = faces[self._face_key(hf.va, hf.vm)] + faces[self._face_key(hf.vm, hf.vb)]
            for c, _ in fine:
                if int(self.level[c]) - int(self.level[hf.coarse_cell]) != 1:
                    return False
        return True


# -- construction ----------------------------------------------------------


def build_rectangle(
    lower: Sequence[float],
    upper: Sequence[float],
    subdivisions: Sequence[int],
    slit: tuple[float, float, float] | None = None,
) -> Mesh:
    """Uniform tensor grid on [lower, upper] with ``subdivisions`` cells per axis.

    ``slit=(x_start, x_end, y)`` duplicates every grid vertex on the open
    segment {y} x [x_start, x_end) and re-points the cells below the line to
    the duplicates, so the two crack lips carry independent DoFs while the
    tip vertex at ``x_end`` stays shared.
    """
    nx, ny = int(subdivisions[0]), int(subdivisions[1])
    if nx < 1 or ny < 1:
        raise ValueError("subdivisions must be positive")
    x = np.linspace(lower[0], upper[0], nx + 1)
    y = np.linspace(lower[1], upper[1], ny + 1)
    xx, yy = np.meshgrid(x, y, indexing="xy")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(i, j):  # column i, row j
        return j * (nx + 1) + i

    cells = np.empty((nx * ny, 4), dtype=np.int64)
    k = 0
    for j in range(ny):
        for i in range(nx):
            cells[k] = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1))
            k += 1

    if slit is not None:
        x_start, x_end, y_slit = slit
        tol = 1e-9 * max(upper[0] - lower[0], upper[1] - lower[1])
        if not np.any(np.abs(y - y_slit) < tol):
            raise ValueError("slit line must coincide with a horizontal grid line")
        on_slit = np.flatnonzero(
            (np.abs(vertices[:, 1] - y_slit) < tol)
            & (vertices[:, 0] >= x_start - tol)
            & (vertices[:, 0] < x_end - tol)
        )
        twin = {}
        new_vertices = [vertices]
        next_id = vertices.shape[0]
        for v in on_slit:
            twin[int(v)] = next_id
            new_vertices.append(vertices[v][None, :])
            next_id += 1
        vertices = np.vstack(new_vertices)
        centers_y = 0.25 * (
            vertices[cells[:, 0], 1]
            + vertices[cells[:, 1], 1]
            + vertices[cells[:, 2], 1]
            + vertices[cells[:, 3], 1]
        )
        below = centers_y < y_slit
        for c in np.flatnonzero(below):
            for loc in range(4):
                t = twin.get(int(cells[c, loc]))
                if t is not None:
                    cells[c, loc] = t

    m = cells.shape[0]
    return Mesh(
        vertices,
        cells,
        level=np.zeros(m, dtype=np.int64),
        parent=np.full(m, -1, dtype=np.int64),
        children=np.full((m, 4), -1, dtype=np.int64),
        edge_midpoint={},
    )


# -- refinement ------------------------------------------------------------


def refine_cells(mesh: Mesh, marked: Iterable[int]) -> Mesh:
    """Refine the marked active cells, closing the marks so the result stays
    one-irregular (a marked cell drags a strictly coarser neighbor along)."""
    marked = set(int(c) for c in marked)
    active = set(int(c) for c in mesh.active_cells())
    if not marked.issubset(active):
        raise ValueError("can only refine active cells")

    faces = mesh.active_face_map()
    mid_of = {vm: key for key, vm in mesh.edge_midpoint.items()}

    def neighbor_across(c: int, f: int):
        verts = mesh.cells[c]
        va, vb = int(verts[f]), int(verts[(f + 1) % 4])
        key = mesh._face_key(va, vb)
        entries = [e for e in faces[key] if e[0] != c]
        if entries:
            return entries[0][0]
        # c may sit on the fine side of a hanging face; recover the coarse cell
        for end in (va, vb):
            coarse_key = mid_of.get(end)
            if coarse_key is not None and (va in coarse_key or vb in coarse_key):
                entry = faces.get(coarse_key)
                if entry:
                    return entry[0][0]
        return None

    # closure: marking a cell must also mark any active neighbor one level coarser
    frontier = list(marked)
    while frontier:
        c = frontier.pop()
        for f in range(4):
            n = neighbor_across(c, f)
            if n is not None and n not in marked and mesh.level[n] < mesh.level[c]:
                marked.add(n)
                frontier.append(n)

    vertices = [mesh.vertices]
    next_vertex = mesh.n_vertices
    edge_mid = dict(mesh.edge_midpoint)

    def midpoint(a: int, b: int) -> int:
        nonlocal next_vertex
        key = mesh._face_key(a, b)
        m = edge_mid.get(key)
        if m is None:
            m = next_vertex
            edge_mid[key] = m
            coords = 0.5 * (_vertex(a) + _vertex(b))
            vertices.append(coords[None, :])
            next_vertex += 1
        return m

    def _vertex(v: int) -> np.ndarray:
        if v < mesh.n_vertices:
            return mesh.vertices[v]
        return vertices[1 + (v - mesh.n_vertices)][0]

    cells = [mesh.cells]
    level = [mesh.level]
    parent = [mesh.parent]
    children = mesh.children.copy()
    next_cell = mesh.cells.shape[0]

    new_cells, new_level, new_parent = [], [], []
    for c in sorted(marked):
        v0, v1, v2, v3 = (int(v) for v in mesh.cells[c])
        m01 = midpoint(v0, v1)
        m12 = midpoint(v1, v2)
        m23 = midpoint(v2, v3)
        m30 = midpoint(v3, v0)
        center = 0.5 * (_vertex(v0) + _vertex(v2))
        vc = next_vertex
        vertices.append(center[None, :])
        next_vertex += 1
        quads = (
            (v0, m01, vc, m30),
            (m01, v1, m12, vc),
            (vc, m12, v2, m23),
            (m30, vc, m23, v3),
        )
        ids = []
        for q in quads:
            new_cells.append(q)
            new_level.append(mesh.level[c] + 1)
            new_parent.append(c)
            ids.append(next_cell)
            next_cell += 1
        children[c] = ids

    if not new_cells:
        return mesh

    all_children = np.vstack([children, np.full((len(new_cells), 4), -1, dtype=np.int64)])
    return Mesh(
        np.vstack(vertices),
        np.vstack([mesh.cells, np.array(new_cells, dtype=np.int64)]),
        np.concatenate([mesh.level, np.array(new_level, dtype=np.int64)]),
        np.concatenate([mesh.parent, np.array(new_parent, dtype=np.int64)]),
        all_children,
        edge_mid,
    )


def refine_uniform(mesh: Mesh, times: int = 1) -> Mesh:
    for _ in range(times):
        mesh = refine_cells(mesh, mesh.active_cells())
    return mesh


def refine_region(mesh: Mesh, region: Box | Callable[[np.ndarray], np.ndarray], times: int = 1) -> Mesh:
    """Refine all active cells intersecting ``region`` ``times`` times.

    A Box matches cells with positive-area overlap; a callable predicate is
    evaluated at cell centers.
    """
    for _ in range(times):
        cells = mesh.active_cells()
        if isinstance(region, Box):
            xlo, ylo, xhi, yhi = mesh.cell_bounds(cells)
            hit = region.overlaps(xlo, ylo, xhi, yhi)
        else:
            hit = np.asarray(region(mesh.cell_centers(cells)), dtype=bool)
        mesh = refine_cells(mesh, cells[hit])
    return mesh
