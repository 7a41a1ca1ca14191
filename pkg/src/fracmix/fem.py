"""Q1/Q2 tensor-product elements, quadrature, DoF maps and affine constraints.

The reference cell is the unit square [0, 1]^2.  Local node numbering follows
the mesh corner order (lower-left, lower-right, upper-right, upper-left); the
nine Q2 nodes are the four corners, the four edge midpoints (edge i joins
corners i and i+1 mod 4) and the cell center.

The displacement field is vector-valued Q2 with node-major interleaved
components: dof(node, comp) = 2*node + comp.  Pressure and phase field are
scalar Q1 on the mesh vertices.  Global unknowns are stacked (u, p, phi).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh

__all__ = [
    "gauss_quadrature",
    "shape_eval",
    "Quadrature",
    "DofMap",
    "ConstraintSet",
    "hanging_constraints",
    "interpolate",
]

FIELDS = ("u", "p", "phi")

# tensor indices (i, j) of the nine Q2 nodes into the 1D node set {0, 1/2, 1}
_Q2_TENSOR = ((0, 0), (2, 0), (2, 2), (0, 2), (1, 0), (2, 1), (1, 2), (0, 1), (1, 1))
_Q1_TENSOR = ((0, 0), (1, 0), (1, 1), (0, 1))


def _lin_1d(x):
    vals = np.stack([1.0 - x, x], axis=-1)
    grads = np.stack([-np.ones_like(x), np.ones_like(x)], axis=-1)
    return vals, grads


def _quad_1d(x):
    vals = np.stack([(1.0 - x) * (1.0 - 2.0 * x), 4.0 * x * (1.0 - x), x * (2.0 * x - 1.0)], axis=-1)
    grads = np.stack([4.0 * x - 3.0, 4.0 - 8.0 * x, 4.0 * x - 1.0], axis=-1)
    return vals, grads


def shape_eval(family: str, points) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate nodal basis values and reference gradients.

    Returns ``(values, grads)`` with shapes (npts, nloc) and (npts, nloc, 2).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    xi, eta = points[:, 0], points[:, 1]
    if family == "q1":
        fx, dfx = _lin_1d(xi)
        fy, dfy = _lin_1d(eta)
        tensor = _Q1_TENSOR
    elif family == "q2":
        fx, dfx = _quad_1d(xi)
        fy, dfy = _quad_1d(eta)
        tensor = _Q2_TENSOR
    else:
        raise ValueError(f"unknown element family {family!r}")
    n = len(tensor)
    vals = np.empty((points.shape[0], n))
    grads = np.empty((points.shape[0], n, 2))
    for a, (i, j) in enumerate(tensor):
        vals[:, a] = fx[:, i] * fy[:, j]
        grads[:, a, 0] = dfx[:, i] * fy[:, j]
        grads[:, a, 1] = fx[:, i] * dfy[:, j]
    return vals, grads


@dataclass(frozen=True)
class Quadrature:
    points: np.ndarray  # (nq, 2) on [0,1]^2
    weights: np.ndarray  # (nq,)


def gauss_quadrature(n: int = 3) -> Quadrature:
    """Tensor-product Gauss-Legendre rule with n points per axis on [0,1]^2."""
    t, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (t + 1.0)
    w = 0.5 * w
    xx, yy = np.meshgrid(x, x, indexing="xy")
    ww = np.outer(w, w)
    return Quadrature(np.column_stack([xx.ravel(), yy.ravel()]), ww.ravel())


class DofMap:
    """Entity-based DoF numbering over the active cells of a mesh.

    Q1 DoFs live on vertices; Q2 DoFs on vertices, edges and cells.  Fine
    half-edges along hanging faces are distinct entities from the coarse
    edge, so their DoFs exist independently and get tied by constraints.
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        acells = mesh.active_cells()
        self.active = acells
        cells = mesh.cells[acells]
        self.n_cells = cells.shape[0]

        self.vertex_ids = np.unique(cells)
        corner = np.searchsorted(self.vertex_ids, cells)  # (nA, 4)

        pairs = np.stack([cells, np.roll(cells, -1, axis=1)], axis=2).reshape(-1, 2)
        pairs = np.sort(pairs, axis=1)
        self.edge_pairs, inverse = np.unique(pairs, axis=0, return_inverse=True)
        erank = inverse.reshape(self.n_cells, 4)

        nv, ne, nc = len(self.vertex_ids), len(self.edge_pairs), self.n_cells
        self.n_q1_nodes = nv
        self.n_q2_nodes = nv + ne + nc

        self.cell_dofs_q1 = corner.astype(np.int64)
        self.cell_dofs_q2 = np.hstack(
            [corner, nv + erank, (nv + ne + np.arange(nc))[:, None]]
        ).astype(np.int64)
        u = np.empty((nc, 18), dtype=np.int64)
        u[:, 0::2] = 2 * self.cell_dofs_q2
        u[:, 1::2] = 2 * self.cell_dofs_q2 + 1
        self.cell_dofs_u = u

        self.n_u = 2 * self.n_q2_nodes
        self.n_p = nv
        self.n_phi = nv
        self.offsets = {"u": 0, "p": self.n_u, "phi": self.n_u + self.n_p}
        self.n_dofs = self.n_u + self.n_p + self.n_phi

        v = mesh.vertices
        mid = 0.5 * (v[self.edge_pairs[:, 0]] + v[self.edge_pairs[:, 1]])
        xlo, ylo, xhi, yhi = mesh.cell_bounds(acells)
        centers = np.column_stack([0.5 * (xlo + xhi), 0.5 * (ylo + yhi)])
        self.q1_coords = v[self.vertex_ids]
        self.q2_coords = np.vstack([self.q1_coords, mid, centers])
        self.cell_origin = np.column_stack([xlo, ylo])
        self.cell_size = np.column_stack([xhi - xlo, yhi - ylo])

        self._vrank = {int(vid): k for k, vid in enumerate(self.vertex_ids)}
        self._erank = {(int(a), int(b)): k for k, (a, b) in enumerate(self.edge_pairs)}
        box = mesh.bounding_box()
        self._xmax, self._ymax = box.xmax, box.ymax

    # -- numbering helpers --------------------------------------------------

    def field_slice(self, field: str) -> slice:
        start = self.offsets[field]
        size = {"u": self.n_u, "p": self.n_p, "phi": self.n_phi}[field]
        return slice(start, start + size)

    def node_coords(self, field: str) -> np.ndarray:
        return self.q2_coords if field == "u" else self.q1_coords

    def cell_dofs(self, field: str) -> np.ndarray:
        return {"u": self.cell_dofs_u, "p": self.cell_dofs_q1, "phi": self.cell_dofs_q1}[field]

    def vertex_rank(self, vertex: int) -> int:
        return self._vrank[int(vertex)]

    def edge_rank(self, va: int, vb: int) -> int:
        key = (int(min(va, vb)), int(max(va, vb)))
        return self._erank[key]

    def global_dofs(self, field: str, nodes, comp: int | None = None) -> np.ndarray:
        """Global DoF indices for the given field nodes.

        For the displacement ``comp`` selects a component; None gives both,
        interleaved.
        """
        nodes = np.atleast_1d(np.asarray(nodes, dtype=np.int64))
        off = self.offsets[field]
        if field == "u":
            if comp is None:
                return off + np.column_stack([2 * nodes, 2 * nodes + 1]).ravel()
            return off + 2 * nodes + comp
        return off + nodes

    def nodes_on(self, field: str, predicate) -> np.ndarray:
        """Field node indices whose coordinates satisfy the predicate."""
        mask = np.asarray(predicate(self.node_coords(field)), dtype=bool)
        return np.flatnonzero(mask)

    # -- point evaluation ----------------------------------------------------

    def locate(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Active-cell position and reference coordinates for each point.

        Cells own the half-open box [xlo, xhi) x [ylo, yhi); points on the
        global upper boundaries are claimed by the last cell row/column.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        o, s = self.cell_origin, self.cell_size
        pos = np.empty(points.shape[0], dtype=np.int64)
        ref = np.empty_like(points)
        for k, (x, y) in enumerate(points):
            inx = (o[:, 0] <= x) & ((x < o[:, 0] + s[:, 0]) | (x == self._xmax) & (o[:, 0] + s[:, 0] == self._xmax))
            iny = (o[:, 1] <= y) & ((y < o[:, 1] + s[:, 1]) | (y == self._ymax) & (o[:, 1] + s[:, 1] == self._ymax))
            hits = np.flatnonzero(inx & iny)
            if hits.size == 0:
                raise ValueError(f"point {(x, y)} lies outside the mesh")
            pos[k] = hits[0]
            ref[k] = [(x - o[hits[0], 0]) / s[hits[0], 0], (y - o[hits[0], 1]) / s[hits[0], 1]]
        return pos, ref

    def eval_field(self, field: str, values: np.ndarray, points) -> np.ndarray:
        """Point values of a nodal field vector (field-local numbering)."""
        pos, ref = self.locate(points)
        family = "q2" if field == "u" else "q1"
        vals, _ = shape_eval(family, ref)
        dofs = self.cell_dofs(field)[pos]
        if field == "u":
            nodal = values[dofs].reshape(len(pos), 9, 2)
            return np.einsum("ka,kai->ki", vals, nodal)
        return np.einsum("ka,ka->k", vals, values[dofs])

    def eval_gradient(self, field: str, values: np.ndarray, points) -> np.ndarray:
        """Point gradients; shape (npts, 2) for scalars, (npts, 2, 2) for u."""
        pos, ref = self.locate(points)
        family = "q2" if field == "u" else "q1"
        _, grads = shape_eval(family, ref)
        grads = grads / self.cell_size[pos][:, None, :]
        dofs = self.cell_dofs(field)[pos]
        if field == "u":
            nodal = values[dofs].reshape(len(pos), 9, 2)
            return np.einsum("kad,kai->kid", grads, nodal)
        return np.einsum("kad,ka->kd", grads, values[dofs])


class ConstraintSet:
    """Affine constraints x_c = sum_j w_j x_{m_j} + b_c in global numbering.

    Used for hanging-node continuity, Dirichlet values and active-set rows.
    ``close`` resolves chains so no constrained DoF remains a master.
    """

    def __init__(self, n_dofs: int):
        self.n_dofs = n_dofs
        self._entries: dict[int, tuple[tuple[tuple[int, float], ...], float]] = {}
        self._cache = None

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, dof: int) -> bool:
        return int(dof) in self._entries

    def add(self, dof: int, masters=(), inhomogeneity: float = 0.0) -> None:
        dof = int(dof)
        if dof in self._entries:
            raise ValueError(f"DoF {dof} is already constrained")
        self._entries[dof] = (tuple((int(m), float(w)) for m, w in masters), float(inhomogeneity))
        self._cache = None

    def add_dirichlet(self, dofs, values=0.0) -> None:
        dofs = np.atleast_1d(np.asarray(dofs, dtype=np.int64))
        values = np.broadcast_to(np.asarray(values, dtype=float), dofs.shape)
        for d, v in zip(dofs, values):
            self.add(int(d), (), float(v))

    def copy(self) -> "ConstraintSet":
        out = ConstraintSet(self.n_dofs)
        out._entries = dict(self._entries)
        return out

    def homogeneous(self) -> "ConstraintSet":
        """Same coupling pattern with all inhomogeneities zeroed (for updates)."""
        out = ConstraintSet(self.n_dofs)
        out._entries = {d: (m, 0.0) for d, (m, _) in self._entries.items()}
        return out

    def close(self) -> "ConstraintSet":
        """Substitute constrained masters until the set is self-contained."""
        for _ in range(32):
            dirty = False
            for dof, (masters, inhom) in list(self._entries.items()):
                if not any(m in self._entries for m, _ in masters):
                    continue
                new_masters: dict[int, float] = {}
                new_inhom = inhom
                for m, w in masters:
                    if m in self._entries:
                        sub_masters, sub_inhom = self._entries[m]
                        new_inhom += w * sub_inhom
                        for sm, sw in sub_masters:
                            new_masters[sm] = new_masters.get(sm, 0.0) + w * sw
                    else:
                        new_masters[m] = new_masters.get(m, 0.0) + w
                self._entries[dof] = (tuple(new_masters.items()), new_inhom)
                dirty = True
            if not dirty:
                self._cache = None
                return self
        raise RuntimeError("constraint chains did not close (cycle?)")

    def constrained_dofs(self) -> np.ndarray:
        return np.array(sorted(self._entries), dtype=np.int64)

    def mask(self) -> np.ndarray:
        m = np.zeros(self.n_dofs, dtype=bool)
        if self._entries:
            m[self.constrained_dofs()] = True
        return m

    # -- linear-algebra views -------------------------------------------------

    def _matrices(self):
        if self._cache is None:
            from scipy import sparse

            n = self.n_dofs
            free = ~self.mask()
            rows = list(np.flatnonzero(free))
            cols = list(np.flatnonzero(free))
            vals = [1.0] * len(rows)
            b = np.zeros(n)
            for dof, (masters, inhom) in self._entries.items():
                b[dof] = inhom
                for m, w in masters:
                    if m in self._entries:
                        raise RuntimeError("constraint set not closed; call close() first")
                    rows.append(dof)
                    cols.append(m)
                    vals.append(w)
            T = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
            Ic = sparse.coo_matrix(
                (np.ones(len(self._entries)), (self.constrained_dofs(), self.constrained_dofs())),
                shape=(n, n),
            ).tocsr() if self._entries else sparse.csr_matrix((n, n))
            self._cache = (T, Ic, b)
        return self._cache

    def condense(self, K):
        """T^T K T + I_c: zero constrained rows/cols, unit diagonal there."""
        T, Ic, _ = self._matrices()
        return (T.T @ K @ T + Ic).tocsr()

    def condense_rhs(self, K, f: np.ndarray) -> np.ndarray:
        """Right-hand side matching ``condense``; constrained slots become 0."""
        T, _, b = self._matrices()
        if np.any(b):
            f = f - K @ b
        return T.T @ f

    def reduce(self, r: np.ndarray) -> np.ndarray:
        """Accumulate slave residuals onto masters, zero constrained slots."""
        T, _, _ = self._matrices()
        return T.T @ r

    def distribute(self, x: np.ndarray) -> np.ndarray:
        """Fill constrained entries from masters plus inhomogeneity."""
        T, _, b = self._matrices()
        return T @ x + b


def hanging_constraints(mesh: Mesh, dof_map: DofMap) -> ConstraintSet:
    """Continuity constraints across all hanging faces.

    Q1 midpoints average their face endpoints.  Q2 fine-side nodes take the
    quadratic trace of the coarse edge: the hanging vertex coincides with the
    coarse edge node, the fine edge nodes sit at s = 1/4 and s = 3/4.
    """
    cs = ConstraintSet(dof_map.n_dofs)
    for hf in mesh.hanging_faces():
        ra = dof_map.vertex_rank(hf.va)
        rb = dof_map.vertex_rank(hf.vb)
        rm = dof_map.vertex_rank(hf.vm)
        for field in ("p", "phi"):
            cs.add(
                dof_map.global_dofs(field, rm)[0],
                [(dof_map.global_dofs(field, ra)[0], 0.5), (dof_map.global_dofs(field, rb)[0], 0.5)],
            )
        e_coarse = dof_map.n_q1_nodes + dof_map.edge_rank(hf.va, hf.vb)
        e_lo = dof_map.n_q1_nodes + dof_map.edge_rank(hf.va, hf.vm)
        e_hi = dof_map.n_q1_nodes + dof_map.edge_rank(hf.vm, hf.vb)
        for comp in (0, 1):
            d = lambda node: int(dof_map.global_dofs("u", node, comp)[0])
            cs.add(d(rm), [(d(e_coarse), 1.0)])
            cs.add(d(e_lo), [(d(ra), 0.375), (d(e_coarse), 0.75), (d(rb), -0.125)])
            cs.add(d(e_hi), [(d(ra), -0.125), (d(e_coarse), 0.75), (d(rb), 0.375)])
    return cs


def interpolate(dof_map: DofMap, field: str, fn) -> np.ndarray:
    """Nodal interpolation of ``fn(coords)`` in field-local numbering."""
    coords = dof_map.node_coords(field)
    vals = np.asarray(fn(coords), dtype=float)
    if field == "u":
        if vals.shape != (coords.shape[0], 2):
            raise ValueError("displacement interpolant must return (n, 2) values")
        return vals.ravel()
    if vals.shape != (coords.shape[0],):
        raise ValueError("scalar interpolant must return one value per node")
    return vals
