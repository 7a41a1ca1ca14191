"""Vectorized assembly of the mixed (u, p, phi) fracture system.

Newton system layout, with g = g(phi_tilde) frozen per loading step:

    [ g A_u   g B^T   0 ] [du  ]   [r_u  ]
    [ g B    -M_p/la  0 ] [dp  ] = [r_p  ]
    [ E       F       L ] [dphi]   [r_phi]

The (u, p) rows are linear in (u, p) once phi_tilde is fixed, so their cell
data is cached per step; the phi row and the residual are reassembled each
Newton iteration.  All element contributions are scattered through one frozen
COO-to-CSR pattern, which makes reassembly a bincount instead of a sparse
matrix build.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .fem import ConstraintSet, DofMap, Quadrature, gauss_quadrature, shape_eval
from .model import MaterialParams, State, degradation

__all__ = ["BlockVector", "BlockMatrix", "Assembler"]


@dataclass
class BlockVector:
    """The three stacked field vectors of one mixed unknown."""

    u: np.ndarray
    p: np.ndarray
    phi: np.ndarray

    def full(self) -> np.ndarray:
        return np.concatenate([self.u, self.p, self.phi])

    @classmethod
    def from_full(cls, vec: np.ndarray, dof_map: DofMap) -> "BlockVector":
        return cls(
            vec[dof_map.field_slice("u")].copy(),
            vec[dof_map.field_slice("p")].copy(),
            vec[dof_map.field_slice("phi")].copy(),
        )

    def norm(self) -> float:
        return float(np.sqrt(np.dot(self.u, self.u) + np.dot(self.p, self.p) + np.dot(self.phi, self.phi)))


class BlockMatrix:
    """A square CSR matrix with named (u, p, phi) block views."""

    _index = {"u": 0, "p": 1, "phi": 2}

    def __init__(self, matrix: sparse.csr_matrix, dof_map: DofMap):
        self.matrix = matrix.tocsr()
        self.dof_map = dof_map
        self._blocks: dict = {}

    @property
    def shape(self):
        return self.matrix.shape

    def block(self, row: str, col: str) -> sparse.csr_matrix:
        key = (row, col)
        if key not in self._blocks:
            r = self.dof_map.field_slice(row)
            c = self.dof_map.field_slice(col)
            sub = self.matrix[r, c].copy()
            sub.eliminate_zeros()
            self._blocks[key] = sub.tocsr()
        return self._blocks[key]

    def __matmul__(self, vec: np.ndarray) -> np.ndarray:
        return self.matrix @ vec


class _Pattern:
    """Frozen COO layout: raw entry -> position in a canonical CSR."""

    def __init__(self, rows: np.ndarray, cols: np.ndarray, shape: tuple[int, int]):
        n_rows, n_cols = shape
        keys = rows.astype(np.int64) * n_cols + cols.astype(np.int64)
        uniq, inverse = np.unique(keys, return_inverse=True)
        self.entry_pos = inverse
        self.nnz = uniq.size
        urows = (uniq // n_cols).astype(np.int32)
        self.indices = (uniq % n_cols).astype(np.int32)
        self.indptr = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(urows, minlength=n_rows), out=self.indptr[1:])
        self.shape = shape

    def build(self, data: np.ndarray) -> sparse.csr_matrix:
        vals = np.bincount(self.entry_pos, weights=data, minlength=self.nnz)
        return sparse.csr_matrix((vals, self.indices, self.indptr), shape=self.shape)


class Assembler:
    """Element integration engine bound to one DofMap.

    Parameters
    ----------
    dof_map : DofMap
    quadrature : Quadrature, optional
        Defaults to the 3x3 Gauss rule.
    cell_inv_lambda : (n_cells,) array, optional
        Per-cell override of params.inv_lambda (layered materials).
    cell_mu : (n_cells,) array, optional
        Per-cell override of params.mu (layered materials).
    body_force : tuple | callable, optional
        Constant (fx, fy) or a callable mapping (m, 2) points to (m, 2)
        force densities.
    """

    def __init__(self, dof_map: DofMap, quadrature: Quadrature | None = None,
                 cell_inv_lambda=None, cell_mu=None, body_force=None):
        self.dof_map = dof_map
        self.quad = quadrature if quadrature is not None else gauss_quadrature(3)
        dm = dof_map

        self.Vq1, self.Gq1 = shape_eval("q1", self.quad.points)
        self.Vq2, self.Gq2 = shape_eval("q2", self.quad.points)
        size = dm.cell_size
        self.detJw = (size[:, 0] * size[:, 1])[:, None] * self.quad.weights[None, :]
        self.inv_s = 1.0 / size
        self.inv_s2 = self.inv_s**2
        # physical coordinates of the quadrature points, (C, nq, 2)
        self.xq = dm.cell_origin[:, None, :] + self.quad.points[None, :, :] * size[:, None, :]

        self.cell_inv_lambda = None if cell_inv_lambda is None else np.asarray(cell_inv_lambda, float)
        self.cell_mu = None if cell_mu is None else np.asarray(cell_mu, float)
        if body_force is None:
            self.fq = None
        elif callable(body_force):
            self.fq = np.asarray(body_force(self.xq.reshape(-1, 2)), float).reshape(self.xq.shape)
        else:
            self.fq = np.broadcast_to(np.asarray(body_force, float), self.xq.shape).copy()

        gu = dm.cell_dofs_u
        gp = dm.offsets["p"] + dm.cell_dofs_q1
        gf = dm.offsets["phi"] + dm.cell_dofs_q1
        blocks = [(gu, gu), (gu, gp), (gp, gu), (gp, gp), (gf, gu), (gf, gp), (gf, gf)]
        rows = np.concatenate([np.repeat(r, c.shape[1], axis=1).ravel() for r, c in blocks])
        cols = np.concatenate([np.tile(c, (1, r.shape[1])).ravel() for r, c in blocks])
        self._sizes = [r.shape[1] * c.shape[1] * dm.n_cells for r, c in blocks]
        self._pattern = _Pattern(rows, cols, (dm.n_dofs, dm.n_dofs))

        prows = np.repeat(dm.cell_dofs_q1, 4, axis=1).ravel()
        pcols = np.tile(dm.cell_dofs_q1, (1, 4)).ravel()
        self._p_pattern = _Pattern(prows, pcols, (dm.n_p, dm.n_p))

        self._step_key = None
        self._step_data = None

    # -- field sampling -----------------------------------------------------

    def q1_at_quadrature(self, nodal: np.ndarray) -> np.ndarray:
        return np.einsum("ca,qa->cq", nodal[self.dof_map.cell_dofs_q1], self.Vq1)

    def q1_grad_at_quadrature(self, nodal: np.ndarray) -> np.ndarray:
        g = np.einsum("ca,qad->cqd", nodal[self.dof_map.cell_dofs_q1], self.Gq1)
        return g * self.inv_s[:, None, :]

    def fields_at_quadrature(self, state: State) -> dict:
        """Quadrature-point samples of the state, keyed by name."""
        dm = self.dof_map
        un = state.u[dm.cell_dofs_u].reshape(dm.n_cells, 9, 2)
        grad_u = np.einsum("cai,qad->cqid", un, self.Gq2) * self.inv_s[:, None, None, :]
        eps_u = 0.5 * (grad_u + np.swapaxes(grad_u, -1, -2))
        return {
            "u": np.einsum("cai,qa->cqi", un, self.Vq2),
            "grad_u": grad_u,
            "eps_u": eps_u,
            "div_u": grad_u[..., 0, 0] + grad_u[..., 1, 1],
            "p": self.q1_at_quadrature(state.p),
            "phi": self.q1_at_quadrature(state.phi),
            "grad_phi": self.q1_grad_at_quadrature(state.phi),
            "xq": self.xq,
            "detJw": self.detJw,
        }

    def phi_lumped_mass(self) -> np.ndarray:
        """Row sums of the Q1 mass matrix (diagonal lumping weights)."""
        cell = np.einsum("cq,qa->ca", self.detJw, self.Vq1)
        return np.bincount(self.dof_map.cell_dofs_q1.ravel(), weights=cell.ravel(),
                           minlength=self.dof_map.n_phi)

    def _inv_lambda(self, params: MaterialParams) -> np.ndarray:
        if self.cell_inv_lambda is not None:
            return self.cell_inv_lambda
        return np.full(self.dof_map.n_cells, params.inv_lambda)

    def _mu(self, params: MaterialParams) -> np.ndarray:
        if self.cell_mu is not None:
            return self.cell_mu
        return np.full(self.dof_map.n_cells, params.mu)

    # -- step-constant data ---------------------------------------------------

    def prepare_step(self, phi_tilde: np.ndarray, params: MaterialParams) -> None:
        """Assemble the g(phi_tilde)-weighted (u, p) blocks and load vector."""
        kappa, rho = params.kappa, params.rho
        mu_c = self._mu(params)
        gq = degradation(self.q1_at_quadrature(phi_tilde), kappa)  # (C, nq)
        Wg = self.detJw * gq
        Wgm = Wg * mu_c[:, None]
        G2, V1, G1 = self.Gq2, self.Vq1, self.Gq1
        C = self.dof_map.n_cells

        lap = np.zeros((C, 9, 9))
        for d in (0, 1):
            lap += np.einsum("cq,qa,qb->cab", Wgm * self.inv_s2[:, d:d + 1], G2[:, :, d], G2[:, :, d])
        K_uu = np.zeros((C, 18, 18))
        for i in (0, 1):
            for j in (0, 1):
                block = np.einsum("cq,qa,qb->cab", Wgm, G2[:, :, j], G2[:, :, i])
                block *= (self.inv_s[:, j] * self.inv_s[:, i])[:, None, None]
                if i == j:
                    block = block + lap
                K_uu[:, i::2, j::2] = block

        K_up = np.zeros((C, 18, 4))
        for i in (0, 1):
            K_up[:, i::2, :] = np.einsum("cq,qa,qb->cab", Wg, G2[:, :, i], V1) \
                * self.inv_s[:, i, None, None]
        K_pu = np.swapaxes(K_up, 1, 2)

        inv_lam = self._inv_lambda(params)
        K_pp = -inv_lam[:, None, None] * np.einsum("cq,qa,qb->cab", self.detJw, V1, V1)

        # step-constant residual pieces: pressure work and body force
        phq = self.q1_at_quadrature(phi_tilde)
        r_u = np.zeros((C, 18))
        if rho != 0.0:
            Wp = self.detJw * (phq**2 * rho)
            for i in (0, 1):
                r_u[:, i::2] = np.einsum("cq,qa->ca", Wp * self.inv_s[:, i:i + 1], G2[:, :, i])
        if self.fq is not None:
            for i in (0, 1):
                r_u[:, i::2] -= np.einsum("cq,qa->ca", self.detJw * self.fq[..., i], self.Vq2)

        self._step_key = (phi_tilde.tobytes(), params)
        self._step_data = {
            "gq": gq,
            "uu": K_uu.ravel(), "up": K_up.ravel(), "pu": K_pu.ravel(), "pp": K_pp.ravel(),
            "r_u_const": r_u,
        }

    def _step(self, phi_tilde: np.ndarray, params: MaterialParams) -> dict:
        key = (phi_tilde.tobytes(), params)
        if self._step_key != key:
            self.prepare_step(phi_tilde, params)
        return self._step_data

    # -- residual and Jacobian --------------------------------------------------

    def residual(self, state: State, phi_tilde: np.ndarray, params: MaterialParams,
                 constraints: ConstraintSet | None = None) -> BlockVector:
        """Assembled residual; with constraints, reduced onto free DoFs."""
        dm = self.dof_map
        step = self._step(phi_tilde, params)
        kappa, rho, gc, eps = params.kappa, params.rho, params.gc, params.eps
        mu_c = self._mu(params)
        f = self.fields_at_quadrature(state)
        gq = step["gq"]

        tr_e = f["div_u"]
        sig_colon_e = 2.0 * mu_c[:, None] * np.einsum("cqid,cqid->cq", f["eps_u"], f["eps_u"]) \
            + f["p"] * tr_e

        r_u = step["r_u_const"].copy()
        # g * (2 mu E(u) . grad N + p grad N)
        flux = 2.0 * mu_c[:, None, None, None] * np.einsum("cqid,qad,cd->cqia",
                                                           f["eps_u"], self.Gq2, self.inv_s)
        for i in (0, 1):
            W = self.detJw * gq
            r_u[:, i::2] += np.einsum("cq,cqa->ca", W, flux[:, :, i, :])
            r_u[:, i::2] += np.einsum("cq,qa->ca", W * f["p"] * self.inv_s[:, i:i + 1], self.Gq2[:, :, i])

        inv_lam = self._inv_lambda(params)
        r_p = np.einsum("cq,qa->ca", self.detJw * (gq * f["div_u"] - inv_lam[:, None] * f["p"]), self.Vq1)

        w_phi = (1.0 - kappa) * f["phi"] * sig_colon_e + 2.0 * f["phi"] * rho * f["div_u"] \
            - (gc / eps) * (1.0 - f["phi"])
        r_phi = np.einsum("cq,qa->ca", self.detJw * w_phi, self.Vq1)
        r_phi += gc * eps * np.einsum("cqd,qad,cd->ca", self.detJw[:, :, None] * f["grad_phi"],
                                      self.Gq1, self.inv_s)

        full = np.concatenate([
            np.bincount(dm.cell_dofs_u.ravel(), weights=r_u.ravel(), minlength=dm.n_u),
            np.bincount(dm.cell_dofs_q1.ravel(), weights=r_p.ravel(), minlength=dm.n_p),
            np.bincount(dm.cell_dofs_q1.ravel(), weights=r_phi.ravel(), minlength=dm.n_phi),
        ])
        if constraints is not None:
            full = constraints.reduce(full)
        return BlockVector.from_full(full, dm)

    def jacobian(self, state: State, phi_tilde: np.ndarray, params: MaterialParams,
                 active_set=None, constraints: ConstraintSet | None = None) -> BlockMatrix:
        """Newton matrix; condensed to unit constrained rows when constraints
        (and optionally an active set of phi DoFs) are supplied."""
        dm = self.dof_map
        step = self._step(phi_tilde, params)
        kappa, rho, gc, eps = params.kappa, params.rho, params.gc, params.eps
        mu_c = self._mu(params)
        f = self.fields_at_quadrature(state)
        V1, G1, G2 = self.Vq1, self.Gq1, self.Gq2

        # phi-row couplings: E = d r_phi / du, F = d r_phi / dp, L = d r_phi / dphi
        eu_dot = np.einsum("cqjd,qbd,cd->cqbj", f["eps_u"], G2, self.inv_s)  # (E(u) grad N_b)_j
        coef_e = self.detJw * ((1.0 - kappa) * f["phi"] * 4.0 * mu_c[:, None])
        coef_p = self.detJw * ((1.0 - kappa) * f["phi"] * f["p"] + 2.0 * f["phi"] * rho)
        K_fu = np.einsum("cq,qa,cqbj->cabj", coef_e, V1, eu_dot)
        K_fu += np.einsum("cq,qa,qbj,cj->cabj", coef_p, V1, G2, self.inv_s)
        K_fu = K_fu.reshape(dm.n_cells, 4, 18)

        K_fp = np.einsum("cq,qa,qb->cab", self.detJw * ((1.0 - kappa) * f["phi"] * f["div_u"]), V1, V1)

        tr_e = f["div_u"]
        sig_colon_e = 2.0 * mu_c[:, None] * np.einsum("cqid,cqid->cq", f["eps_u"], f["eps_u"]) \
            + f["p"] * tr_e
        w_l = gc / eps + (1.0 - kappa) * sig_colon_e + 2.0 * rho * f["div_u"]
        K_ff = np.einsum("cq,qa,qb->cab", self.detJw * w_l, V1, V1)
        for d in (0, 1):
            K_ff += gc * eps * np.einsum("cq,qa,qb->cab",
                                         self.detJw * self.inv_s2[:, d:d + 1], G1[:, :, d], G1[:, :, d])

        data = np.concatenate([
            step["uu"], step["up"], step["pu"], step["pp"],
            K_fu.ravel(), K_fp.ravel(), K_ff.ravel(),
        ])
        raw = self._pattern.build(data)

        if constraints is None and active_set is None:
            return BlockMatrix(raw, dm)
        cs = constraints.copy() if constraints is not None else ConstraintSet(dm.n_dofs)
        if active_set is not None and len(active_set):
            off = dm.offsets["phi"]
            for d in np.asarray(active_set, dtype=np.int64):
                cs.add(off + int(d))
            cs.close()
        return BlockMatrix(cs.condense(raw), dm)

    def schur_mass(self, phi_tilde: np.ndarray, params: MaterialParams) -> sparse.csr_matrix:
        """Pressure-space mass matrix weighted by 1/lambda + g(phi_tilde)/(2 mu)."""
        gq = degradation(self.q1_at_quadrature(phi_tilde), params.kappa)
        weight = self._inv_lambda(params)[:, None] + gq / (2.0 * self._mu(params)[:, None])
        cell = np.einsum("cq,qa,qb->cab", self.detJw * weight, self.Vq1, self.Vq1)
        return self._p_pattern.build(cell.ravel())
