"""Smoothed-aggregation algebraic multigrid for SPD matrices.

Setup follows the classic recipe: greedy strength-based aggregation, a
tentative prolongator built from near-nullspace vectors via per-aggregate QR,
one damped-Jacobi smoothing pass on the prolongator, and Galerkin coarse
operators.  Relaxation is a degree-2 Chebyshev polynomial in the Jacobi
preconditioned operator, applied as Richardson sweeps at the Chebyshev roots
(reversed on the post-sweep so the V-cycle stays symmetric).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse

__all__ = ["AmgSettings", "AmgLevel", "AmgHierarchy", "amg_setup", "amg_vcycle"]


@dataclass(frozen=True)
class AmgSettings:
    theta: float = 0.02          # strength threshold; 0 keeps every connection
    max_levels: int = 20
    coarse_size: int = 64        # direct solve at or below this many unknowns
    cheb_degree: int = 2
    cheb_window: tuple = (0.25, 1.1)   # window as multiples of the spectral estimate
    omega_factor: float = 4.0 / 3.0    # prolongator smoothing damping, times 1/rho
    power_iterations: int = 30
    seed: int = 0


@dataclass
class AmgLevel:
    A: sparse.csr_matrix
    Dinv: np.ndarray
    P: sparse.csr_matrix | None = None   # None on the coarsest level
    cheb_roots: np.ndarray = field(default_factory=lambda: np.empty(0))


class AmgHierarchy:
    def __init__(self, levels: list[AmgLevel], coarse_solve, settings: AmgSettings):
        self.levels = levels
        self._coarse_solve = coarse_solve
        self.settings = settings

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def operator_complexity(self) -> float:
        nnz0 = self.levels[0].A.nnz
        return sum(lv.A.nnz for lv in self.levels) / max(nnz0, 1)

    def vcycle(self, b: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
        x = np.zeros_like(b) if x0 is None else x0.copy()
        return self._cycle(0, b, x)

    def as_preconditioner(self):
        """One V-cycle from a zero initial guess, as a callable."""
        return lambda r: self.vcycle(r)

    def _cycle(self, l: int, b: np.ndarray, x: np.ndarray) -> np.ndarray:
        level = self.levels[l]
        if level.P is None:
            return self._coarse_solve(b)
        x = _chebyshev(level, b, x, reverse=False)
        r = b - level.A @ x
        xc = self._cycle(l + 1, level.P.T @ r, np.zeros(level.P.shape[1]))
        x = x + level.P @ xc
        return _chebyshev(level, b, x, reverse=True)


def _chebyshev(level: AmgLevel, b: np.ndarray, x: np.ndarray, reverse: bool) -> np.ndarray:
    roots = level.cheb_roots[::-1] if reverse else level.cheb_roots
    for t in roots:
        x = x + (1.0 / t) * (level.Dinv * (b - level.A @ x))
    return x


def _spectral_estimate(A: sparse.csr_matrix, Dinv: np.ndarray, settings: AmgSettings) -> float:
    rng = np.random.default_rng(settings.seed)
    v = rng.standard_normal(A.shape[0])
    v /= np.linalg.norm(v)
    rho = 1.0
    for _ in range(settings.power_iterations):
        v = Dinv * (A @ v)
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return 1.0
        rho, v = nv, v / nv
    return float(rho)


def _node_strength(A: sparse.csr_matrix, dofs_per_node: int) -> sparse.csr_matrix:
    """Max-abs condensation of |A| onto the node graph."""
    if dofs_per_node == 1:
        out = abs(A.tocoo())
    else:
        coo = A.tocoo()
        r = coo.row // dofs_per_node
        c = coo.col // dofs_per_node
        n = A.shape[0] // dofs_per_node
        keys = r.astype(np.int64) * n + c
        order = np.argsort(keys, kind="stable")
        keys, vals = keys[order], np.abs(coo.data[order])
        uniq, starts = np.unique(keys, return_index=True)
        maxvals = np.maximum.reduceat(vals, starts)
        out = sparse.coo_matrix((maxvals, (uniq // n, uniq % n)), shape=(n, n))
    return out.tocsr()


def _aggregate(S: sparse.csr_matrix, theta: float) -> np.ndarray:
    """Greedy standard aggregation; returns aggregate index per node (-1 never)."""
    n = S.shape[0]
    d = S.diagonal()
    S = S.tocsr()
    # strong neighborhoods (excluding self)
    strong: list[np.ndarray] = []
    for i in range(n):
        cols = S.indices[S.indptr[i]:S.indptr[i + 1]]
        vals = S.data[S.indptr[i]:S.indptr[i + 1]]
        keep = (cols != i) & (vals >= theta * np.sqrt(np.abs(d[i] * d[cols])) - 1e-300)
        strong.append(cols[keep])

    agg = np.full(n, -1, dtype=np.int64)
    next_agg = 0
    # pass 1: seed aggregates from fully untouched neighborhoods
    for i in range(n):
        if agg[i] >= 0:
            continue
        nb = strong[i]
        if nb.size and np.any(agg[nb] >= 0):
            continue
        agg[i] = next_agg
        agg[nb] = next_agg
        next_agg += 1
    # pass 2: attach leftovers to the strongest neighboring aggregate
    for i in range(n):
        if agg[i] >= 0:
            continue
        nb = strong[i]
        placed = nb[agg[nb] >= 0] if nb.size else np.empty(0, dtype=np.int64)
        if placed.size:
            agg[i] = agg[placed[0]]
    # pass 3: remaining nodes form fresh aggregates with unplaced neighbors
    for i in range(n):
        if agg[i] >= 0:
            continue
        agg[i] = next_agg
        nb = strong[i]
        for j in nb[agg[nb] < 0]:
            agg[j] = next_agg
        next_agg += 1
    return agg


def _tentative(agg: np.ndarray, B: np.ndarray, dofs_per_node: int):
    """Per-aggregate QR of the near-nullspace: returns (T, B_coarse)."""
    n_agg = int(agg.max()) + 1
    k = B.shape[1]
    n = B.shape[0]
    dof_agg = np.repeat(agg, dofs_per_node) if dofs_per_node > 1 else agg
    order = np.argsort(dof_agg, kind="stable")
    bounds = np.searchsorted(dof_agg[order], np.arange(n_agg + 1))

    rows, cols, vals = [], [], []
    Bc_rows = []
    col0 = 0
    for a in range(n_agg):
        dofs = order[bounds[a]:bounds[a + 1]]
        Q, R = np.linalg.qr(B[dofs, :], mode="reduced")
        r = Q.shape[1]
        rows.append(np.repeat(dofs, r))
        cols.append(np.tile(np.arange(col0, col0 + r), dofs.size))
        vals.append(Q.ravel())
        Bc_rows.append(R)
        col0 += r
    T = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, col0),
    ).tocsr()
    return T, np.vstack(Bc_rows)


def amg_setup(A: sparse.spmatrix, settings: AmgSettings = AmgSettings(),
              near_nullspace: np.ndarray | None = None, dofs_per_node: int = 1) -> AmgHierarchy:
    """Build a smoothed-aggregation hierarchy for a symmetric matrix.

    ``near_nullspace`` has one column per low-energy mode (default: constants);
    ``dofs_per_node`` groups interleaved vector components during aggregation.
    """
    A = sparse.csr_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    asym = abs(A - A.T)
    scale = max(abs(A).max(), 1.0)
    if asym.nnz and asym.max() > 1e-10 * scale:
        raise ValueError("AMG setup requires a symmetric matrix")

    B = np.ones((A.shape[0], 1)) if near_nullspace is None else np.asarray(near_nullspace, float)
    if B.ndim == 1:
        B = B[:, None]

    levels: list[AmgLevel] = []
    dpn = dofs_per_node
    while True:
        n = A.shape[0]
        diag = A.diagonal()
        Dinv = np.where(diag != 0.0, 1.0 / np.where(diag == 0.0, 1.0, diag), 1.0)
        level = AmgLevel(A=A, Dinv=Dinv)
        levels.append(level)
        if n <= settings.coarse_size or len(levels) >= settings.max_levels:
            break

        rho = _spectral_estimate(A, Dinv, settings)
        lo, hi = settings.cheb_window
        q = settings.cheb_degree
        theta_c, delta = 0.5 * (hi + lo) * rho, 0.5 * (hi - lo) * rho
        level.cheb_roots = theta_c + delta * np.cos(np.pi * (2 * np.arange(q) + 1) / (2 * q))

        S = _node_strength(A, dpn)
        agg = _aggregate(S, settings.theta)
        T, Bc = _tentative(agg, B, dpn)
        if T.shape[1] >= n:
            break  # no coarsening progress; treat this level as coarsest
        omega = settings.omega_factor / rho
        P = (T - (sparse.diags(Dinv * omega) @ (A @ T))).tocsr()
        level.P = P
        A = (P.T @ A @ P).tocsr()
        B = Bc
        dpn = 1  # coarse levels carry variable-size nullspace blocks

    coarse = levels[-1].A
    if coarse.shape[0] <= settings.coarse_size:
        lu, piv = linalg.lu_factor(coarse.toarray())
        solve = lambda b: linalg.lu_solve((lu, piv), b)
    else:
        solve = sparse.linalg.splu(coarse.tocsc()).solve
    return AmgHierarchy(levels, solve, settings)


def amg_vcycle(hierarchy: AmgHierarchy, b: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
    """One V(1,1) cycle; with x0 = None this is the preconditioner action."""
    return hierarchy.vcycle(b, x0)
