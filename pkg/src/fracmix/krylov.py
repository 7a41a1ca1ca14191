"""Flexible GMRES, preconditioned CG, and the block-triangular preconditioner.

The preconditioner treats the saddle system in (u, p) with an upper-triangular
sweep (pressure first through an approximate Schur inverse, then displacement)
and handles the phase-field block independently:

    q = S_hat^{-1} x_p          S_hat^{-1} = -((1/lambda + g/(2 mu)) M_p)^{-1}
    r = x_u - B^T q             B^T stored with its g(phi_tilde) weight
    s = A_u^{-1} r              CG preconditioned by one AMG V-cycle
    t = L^{-1} x_phi            one AMG V-cycle

Inner CG makes the application change between outer iterations, hence the
flexible GMRES variant that stores preconditioned basis vectors.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse

from .amg import AmgHierarchy, AmgSettings, amg_setup
from .assembly import BlockMatrix, BlockVector
from .fem import ConstraintSet

__all__ = [
    "KrylovSettings", "NonconvergenceError", "IndefiniteOperatorError",
    "fgmres", "cg", "BlockPreconditioner", "schur_apply", "LinearSolver",
    "LinearSolveInfo", "elasticity_nullspace", "restrict_constraints",
]


class NonconvergenceError(RuntimeError):
    """Iteration cap hit; carries the best iterate and residual history."""

    def __init__(self, message: str, x: np.ndarray | None = None,
                 history: list | None = None):
        super().__init__(message)
        self.x = x
        self.history = history or []


class IndefiniteOperatorError(RuntimeError):
    """CG observed a nonpositive curvature direction (pᵀAp ≤ 0)."""


@dataclass(frozen=True)
class KrylovSettings:
    rtol: float = 1e-5
    max_iter: int = 300
    restart: int | None = None   # None: unrestarted


def _as_full(v):
    return v.full() if isinstance(v, BlockVector) else np.asarray(v, float)


def _matvec(op):
    if callable(op) and not hasattr(op, "__matmul__"):
        return op
    return lambda v: op @ v


def fgmres(op, prec, rhs, settings: KrylovSettings = KrylovSettings(),
           x0: np.ndarray | None = None):
    """Right-preconditioned flexible GMRES; returns (solution, iterations).

    ``prec`` maps a full residual vector to a preconditioned one (callable or
    None for identity).  Stops at ||b - A x|| <= rtol * ||b||.  Residual
    history is available on the raised error if the cap is hit.
    """
    A = _matvec(op)
    M = (lambda v: v) if prec is None else prec
    b = _as_full(rhs)
    n = b.size
    x = np.zeros(n) if x0 is None else np.asarray(x0, float).copy()

    def pack(vec: np.ndarray):
        if isinstance(rhs, BlockVector):
            nu, npr = rhs.u.size, rhs.p.size
            return BlockVector(vec[:nu], vec[nu:nu + npr], vec[nu + npr:])
        return vec

    norm_b = np.linalg.norm(b)
    if norm_b == 0.0:
        return pack(x), 0
    tol = settings.rtol * norm_b
    cycle = settings.restart or settings.max_iter

    history: list[float] = []
    total = 0
    while True:
        r = b - A(x) if (total or x0 is not None) else b.copy()
        beta = np.linalg.norm(r)
        if beta <= tol:
            break
        m = min(cycle, settings.max_iter - total)
        V = [r / beta]
        Z: list[np.ndarray] = []
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta

        j_used = 0
        solved = False
        for j in range(m):
            Z.append(M(V[j]))
            w = A(Z[j])
            for i in range(j + 1):            # modified Gram-Schmidt
                H[i, j] = w @ V[i]
                w -= H[i, j] * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            breakdown = H[j + 1, j] <= 1e-14 * beta
            if not breakdown:
                V.append(w / H[j + 1, j])
            for i in range(j):                # apply accumulated rotations
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = np.hypot(H[j, j], H[j + 1, j])
            cs[j], sn[j] = (1.0, 0.0) if denom == 0.0 else (H[j, j] / denom, H[j + 1, j] / denom)
            H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            j_used = j + 1
            total += 1
            history.append(abs(g[j + 1]) / norm_b)
            if abs(g[j + 1]) <= tol or breakdown or total >= settings.max_iter:
                solved = abs(g[j + 1]) <= tol or breakdown
                break

        if j_used:
            R = H[:j_used, :j_used]
            if np.min(np.abs(np.diag(R))) > 0.0:
                y = linalg.solve_triangular(R, g[:j_used], lower=False)
            else:                             # exact breakdown with a singular column
                y = np.linalg.lstsq(R, g[:j_used], rcond=None)[0]
            for i in range(j_used):
                x = x + y[i] * Z[i]
        if solved:
            actual = np.linalg.norm(b - A(x))
            if actual <= tol * (1 + 1e-8) or actual <= max(tol, 1e-13 * norm_b):
                break
            if total >= settings.max_iter:
                raise NonconvergenceError(
                    f"fgmres stalled at relative residual {actual / norm_b:.3e} "
                    f"after {total} iterations", x=x, history=history)
            continue
        if total >= settings.max_iter:
            raise NonconvergenceError(
                f"fgmres hit the {settings.max_iter}-iteration cap at relative "
                f"residual {history[-1] if history else 1.0:.3e}", x=x, history=history)

    return pack(x), total


def cg(op, rhs, prec=None, rtol: float = 1e-6, max_iter: int = 200,
       x0: np.ndarray | None = None):
    """Preconditioned conjugate gradients; returns (solution, iterations)."""
    A = _matvec(op)
    M = (lambda v: v) if prec is None else prec
    b = _as_full(rhs)
    x = np.zeros_like(b) if x0 is None else np.asarray(x0, float).copy()
    r = b - A(x) if x0 is not None else b.copy()
    norm_b = np.linalg.norm(b)
    if norm_b == 0.0:
        return x, 0
    tol = rtol * norm_b
    if np.linalg.norm(r) <= tol:
        return x, 0
    z = M(r)
    p = z.copy()
    rz = r @ z
    for k in range(1, max_iter + 1):
        Ap = A(p)
        pAp = p @ Ap
        if pAp <= 0.0:
            raise IndefiniteOperatorError(
                f"CG encountered nonpositive curvature p^T A p = {pAp:.3e}")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= tol:
            return x, k
        z = M(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NonconvergenceError(
        f"CG did not reach rtol={rtol:.1e} within {max_iter} iterations", x=x)


def elasticity_nullspace(coords: np.ndarray) -> np.ndarray:
    """Rigid modes (two translations, one rotation) for interleaved 2D dofs."""
    n = coords.shape[0]
    B = np.zeros((2 * n, 3))
    B[0::2, 0] = 1.0
    B[1::2, 1] = 1.0
    B[0::2, 2] = -coords[:, 1]
    B[1::2, 2] = coords[:, 0]
    return B


def restrict_constraints(cs: ConstraintSet, lo: int, hi: int) -> ConstraintSet:
    """Carve out the constraints whose dof and masters all lie in [lo, hi)."""
    sub = ConstraintSet(hi - lo)
    for dof, (masters, inhom) in cs._entries.items():
        if not (lo <= dof < hi):
            continue
        if any(not (lo <= m < hi) for m, _ in masters):
            raise ValueError("constraint couples across block boundaries")
        sub.add(dof - lo, [(m - lo, w) for m, w in masters], inhom)
    return sub


class BlockPreconditioner:
    """Algorithm-1 application over the (u, p, phi) blocks.

    ``schur_policy``: "amg" (one V-cycle on the scaled mass), "cg" (CG+AMG to
    the inner tolerance), or "exact" (dense true Schur complement, together
    with dense A_u and L inverses; test/reference mode).
    """

    def __init__(self, matrix: BlockMatrix, schur_mass=None, *,
                 schur_policy: str = "amg",
                 au_hierarchy: AmgHierarchy | None = None,
                 ms_hierarchy: AmgHierarchy | None = None,
                 l_hierarchy: AmgHierarchy | None = None,
                 inner_rtol: float = 1e-6, inner_max_iter: int = 200):
        if schur_policy not in ("amg", "cg", "exact"):
            raise ValueError(f"unknown Schur policy {schur_policy!r}")
        self.matrix = matrix
        self.dof_map = matrix.dof_map
        self.schur_policy = schur_policy
        self.inner_rtol = inner_rtol
        self.inner_max_iter = inner_max_iter
        self.Bup = matrix.block("u", "p")
        self.cg_iterations = 0
        self.applications = 0

        if schur_policy == "exact":
            A = matrix.block("u", "u").toarray()
            L = matrix.block("phi", "phi").toarray()
            self._a_lu = linalg.lu_factor(A)
            self._l_lu = linalg.lu_factor(L)
            Bt = self.Bup.toarray()
            S = matrix.block("p", "p").toarray() - Bt.T @ linalg.lu_solve(self._a_lu, Bt)
            self._s_lu = linalg.lu_factor(S)
            self.ms = None
        else:
            if schur_mass is None or au_hierarchy is None or l_hierarchy is None:
                raise ValueError("amg/cg policies need the scaled mass and hierarchies")
            self.ms = schur_mass
            self._au = au_hierarchy
            self._ms_h = ms_hierarchy
            self._l = l_hierarchy
            if schur_policy == "cg" and ms_hierarchy is None:
                raise ValueError("cg Schur policy needs the mass hierarchy")

    # full-vector action used inside fgmres
    def __call__(self, v: np.ndarray) -> np.ndarray:
        dm = self.dof_map
        xu = v[dm.field_slice("u")]
        xp = v[dm.field_slice("p")]
        xf = v[dm.field_slice("phi")]
        self.applications += 1

        q = self._schur(xp)
        r = xu - self.Bup @ q
        if self.schur_policy == "exact":
            s = linalg.lu_solve(self._a_lu, r)
            t = linalg.lu_solve(self._l_lu, xf)
        else:
            s, its = cg(self.matrix.block("u", "u"), r,
                        prec=self._au.as_preconditioner(),
                        rtol=self.inner_rtol, max_iter=self.inner_max_iter)
            self.cg_iterations += its
            t = self._l.vcycle(xf)
        out = np.empty_like(v)
        out[dm.field_slice("u")] = s
        out[dm.field_slice("p")] = q
        out[dm.field_slice("phi")] = t
        return out

    def apply(self, x: BlockVector) -> BlockVector:
        return BlockVector.from_full(self(x.full()), self.dof_map)

    def _schur(self, xp: np.ndarray) -> np.ndarray:
        if self.schur_policy == "exact":
            return linalg.lu_solve(self._s_lu, xp)
        if self.schur_policy == "amg":
            return -self._ms_h.vcycle(xp)
        y, its = cg(self.ms, xp, prec=self._ms_h.as_preconditioner(),
                    rtol=self.inner_rtol, max_iter=self.inner_max_iter)
        self.cg_iterations += its
        return -y


def schur_apply(prec: BlockPreconditioner, x_p: np.ndarray) -> np.ndarray:
    """q = S_hat^{-1} x_p under the preconditioner's Schur policy."""
    return prec._schur(np.asarray(x_p, float))


@dataclass
class LinearSolveInfo:
    iterations: int = 0
    inner_cg: int = 0
    residuals: list = field(default_factory=list)

    @property
    def cg_per_iteration(self) -> float:
        return self.inner_cg / self.iterations if self.iterations else 0.0


class LinearSolver:
    """Per-Newton-step linear solves with hierarchy reuse.

    The displacement block and the scaled Schur mass depend only on the
    extrapolated phase field, so their AMG hierarchies are rebuilt once per
    loading step (``new_step``); the phase-field block changes every Newton
    iteration and gets a fresh hierarchy in each ``solve``.
    """

    def __init__(self, dof_map, krylov: KrylovSettings = KrylovSettings(),
                 schur_policy: str = "amg",
                 amg_u: AmgSettings = AmgSettings(),
                 amg_phi: AmgSettings = AmgSettings(),
                 amg_mass: AmgSettings = AmgSettings(theta=0.0),
                 inner_rtol: float = 1e-6, inner_max_iter: int = 200):
        self.dof_map = dof_map
        self.krylov = krylov
        self.schur_policy = schur_policy
        self.amg_u = amg_u
        self.amg_phi = amg_phi
        self.amg_mass = amg_mass
        self.inner_rtol = inner_rtol
        self.inner_max_iter = inner_max_iter
        self._nullspace = elasticity_nullspace(dof_map.q2_coords)
        self._ms = None
        self._au_hier = None
        self._ms_hier = None

    def new_step(self, schur_mass) -> None:
        self._ms = schur_mass
        self._au_hier = None
        self._ms_hier = None

    def solve(self, matrix: BlockMatrix, rhs: BlockVector):
        if self.schur_policy == "exact":
            prec = BlockPreconditioner(matrix, schur_policy="exact")
        else:
            if self._ms is None:
                raise RuntimeError("call new_step(schur_mass) before solve")
            if self._au_hier is None:
                self._au_hier = amg_setup(matrix.block("u", "u"), self.amg_u,
                                          near_nullspace=self._nullspace, dofs_per_node=2)
            if self._ms_hier is None:
                self._ms_hier = amg_setup(self._ms, self.amg_mass)
            l_hier = amg_setup(matrix.block("phi", "phi"), self.amg_phi)
            prec = BlockPreconditioner(
                matrix, self._ms, schur_policy=self.schur_policy,
                au_hierarchy=self._au_hier, ms_hierarchy=self._ms_hier,
                l_hierarchy=l_hier, inner_rtol=self.inner_rtol,
                inner_max_iter=self.inner_max_iter)
        x, iters = fgmres(matrix, prec, rhs, self.krylov)
        info = LinearSolveInfo(iterations=iters, inner_cg=prec.cg_iterations)
        return x, info
