"""Combined Newton / primal-dual active-set loop for one loading step.

Each iteration assembles the residual, re-decides the active set from the
complementarity test, and solves the condensed Newton system for an update
that carries the constraint gaps as inhomogeneities.  Convergence requires
both a small reduced residual and an unchanged active set.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .assembly import Assembler, BlockMatrix, BlockVector
from .fem import ConstraintSet
from .krylov import LinearSolver, NonconvergenceError, restrict_constraints
from .model import MaterialParams, State

__all__ = ["NewtonSettings", "SolveStats", "update_active_set", "line_search",
           "solve_timestep"]

logger = logging.getLogger("fracmix")


@dataclass(frozen=True)
class NewtonSettings:
    abs_tol: float = 1e-7
    max_iterations: int = 50
    backtrack_factor: float = 0.5
    max_backtracks: int = 10
    active_set_constant: float | None = None   # None: 100 * G_c / eps


@dataclass
class SolveStats:
    n_as: int = 0                  # Newton / active-set steps taken
    avg_lin: float = 0.0           # mean GMRES iterations per step
    avg_cg: float = 0.0            # mean inner CG iterations per GMRES iteration
    converged: bool = False
    residual_norms: list = field(default_factory=list)
    active_sizes: list = field(default_factory=list)
    gmres_iterations: list = field(default_factory=list)
    fallback_steps: int = 0        # line searches that accepted the smallest trial


def update_active_set(phi: np.ndarray, residual_phi: np.ndarray, phi_prev: np.ndarray,
                      c: float, lumped_mass: np.ndarray,
                      exclude: np.ndarray | None = None) -> np.ndarray:
    """Nodes where c (phi - phi_prev) + lambda > 0, lambda = -r_i / m_i.

    ``residual_phi`` is the assembled phase-field residual block; the lumped
    mass scaling keeps the multiplier estimate mesh-size independent.
    """
    lam = -residual_phi / lumped_mass
    test = c * (phi - phi_prev) + lam > 0.0
    if exclude is not None and exclude.size:
        test[exclude] = False
    return np.flatnonzero(test)


def line_search(residual_norm_fn, U: np.ndarray, direction: np.ndarray,
                current_norm: float, settings: NewtonSettings):
    """Backtrack over {1, beta, beta^2, ...} until the residual drops.

    Returns (alpha, fallback); fallback means no trial decreased the norm and
    the smallest step is accepted anyway.
    """
    if not np.any(direction):
        return 1.0, False
    alpha = 1.0
    for _ in range(settings.max_backtracks):
        if residual_norm_fn(U + alpha * direction) < current_norm:
            return alpha, False
        alpha *= settings.backtrack_factor
    alpha /= settings.backtrack_factor   # smallest trial actually evaluated
    return alpha, True


def _as_state(U: np.ndarray, template: State, dof_map) -> State:
    v = BlockVector.from_full(U, dof_map)
    return State(u=v.u, p=v.p, phi=v.phi,
                 phi_prev=template.phi_prev, phi_prev2=template.phi_prev2)


def solve_timestep(state: State, phi_tilde: np.ndarray, params: MaterialParams,
                   constraints: ConstraintSet, assembler: Assembler,
                   linear_solver: LinearSolver, settings: NewtonSettings = NewtonSettings(),
                   step_index: int = 0):
    """Advance one loading step; returns (converged State, SolveStats).

    ``constraints`` carries hanging-node couplings plus the step's Dirichlet
    values; the values are imposed on the state up front so Newton updates
    stay homogeneous there.  Raises NonconvergenceError with the iteration
    trace when the loop fails.
    """
    dm = assembler.dof_map
    off = dm.offsets["phi"]
    obstacle = state.phi_prev
    c = settings.active_set_constant
    if c is None:
        c = 100.0 * params.gc / params.eps
    lumped = assembler.phi_lumped_mass()

    base = constraints.copy().close()
    base_hom = base.homogeneous()
    excluded_phi = np.array(
        [d - off for d in base.constrained_dofs() if off <= d < off + dm.n_phi],
        dtype=np.int64)

    schur_mass = assembler.schur_mass(phi_tilde, params)
    p_cs = restrict_constraints(base_hom, dm.offsets["p"], dm.offsets["p"] + dm.n_p)
    linear_solver.new_step(p_cs.condense(schur_mass) if len(p_cs) else schur_mass)

    U = base.distribute(BlockVector(state.u, state.p, state.phi).full())
    state = _as_state(U, state, dm)

    stats = SolveStats()
    total_gmres = 0
    total_cg = 0
    prev_active: np.ndarray | None = None

    def reduced_norm(residual: BlockVector, active: np.ndarray) -> float:
        rr = base_hom.reduce(residual.full())
        if active.size:
            rr[off + active] = 0.0
        return float(np.linalg.norm(rr))

    for k in range(settings.max_iterations + 1):
        residual = assembler.residual(state, phi_tilde, params)
        rr = base_hom.reduce(residual.full())
        active = update_active_set(state.phi, rr[off:off + dm.n_phi], obstacle,
                                   c, lumped, exclude=excluded_phi)
        rn = reduced_norm(residual, active)
        stats.residual_norms.append(rn)
        stats.active_sizes.append(int(active.size))

        gap = obstacle[active] - state.phi[active]
        gap_ok = active.size == 0 or float(np.max(np.abs(gap))) <= 1e-12
        stable = prev_active is None or np.array_equal(active, prev_active)
        if rn < settings.abs_tol and gap_ok and stable:
            stats.converged = True
            break
        if k == settings.max_iterations:
            raise NonconvergenceError(
                f"Newton/active-set loop hit {settings.max_iterations} iterations "
                f"at residual {rn:.3e} (|active| = {active.size})",
                history=stats.residual_norms)

        cs = base_hom.copy()
        for i, g in zip(active, gap):
            cs.add_dirichlet(off + int(i), float(g))
        cs.close()

        raw = assembler.jacobian(state, phi_tilde, params)
        K = BlockMatrix(cs.condense(raw.matrix), dm)
        rhs = BlockVector.from_full(cs.condense_rhs(raw.matrix, -residual.full()), dm)
        try:
            delta_hat, info = linear_solver.solve(K, rhs)
        except NonconvergenceError as err:
            raise NonconvergenceError(
                f"linear solve failed in step {step_index}, iteration {k}: {err}",
                history=stats.residual_norms) from err
        total_gmres += info.iterations
        total_cg += info.inner_cg
        stats.gmres_iterations.append(info.iterations)

        direction = cs.distribute(delta_hat.full())
        if not np.any(direction):
            raise NonconvergenceError(
                f"stagnation: zero Newton update at residual {rn:.3e} "
                f"in step {step_index}, iteration {k}",
                history=stats.residual_norms)

        def trial_norm(cand: np.ndarray) -> float:
            return reduced_norm(assembler.residual(_as_state(cand, state, dm),
                                                   phi_tilde, params), active)

        if rn < settings.abs_tol:
            # residual already converged, the update only closes constraint
            # gaps (exact for the linearized constraints): take the full step
            alpha, fallback = 1.0, False
        else:
            alpha, fallback = line_search(trial_norm, U, direction, rn, settings)
        if fallback:
            stats.fallback_steps += 1
            logger.warning("step %d it %d: line search accepted smallest trial %.3e",
                           step_index, k, alpha)
        U = U + alpha * direction
        state = _as_state(U, state, dm)
        stats.n_as += 1
        prev_active = active

        logger.info("step %d it %d: residual %.3e, |active| %d, gmres %d, cg/it %.1f",
                    step_index, k, rn, active.size, info.iterations,
                    info.inner_cg / max(info.iterations, 1))

    # nodewise irreversibility at acceptance
    state.phi = np.clip(np.minimum(state.phi, obstacle), 0.0, 1.0)
    stats.avg_lin = total_gmres / stats.n_as if stats.n_as else 0.0
    stats.avg_cg = total_cg / total_gmres if total_gmres else 0.0
    return state, stats
