"""Newton / primal-dual active-set loop.

The phase-field subproblem at u = p = 0 is a linear obstacle problem, so a
brute-force enumeration of active subsets on a one-cell mesh provides an
exact KKT oracle for the converged iterate.
"""
import itertools

import numpy as np
import pytest

from fracmix.assembly import Assembler
from fracmix.fem import ConstraintSet, DofMap
from fracmix.krylov import KrylovSettings, LinearSolver, NonconvergenceError
from fracmix.mesh import build_rectangle
from fracmix.model import MaterialParams, State
from fracmix.newton import (NewtonSettings, line_search, solve_timestep,
                            update_active_set)


def clamp_boundary(dm: DofMap, values=(0.0, 0.0)) -> ConstraintSet:
    coords = dm.q2_coords
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    on = np.any((np.abs(coords - lo) < 1e-12) | (np.abs(coords - hi) < 1e-12), axis=1)
    cs = ConstraintSet(dm.n_dofs)
    for comp in (0, 1):
        for d in dm.global_dofs("u", np.where(on)[0], comp):
            cs.add_dirichlet(d, values[comp])
    cs.close()
    return cs


def exact_solver(dm: DofMap) -> LinearSolver:
    return LinearSolver(dm, KrylovSettings(rtol=1e-12, max_iter=50),
                        schur_policy="exact")


class TestUpdateActiveSet:
    def test_hand_computed_membership(self):
        phi = np.array([0.4, 1.0, 0.2])
        phi_prev = np.array([0.6, 1.0, 0.1])
        residual = np.array([-1.0, 2.0, 0.0])
        mass = np.array([1.0, 2.0, 1.0])
        # lambda = -r/m = [1, -1, 0]; test 10(phi-prev) + lambda > 0
        # gives [-1, -1, 1]: only the last node is active
        active = update_active_set(phi, residual, phi_prev, 10.0, mass)
        np.testing.assert_array_equal(active, [2])

    def test_exclude_wins(self):
        phi = np.array([1.0, 1.0])
        prev = np.array([0.5, 0.5])
        r = np.zeros(2)
        m = np.ones(2)
        active = update_active_set(phi, r, prev, 1.0, m, exclude=np.array([0]))
        np.testing.assert_array_equal(active, [1])

    def test_feasible_stationary_point_inactive(self):
        phi = np.array([0.7, 0.9])
        active = update_active_set(phi, np.array([0.3, 0.1]), phi.copy(), 5.0,
                                   np.ones(2))
        assert active.size == 0


class TestLineSearch:
    def test_full_step_accepted(self):
        norm = lambda v: float(np.linalg.norm(v - 2.0))
        alpha, fallback = line_search(norm, np.zeros(3), np.full(3, 2.0),
                                      norm(np.zeros(3)), NewtonSettings())
        assert alpha == 1.0 and not fallback

    def test_backtracks_to_first_decrease(self):
        # f(alpha) = |alpha - 0.1| along the direction: decreases first at 1/8
        norm = lambda v: abs(float(v[0]) - 0.1)
        alpha, fallback = line_search(norm, np.zeros(1), np.ones(1), 0.1,
                                      NewtonSettings())
        assert alpha == pytest.approx(0.125)
        assert not fallback

    def test_fallback_smallest_trial(self):
        settings = NewtonSettings(max_backtracks=4)
        norm = lambda v: 1.0 + float(np.linalg.norm(v))  # never decreases
        alpha, fallback = line_search(norm, np.zeros(2), np.ones(2), 1.0, settings)
        assert alpha == pytest.approx(0.5 ** 3)
        assert fallback

    def test_zero_direction_short_circuits(self):
        alpha, fallback = line_search(lambda v: 1.0, np.zeros(2), np.zeros(2),
                                      1.0, NewtonSettings())
        assert alpha == 1.0 and not fallback


class TestSolveTimestep:
    PARAMS = MaterialParams(mu=0.42, inv_lambda=1.0 / 0.56, gc=1.0, kappa=1e-2,
                            eps=2.0, rho=0.0)

    def one_cell(self):
        dm = DofMap(build_rectangle((0.0, 0.0), (1.0, 1.0), (1, 1)))
        return dm, Assembler(dm)

    def test_already_converged_state(self):
        dm, asm = self.one_cell()
        state = State.zero(dm.n_u, dm.n_p, dm.n_phi)
        out, stats = solve_timestep(state, np.ones(dm.n_phi), self.PARAMS,
                                    clamp_boundary(dm), asm, exact_solver(dm))
        assert stats.converged
        assert stats.n_as == 0
        assert stats.avg_lin == 0.0
        np.testing.assert_allclose(out.phi, 1.0)

    def test_phase_obstacle_matches_subset_enumeration(self):
        # u = p = 0 decouples the phi block into A phi <= b with phi <= ob;
        # enumerate every active subset and keep the unique KKT point
        dm, asm = self.one_cell()
        ob = np.ones(dm.n_phi)
        crack_node = int(np.argmin(np.abs(dm.q1_coords).sum(axis=1)))
        ob[crack_node] = 0.2

        zero = State.zero(dm.n_u, dm.n_p, dm.n_phi, phi0=np.zeros(dm.n_phi))
        probe = State.zero(dm.n_u, dm.n_p, dm.n_phi)
        J = asm.jacobian(probe, np.ones(dm.n_phi), self.PARAMS)
        A = J.block("phi", "phi").toarray()
        r1 = asm.residual(probe, np.ones(dm.n_phi), self.PARAMS).phi
        b = A @ probe.phi - r1

        kkt = None
        for k in range(dm.n_phi + 1):
            for act in itertools.combinations(range(dm.n_phi), k):
                act = list(act)
                ina = [i for i in range(dm.n_phi) if i not in act]
                phi = ob.copy()
                if ina:
                    rhs = b[ina] - A[np.ix_(ina, act)] @ ob[act]
                    phi[ina] = np.linalg.solve(A[np.ix_(ina, ina)], rhs)
                r = A @ phi - b
                if np.all(phi[ina] <= ob[ina] + 1e-10) and np.all(r[act] <= 1e-10):
                    kkt = phi
                    break
            if kkt is not None:
                break
        assert kkt is not None
        assert 0.2 < kkt.max() < 1.0  # genuinely mixed active set

        start = State(u=np.zeros(dm.n_u), p=np.zeros(dm.n_p), phi=ob.copy(),
                      phi_prev=ob.copy(), phi_prev2=ob.copy())
        out, stats = solve_timestep(start, np.ones(dm.n_phi), self.PARAMS,
                                    clamp_boundary(dm), asm, exact_solver(dm),
                                    NewtonSettings(abs_tol=1e-11))
        assert stats.converged
        np.testing.assert_allclose(out.phi, kkt, atol=1e-9)
        np.testing.assert_allclose(out.u, 0.0, atol=1e-12)

    def test_irreversibility_clip(self):
        dm, asm = self.one_cell()
        ob = np.full(dm.n_phi, 0.8)
        start = State(u=np.zeros(dm.n_u), p=np.zeros(dm.n_p),
                      phi=np.ones(dm.n_phi), phi_prev=ob.copy(),
                      phi_prev2=ob.copy())
        out, stats = solve_timestep(start, ob.copy(), self.PARAMS,
                                    clamp_boundary(dm), asm, exact_solver(dm))
        assert stats.converged
        assert np.all(out.phi <= ob + 1e-12)

    def test_inhomogeneous_dirichlet_translation(self):
        # boundary translation of a single cell: exact solution is the rigid
        # motion with zero pressure and intact phase field
        dm, asm = self.one_cell()
        cs = clamp_boundary(dm, values=(0.1, -0.05))
        state = State.zero(dm.n_u, dm.n_p, dm.n_phi)
        out, stats = solve_timestep(state, np.ones(dm.n_phi), self.PARAMS,
                                    cs, asm, exact_solver(dm),
                                    NewtonSettings(abs_tol=1e-11))
        assert stats.converged
        np.testing.assert_allclose(out.u[0::2], 0.1, atol=1e-9)
        np.testing.assert_allclose(out.u[1::2], -0.05, atol=1e-9)
        np.testing.assert_allclose(out.p, 0.0, atol=1e-9)
        np.testing.assert_allclose(out.phi, 1.0, atol=1e-10)
        assert stats.n_as >= 1
        assert stats.avg_lin > 0.0
        assert stats.residual_norms[-1] < stats.residual_norms[0]

    def test_iteration_cap_raises_with_history(self):
        dm, asm = self.one_cell()
        cs = clamp_boundary(dm, values=(0.3, 0.0))
        state = State.zero(dm.n_u, dm.n_p, dm.n_phi)
        with pytest.raises(NonconvergenceError) as err:
            solve_timestep(state, np.ones(dm.n_phi), self.PARAMS, cs, asm,
                           exact_solver(dm), NewtonSettings(max_iterations=0))
        assert len(err.value.history) == 1

    def test_active_set_constant_override(self):
        # a huge constant forces every violated node into the first active set
        dm, asm = self.one_cell()
        ob = np.full(dm.n_phi, 0.9)
        start = State(u=np.zeros(dm.n_u), p=np.zeros(dm.n_p),
                      phi=np.ones(dm.n_phi), phi_prev=ob.copy(),
                      phi_prev2=ob.copy())
        out, stats = solve_timestep(start, ob.copy(), self.PARAMS,
                                    clamp_boundary(dm), asm, exact_solver(dm),
                                    NewtonSettings(active_set_constant=1e8))
        assert stats.converged
        assert stats.active_sizes[0] == dm.n_phi
        np.testing.assert_allclose(out.phi, ob, atol=1e-10)
