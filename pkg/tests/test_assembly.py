"""Residual/Jacobian assembly against an independent dense reference.

The reference assembler below loops over cells, quadrature points and local
basis pairs directly (no vectorization, no shared code path) and implements
the weak form term by term:

  u:   (g(pt) [2 mu E(u) + p I], E(v)) + (pt^2 rho, div v) - (f, v)
  p:   (g(pt) div u - p / lambda, q)
  phi: ((1-k) phi [2 mu E:E + p tr E] + 2 phi rho div u - Gc/eps (1-phi), psi)
       + Gc eps (grad phi, grad psi)

Extra oracles: the Q1 mass matrix on the unit cell is (1/36)[[4,2,1,2],...];
a finite-difference directional derivative must match the Jacobian action.
"""
import numpy as np
import pytest

from fracmix.assembly import Assembler, BlockMatrix, BlockVector
from fracmix.fem import DofMap, gauss_quadrature, shape_eval
from fracmix.mesh import build_rectangle, refine_uniform
from fracmix.model import MaterialParams, State


def reference_residual(dm, state, phi_tilde, params, inv_lambda=None, body_force=None):
    quad = gauss_quadrature(3)
    Vq2, Gq2 = shape_eval("q2", quad.points)
    Vq1, Gq1 = shape_eval("q1", quad.points)
    r = np.zeros(dm.n_dofs)
    off_p, off_f = dm.offsets["p"], dm.offsets["phi"]
    for c in range(dm.n_cells):
        sx, sy = dm.cell_size[c]
        du = dm.cell_dofs("u")[c]
        dq = dm.cell_dofs("p")[c]
        u_loc = state.u[du]
        p_loc = state.p[dq]
        f_loc = state.phi[dq]
        ft_loc = phi_tilde[dq]
        inv_lam = params.inv_lambda if inv_lambda is None else inv_lambda[c]
        for q in range(len(quad.weights)):
            w = quad.weights[q] * sx * sy
            gradN2 = Gq2[q] / np.array([sx, sy])      # (9, 2) physical
            gradN1 = Gq1[q] / np.array([sx, sy])
            grad_u = np.zeros((2, 2))
            for a in range(9):
                grad_u[0] += u_loc[2 * a] * gradN2[a]
                grad_u[1] += u_loc[2 * a + 1] * gradN2[a]
            eps_u = 0.5 * (grad_u + grad_u.T)
            div_u = np.trace(grad_u)
            p = Vq1[q] @ p_loc
            phi = Vq1[q] @ f_loc
            phit = Vq1[q] @ ft_loc
            grad_phi = gradN1.T @ f_loc
            g = (1.0 - params.kappa) * phit**2 + params.kappa
            sig = 2.0 * params.mu * eps_u + p * np.eye(2)
            for a in range(9):
                for i in range(2):
                    grad_v = np.zeros((2, 2))
                    grad_v[i] = gradN2[a]
                    eps_v = 0.5 * (grad_v + grad_v.T)
                    val = g * np.sum(sig * eps_v) + params.rho * phit**2 * grad_v[i, i]
                    if body_force is not None:
                        val -= body_force[i] * Vq2[q, a]
                    r[du[2 * a + i]] += w * val
            for a in range(4):
                r[off_p + dq[a]] += w * (g * div_u - inv_lam * p) * Vq1[q, a]
                drive = (1.0 - params.kappa) * phi * (np.sum(sig * eps_u)) \
                    + 2.0 * phi * params.rho * div_u \
                    - params.gc / params.eps * (1.0 - phi)
                r[off_f + dq[a]] += w * (drive * Vq1[q, a]
                                         + params.gc * params.eps * grad_phi @ gradN1[a])
    return r


def random_state(dm, seed=0):
    rng = np.random.default_rng(seed)
    state = State(
        u=0.1 * rng.standard_normal(dm.n_u),
        p=0.1 * rng.standard_normal(dm.n_p),
        phi=rng.uniform(0.1, 1.0, dm.n_phi),
        phi_prev=np.ones(dm.n_phi),
        phi_prev2=np.ones(dm.n_phi),
    )
    phi_tilde = rng.uniform(0.1, 1.0, dm.n_phi)
    return state, phi_tilde


PARAMS = MaterialParams(mu=0.42, inv_lambda=1.0 / 0.56, gc=1.0, kappa=1e-2,
                        eps=0.5, rho=1e-3)


class TestResidual:
    def test_matches_dense_reference(self):
        dm = DofMap(build_rectangle((0.0, 0.0), (1.0, 0.8), (2, 2)))
        state, phi_tilde = random_state(dm)
        asm = Assembler(dm)
        got = asm.residual(state, phi_tilde, PARAMS).full()
        ref = reference_residual(dm, state, phi_tilde, PARAMS)
        np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-14)

    def test_matches_reference_with_body_force(self):
        dm = DofMap(build_rectangle((0.0, 0.0), (2.0, 2.0), (2, 1)))
        state, phi_tilde = random_state(dm, seed=5)
        asm = Assembler(dm, body_force=(0.0, -8.0e-7))
        got = asm.residual(state, phi_tilde, PARAMS).full()
        ref = reference_residual(dm, state, phi_tilde, PARAMS,
                                 body_force=(0.0, -8.0e-7))
        np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-16)

    def test_matches_reference_per_cell_compressibility(self):
        dm = DofMap(build_rectangle((0.0, 0.0), (1.0, 1.0), (2, 2)))
        state, phi_tilde = random_state(dm, seed=9)
        inv = np.array([0.0, 2.0, 0.5, 1.0])
        asm = Assembler(dm, cell_inv_lambda=inv)
        got = asm.residual(state, phi_tilde, PARAMS).full()
        ref = reference_residual(dm, state, phi_tilde, PARAMS, inv_lambda=inv)
        np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-14)

    def test_body_force_resultant(self):
        """With u = p = 0, phi = 1 the u-residual sums to -f * |domain|."""
        dm = DofMap(build_rectangle((0.0, 0.0), (4.0, 4.0), (3, 3)))
        asm = Assembler(dm, body_force=(0.0, -2.0))
        state = State.zero(dm.n_u, dm.n_p, dm.n_phi)
        r = asm.residual(state, np.ones(dm.n_phi), PARAMS)
        assert r.u[1::2].sum() == pytest.approx(2.0 * 16.0)
        assert r.u[0::2].sum() == pytest.approx(0.0, abs=1e-14)

    def test_deterministic(self):
        dm = DofMap(build_rectangle((0.0, 0.0), (1.0, 1.0), (3, 2)))
        state, phi_tilde = random_state(dm, seed=2)
        asm = Assembler(dm)
        a = asm.residual(state, phi_tilde, PARAMS).full()
        b = Assembler(dm).residual(state, phi_tilde, PARAMS).full()
        assert a.tobytes() == b.tobytes()


class TestJacobian:
    def test_finite_difference_consistency(self):
        """J(U) dU matches (r(U + h dU) - r(U - h dU)) / 2h."""
        dm = DofMap(build_rectangle((0.0, 0.0), (1.0, 1.0), (2, 2)))
        state, phi_tilde = random_state(dm, seed=3)
        asm = Assembler(dm)
        J = asm.jacobian(state, phi_tilde, PARAMS).matrix
        rng = np.random.default_rng(1)
        dU = rng.standard_normal(dm.n_dofs)
        h = 1e-6
        up = BlockVector.from_full(np.concatenate([state.u, state.p, state.phi])
                                   + h * dU, dm)
        dn = BlockVector.from_full(np.concatenate([state.u, state.p, state.phi])
                                   - h * dU, dm)
        sp = State(up.u, up.p, up.phi, state.phi_prev, state.phi_prev2)
        sn = State(dn.u, dn.p, dn.phi, state.phi_prev, state.phi_prev2)
        fd = (asm.residual(sp, phi_tilde, PARAMS).full()
              - asm.residual(sn, phi_tilde, PARAMS).full()) / (2.0 * h)
        Jd = J @ dU
        err = np.linalg.norm(Jd - fd) / np.linalg.norm(Jd)
        assert err < 1e-7

    def test_up_pu_transpose(self):
        dm = DofMap(build_rectangle((0.0, 0.0), (1.0, 1.0), (2, 2)))
        state, phi_tilde = random_state(dm, seed=6)
        J = Assembler(dm).jacobian(state, phi_tilde, PARAMS)
        up = J.block("u", "p").toarray()
        pu = J.block("p", "u").toarray()
        np.testing.assert_allclose(up, pu.T, atol=1e-14)

    def test_u_phi_coupling_absent(self):
        """Extrapolation removes the phi dependence of the u and p rows."""
        dm = DofMap(build_rectangle((0.0, 0.0), (1.0, 1.0), (2, 2)))
        state, phi_tilde = random_state(dm, seed=8)
        J = Assembler(dm).jacobian(state, phi_tilde, PARAMS)
        assert J.block("u", "phi").nnz == 0
        assert J.block("p", "phi").nnz == 0

    def test_uu_block_symmetric(self):
        dm = DofMap(build_rectangle((0.0, 0.0), (1.0, 1.0), (2, 2)))
        state, phi_tilde = random_state(dm, seed=10)
        J = Assembler(dm).jacobian(state, phi_tilde, PARAMS)
        uu = J.block("u", "u").toarray()
        np.testing.assert_allclose(uu, uu.T, atol=1e-13)

    def test_condensed_constraint_rows(self):
        dm = DofMap(build_rectangle((0.0, 0.0), (1.0, 1.0), (1, 1)))
        state, phi_tilde = random_state(dm, seed=12)
        from fracmix.fem import ConstraintSet
        cs = ConstraintSet(dm.n_dofs)
        cs.add_dirichlet([0, 1], 0.0)
        cs.close()
        J = Assembler(dm).jacobian(state, phi_tilde, PARAMS, constraints=cs)
        row = J.matrix.getrow(0).toarray().ravel()
        np.testing.assert_allclose(row, np.eye(dm.n_dofs)[0])


class TestSchurMass:
    def test_unit_cell_q1_mass(self):
        """Weight 1 reduces the Schur matrix to the exact Q1 mass matrix."""
        dm = DofMap(build_rectangle((0.0, 0.0), (1.0, 1.0), (1, 1)))
        # 1/lambda + g(1)/(2 mu) = 1 picked via mu = 1, inv_lambda = 1/2
        params = MaterialParams(mu=1.0, inv_lambda=0.5, gc=1.0, kappa=0.0, eps=1.0)
        M = Assembler(dm).schur_mass(np.ones(4), params).toarray()
        ref = np.array([[4.0, 2.0, 2.0, 1.0],
                        [2.0, 4.0, 1.0, 2.0],
                        [2.0, 1.0, 4.0, 2.0],
                        [1.0, 2.0, 2.0, 4.0]]) / 36.0
        np.testing.assert_allclose(M, ref, atol=1e-14)

    def test_incompressible_drops_inverse_lambda(self):
        """At inv_lambda = 0 only g/(2 mu) weights; adding 1/lambda = 3 shifts
        the weight by the plain mass matrix times 3."""
        dm = DofMap(build_rectangle((0.0, 0.0), (1.0, 1.0), (2, 2)))
        pa = MaterialParams(mu=2.0, inv_lambda=0.0, gc=1.0, kappa=0.0, eps=1.0)
        M = Assembler(dm).schur_mass(np.ones(dm.n_phi), pa).toarray()
        pb = MaterialParams(mu=2.0, inv_lambda=3.0, gc=1.0, kappa=0.0, eps=1.0)
        M2 = Assembler(dm).schur_mass(np.ones(dm.n_phi), pb).toarray()
        unit = MaterialParams(mu=0.5, inv_lambda=0.0, gc=1.0, kappa=0.0, eps=1.0)
        mass = Assembler(dm).schur_mass(np.ones(dm.n_phi), unit).toarray()
        np.testing.assert_allclose(M, 0.25 * mass, atol=1e-15)
        np.testing.assert_allclose(M2 - M, 3.0 * mass, atol=1e-14)
        assert np.all(np.linalg.eigvalsh(M) > 0)

    def test_degraded_zone_weight(self):
        """phi_tilde = 0 with kappa = 0 leaves only the 1/lambda weight."""
        dm = DofMap(build_rectangle((0.0, 0.0), (1.0, 1.0), (1, 1)))
        pa = MaterialParams(mu=1.0, inv_lambda=1.0, gc=1.0, kappa=0.0, eps=1.0)
        M = Assembler(dm).schur_mass(np.zeros(4), pa).toarray()
        ref = np.array([[4.0, 2.0, 2.0, 1.0],
                        [2.0, 4.0, 1.0, 2.0],
                        [2.0, 1.0, 4.0, 2.0],
                        [1.0, 2.0, 2.0, 4.0]]) / 36.0
        np.testing.assert_allclose(M, ref, atol=1e-14)


class TestLumpedMass:
    def test_row_sums(self):
        dm = DofMap(build_rectangle((0.0, 0.0), (2.0, 2.0), (2, 2)))
        lumped = Assembler(dm).phi_lumped_mass()
        assert lumped.sum() == pytest.approx(4.0)
        corner = dm.nodes_on("phi", lambda xy: (np.abs(xy[:, 0]) < 1e-12)
                             & (np.abs(xy[:, 1]) < 1e-12))[0]
        assert lumped[corner] == pytest.approx(0.25)


class TestBlockContainers:
    def test_block_vector_roundtrip(self):
        dm = DofMap(build_rectangle((0.0, 0.0), (1.0, 1.0), (1, 1)))
        rng = np.random.default_rng(0)
        full = rng.standard_normal(dm.n_dofs)
        bv = BlockVector.from_full(full, dm)
        np.testing.assert_allclose(bv.full(), full)
        assert bv.norm() == pytest.approx(np.linalg.norm(full))

    def test_block_matrix_views(self):
        dm = DofMap(build_rectangle((0.0, 0.0), (1.0, 1.0), (1, 1)))
        state, phi_tilde = random_state(dm, seed=1)
        J = Assembler(dm).jacobian(state, phi_tilde, PARAMS)
        assert J.block("u", "u").shape == (18, 18)
        assert J.block("phi", "p").shape == (4, 4)
        x = np.arange(dm.n_dofs, dtype=float)
        np.testing.assert_allclose(J @ x, J.matrix @ x)
