import numpy as np
import pytest

from conftest import fe_closure
from stokesmg.assembly import ProblemConfig, assemble
from stokesmg.elements import make_quadrature
from stokesmg.meshtopo import build_structured_quad, build_structured_tri, \
    refine_uniform
from stokesmg.mg import (
    build_hierarchy, build_prolongation, chebyshev_iteration, chebyshev_relax,
    coarse_solve, make_preconditioner, pressure_kernel, v_cycle,
)
from stokesmg.sparsela import fgmres, nullspace_projector, triple_product
from stokesmg.spaces import build_mixed, evaluate_function, interpolate


def space_pair(case, k, n=5):
    build = build_structured_quad if case == "th-quad" else build_structured_tri
    coarse_mesh = build(n)
    fine_mesh, link = refine_uniform(coarse_mesh)
    return (build_mixed(case, coarse_mesh, k), build_mixed(case, fine_mesh, k),
            link)


class TestProlongation:
    def test_constants_prolong_to_constants(self):
        coarse, fine, link = space_pair("th-quad", 2, 2)
        p = build_prolongation(coarse.pressure, fine.pressure, link)
        assert np.allclose(p @ np.ones(coarse.pressure.ndof), 1.0, atol=1e-12)

    def test_p2_fine_vertex_at_coarse_edge_midpoint(self):
        from stokesmg.elements import make_element
        from stokesmg.spaces import build_space
        coarse_mesh = build_structured_tri(1)
        fine_mesh, link = refine_uniform(coarse_mesh)
        cspace = build_space(coarse_mesh, make_element("lagrange-tri", 2))
        fspace = build_space(fine_mesh, make_element("lagrange-tri", 2))
        p = build_prolongation(cspace, fspace, link)
        # Coarse edge 0 runs (0,0)-(1/2... pick coarse edge, its midpoint is a
        # fine vertex; that vertex index is the edge's first fine child's end.
        topo_c = cspace.mesh.topology
        for e in range(topo_c.num_edges):
            a, b = cspace.mesh.geometry.vertex_coords[topo_c.edge_vertices[e]]
            mid = 0.5 * (a + b)
            fverts = fspace.mesh.geometry.vertex_coords
            vf = int(np.argmin(np.linalg.norm(fverts - mid, axis=1)))
            assert np.linalg.norm(fverts[vf] - mid) < 1e-12
            row = fspace.entity_dofs[0][vf][0]
            col = cspace.entity_dofs[1][e][0]
            assert p[row, col] == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("case,k", [("th-tri", 3), ("th-quad", 2)])
    def test_nested_function_reproduction(self, case, k):
        coarse, fine, link = space_pair(case, k, 2)
        p = build_prolongation(coarse.velocity, fine.velocity, link)
        rng = np.random.default_rng(0)
        cvec = rng.standard_normal(coarse.velocity.ndof)
        fvec = p @ cvec
        again = interpolate(fine.velocity, fe_closure(coarse.velocity, cvec))
        assert np.max(np.abs(fvec - again)) < 1e-10

    @pytest.mark.parametrize("case,k", [("bdm", 1), ("bdm", 2), ("rt", 2)])
    def test_normal_continuity_fields_preserved(self, case, k):
        # Prolonged coefficients represent the same vector field in the
        # L2 sense: compare on every fine cell by quadrature.
        coarse, fine, link = space_pair(case, k, 2)
        p = build_prolongation(coarse.velocity, fine.velocity, link)
        rng = np.random.default_rng(1)
        rule = make_quadrature("tri", 2 * k + 2)
        for trial in range(5):
            cvec = rng.standard_normal(coarse.velocity.ndof)
            fvec = p @ cvec
            worst = 0.0
            for parent in range(coarse.velocity.mesh.topology.num_cells):
                cmap = coarse.velocity.cell_map(parent)
                for child in link.parent_cells[parent]:
                    fmap = fine.velocity.cell_map(child)
                    phys = fmap.map_points(rule.points)
                    vc = evaluate_function(coarse.velocity, cvec, parent,
                                           cmap.inverse_map(phys))
                    vf = evaluate_function(fine.velocity, fvec, child,
                                           rule.points)
                    worst = max(worst, np.max(np.abs(vc - vf)))
            assert worst < 1e-10 * max(1.0, np.max(np.abs(cvec)))


class TestGalerkinComparison:
    @pytest.mark.parametrize("case,k", [("th-tri", 2), ("th-tri", 3),
                                        ("th-quad", 2), ("th-quad", 3)])
    def test_conforming_rediscretization_is_galerkin(self, case, k):
        hier = build_hierarchy(case, k, 1)
        config = ProblemConfig(case, k)
        raw = [assemble(level.mixed, config, apply_bc=False).matrix
               for level in hier.levels]
        p = hier.transfers[1].full
        diff = triple_product(p, raw[1]) - raw[0]
        rel = np.max(np.abs(diff.toarray())) / np.max(np.abs(raw[0].toarray()))
        assert rel <= 1e-10

    @pytest.mark.parametrize("k", [1, 2])
    def test_penalty_scaling_breaks_galerkin(self, k):
        hier = build_hierarchy("bdm", k, 1)
        config = ProblemConfig("bdm", k)
        raw = [assemble(level.mixed, config, apply_bc=False).matrix
               for level in hier.levels]
        p = hier.transfers[1].full
        diff = triple_product(p, raw[1]) - raw[0]
        rel = np.max(np.abs(diff.toarray())) / np.max(np.abs(raw[0].toarray()))
        assert rel >= 1e-3


class TestChebyshev:
    def test_zero_residual_noop(self):
        hier = build_hierarchy("th-tri", 2, 1)
        level = hier.fine
        rng = np.random.default_rng(2)
        x = rng.standard_normal(level.system.matrix.shape[0])
        b = level.system.matrix @ x
        for mode in ("degree", "repeat"):
            out = chebyshev_relax(level, b, x.copy(), 3, mode)
            assert np.allclose(out, x, atol=1e-10 * np.abs(x).max())

    def test_degree_one_is_damped_step(self):
        hier = build_hierarchy("th-quad", 2, 1)
        level = hier.fine
        rng = np.random.default_rng(3)
        b = rng.standard_normal(level.system.matrix.shape[0])
        x0 = np.zeros_like(b)
        got = chebyshev_relax(level, b, x0.copy(), 1)
        from stokesmg.vanka import apply_additive
        damp = 2.0 / (level.cheb.lower + level.cheb.upper)
        expected = damp * apply_additive(level.patches, b)
        assert np.allclose(got, expected, atol=1e-13 * max(1, np.abs(b).max()))

    @pytest.mark.parametrize("nu", [1, 2, 3, 4])
    def test_minimax_bound_on_model_spectrum(self, nu):
        # Diagonal model with exact interval [25, 110]: error components with
        # eigenvalues inside the interval contract at the Chebyshev bound.
        lam = np.linspace(25.0, 110.0, 200)
        lower, upper = 25.0, 110.0
        rng = np.random.default_rng(4)
        xstar = rng.standard_normal(len(lam))
        e0 = rng.standard_normal(len(lam))
        b = lam * xstar
        x = chebyshev_iteration(lambda v: lam * v, lambda r: r, lower, upper,
                                b, xstar - e0, nu)
        theta = 0.5 * (upper + lower) / (0.5 * (upper - lower))
        bound = 1.0 / np.cosh(nu * np.arccosh(theta))
        reduction = np.max(np.abs((xstar - x) / e0))
        assert reduction <= bound * 1.05

    def test_repeat_mode_is_iterated_damping(self):
        hier = build_hierarchy("th-tri", 2, 1)
        level = hier.fine
        from stokesmg.vanka import apply_additive
        rng = np.random.default_rng(5)
        b = rng.standard_normal(level.system.matrix.shape[0])
        damp = 2.0 / (level.cheb.lower + level.cheb.upper)
        x = np.zeros_like(b)
        for _ in range(3):
            x = x + damp * apply_additive(level.patches,
                                          b - level.system.matrix @ x)
        got = chebyshev_relax(level, b, np.zeros_like(b), 3, "repeat")
        assert np.allclose(got, x, atol=1e-12 * max(1, np.abs(x).max()))


class TestVCycle:
    def test_single_level_is_direct_solve(self):
        hier = build_hierarchy("th-tri", 2, 0)
        system = hier.fine.system
        q = pressure_kernel(hier.fine.mixed)
        rng = np.random.default_rng(6)
        b = rng.standard_normal(len(q))
        b -= q * (q @ b)
        x = v_cycle(hier, b)
        assert np.allclose(x, coarse_solve(hier, b))
        assert abs(q @ x) < 1e-12 * np.linalg.norm(x)
        assert np.linalg.norm(system.matrix @ x - b) < 1e-9 * np.linalg.norm(b)

    def test_linearity(self):
        hier = build_hierarchy("bdm", 1, 1)
        n = hier.fine.system.matrix.shape[0]
        rng = np.random.default_rng(7)
        r1, r2 = rng.standard_normal(n), rng.standard_normal(n)
        c = -1.3
        lhs = v_cycle(hier, r1 + c * r2)
        rhs = v_cycle(hier, r1) + c * v_cycle(hier, r2)
        assert np.allclose(lhs, rhs, atol=1e-12 * max(1, np.abs(lhs).max()))

    def test_positive_spectrum_estimates(self):
        for case, k in [("th-tri", 2), ("th-quad", 2), ("bdm", 1), ("rt", 1)]:
            hier = build_hierarchy(case, k, 1)
            for level in hier.levels[1:]:
                assert level.cheb.lam > 0
                assert 0 < level.cheb.lower < level.cheb.upper

    def test_preconditioned_solver_converges(self):
        hier = build_hierarchy("th-quad", 2, 2)
        system = hier.fine.system
        nsp = nullspace_projector([pressure_kernel(hier.fine.mixed)])
        x, rep = fgmres(system.matrix, system.rhs,
                        preconditioner=make_preconditioner(hier),
                        rtol=1e-10, max_it=40, nullspace=nsp)
        assert rep.converged and rep.iterations <= 40

    def test_restriction_is_transpose(self):
        hier = build_hierarchy("th-tri", 2, 1)
        t = hier.transfers[1]
        rng = np.random.default_rng(8)
        xf = rng.standard_normal(t.masked.shape[0])
        xc = rng.standard_normal(t.masked.shape[1])
        assert np.allclose(xf @ t.prolong(xc), t.restrict(xf) @ xc, atol=1e-12)

    def test_two_level_meshes(self):
        hier = build_hierarchy("th-tri", 2, 1)
        assert hier.levels[0].mesh.topology.cells_per_side == 5
        assert hier.levels[1].mesh.topology.cells_per_side == 10
