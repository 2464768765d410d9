import numpy as np
import pytest

from phifem_heat.assembly import (
    AssemblyError,
    BoxBoundaryError,
    build_rhs,
    discretize,
    export_matrix,
)
from phifem_heat.elements import build_dofmap, make_basis
from phifem_heat.levelset import LevelSetFunction, classify, interpolate_levelset
from phifem_heat.mesh import BoxDomain, build_background_mesh


def circle_pipeline(n=8, k=1, l=2, sigma=1.0, dt=0.25):
    from phifem_heat.cases import circle_case

    case = circle_case()
    mesh = build_background_mesh(case.box, n)
    phi_h = interpolate_levelset(case.levelset, mesh, l)
    cls = classify(phi_h, mesh)
    dofmap = build_dofmap(mesh, make_basis(2, k), cls.active_cells)
    system, builder = discretize(mesh, cls, phi_h, dofmap, sigma, dt)
    return case, mesh, phi_h, cls, dofmap, system, builder


class TestOperator:
    def test_shape_and_finiteness(self):
        *_, dofmap, system, _ = circle_pipeline()
        assert system.A.shape == (dofmap.n_dofs, dofmap.n_dofs)
        assert np.isfinite(system.A.data).all()

    def test_sigma_linearity(self):
        # every stabilization entry is linear in sigma, so
        # A(2) - A(1) == A(3) - A(2) exactly
        def matrix(sigma):
            *_, system, _ = circle_pipeline(sigma=sigma)
            return system.A

        d21 = (matrix(2.0) - matrix(1.0)).toarray()
        d32 = (matrix(3.0) - matrix(2.0)).toarray()
        assert np.allclose(d21, d32, atol=1e-11)

    def test_dt_scaling_of_mass_block(self):
        # with the cut-cell terms fixed, (A(dt) - A(2 dt)) captures part of
        # the 1/dt scaling; check against explicit halves
        def matrix(dt):
            *_, system, _ = circle_pipeline(dt=dt)
            return system.A

        a1 = matrix(0.5).toarray()
        a2 = matrix(1.0).toarray()
        a4 = matrix(2.0).toarray()
        # A(dt) = S + C/dt  =>  A(0.5) - A(1) == 2 (A(1) - A(2))
        assert np.allclose(a1 - a2, 2.0 * (a2 - a4), atol=1e-10)

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            circle_pipeline(sigma=0.0)
        with pytest.raises(ValueError):
            circle_pipeline(dt=-1.0)

    def test_coercivity_witness(self, rng):
        # the elliptic part of the operator (isolated with a huge dt) is
        # positive definite on random vectors
        case, mesh, phi_h, cls, dofmap, _, _ = circle_pipeline()
        system, _ = discretize(mesh, cls, phi_h, dofmap, 1.0, 1e30)
        for _ in range(100):
            v = rng.standard_normal(dofmap.n_dofs)
            assert v @ (system.A @ v) > 0.0


class TestPatchReduction:
    def test_reduces_to_standard_fem(self):
        # with phi == -1 nothing is cut: the operator must equal the
        # classical mass/stiffness combination assembled independently
        box = BoxDomain((0.0, 0.0), (1.0, 1.0))
        mesh = build_background_mesh(box, 4)
        phi_h = interpolate_levelset(LevelSetFunction(lambda p: -np.ones(p.shape[0])), mesh, 1)
        cls = classify(phi_h, mesh)
        assert cls.cut_cells.size == 0
        assert cls.ghost_facets.size == 0
        dofmap = build_dofmap(mesh, make_basis(2, 1), cls.active_cells)
        dt = 0.3
        system, _ = discretize(mesh, cls, phi_h, dofmap, 1.0, dt, boundary_term=False)

        nd = dofmap.n_dofs
        M = np.zeros((nd, nd))
        K = np.zeros((nd, nd))
        local_grads = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        for pos, cid in enumerate(cls.active_cells):
            vs = mesh.vertices[mesh.cells[cid]]
            J = np.column_stack([vs[1] - vs[0], vs[2] - vs[0]])
            area = abs(np.linalg.det(J)) / 2.0
            G = np.linalg.inv(J).T @ local_grads.T
            Ke = area * (G.T @ G)
            Me = area / 12.0 * (np.ones((3, 3)) + np.eye(3))
            dofs = dofmap.cell_dofs[pos]
            M[np.ix_(dofs, dofs)] += Me
            K[np.ix_(dofs, dofs)] += Ke
        assert np.abs(system.A.toarray() - (M / dt + K)).max() < 1e-12

    def test_box_boundary_is_rejected(self):
        # with phi == -1 the active mesh touches the box: assembling the
        # boundary term there must fail loudly
        box = BoxDomain((0.0, 0.0), (1.0, 1.0))
        mesh = build_background_mesh(box, 4)
        phi_h = interpolate_levelset(LevelSetFunction(lambda p: -np.ones(p.shape[0])), mesh, 1)
        cls = classify(phi_h, mesh)
        dofmap = build_dofmap(mesh, make_basis(2, 1), cls.active_cells)
        with pytest.raises(BoxBoundaryError):
            discretize(mesh, cls, phi_h, dofmap, 1.0, 0.3)


class TestProductDerivatives:
    def test_laplacian_table_against_product_rule(self, rng):
        # for the exactly-interpolated circle level set and a P1 field w,
        # lap(phi w) = w lap(phi) + 2 grad(phi).grad(w) with lap(phi) = 4
        case, mesh, phi_h, cls, dofmap, system, b = circle_pipeline()
        w = rng.standard_normal(dofmap.n_dofs)
        lap = b.lap_cut @ w
        wv = (b.val_plain @ w)[b.cut_rows]
        gx = (b.grad_plain[0] @ w)[b.cut_rows]
        gy = (b.grad_plain[1] @ w)[b.cut_rows]
        x = b.qp[b.cut_rows]
        expected = 4.0 * wv + 2.0 * (2.0 * x[:, 0] * gx + 2.0 * x[:, 1] * gy)
        assert np.abs(lap - expected).max() < 1e-11

    def test_value_and_gradient_tables(self, rng):
        # val_w row q equals phi_h(x_q) * w(x_q), grad_w the product rule
        case, mesh, phi_h, cls, dofmap, system, b = circle_pipeline()
        w = rng.standard_normal(dofmap.n_dofs)
        phiq = case.levelset(b.qp)  # exact for l=2
        uq = b.val_w @ w
        wq = b.val_plain @ w
        assert np.abs(uq - phiq * wq).max() < 1e-11
        gx = b.grad_w[0] @ w
        expected = 2.0 * b.qp[:, 0] * wq + phiq * (b.grad_plain[0] @ w)
        assert np.abs(gx - expected).max() < 1e-10


class TestRhs:
    def test_zero_data_gives_zero_vector(self):
        *_, b = circle_pipeline()
        rhs = build_rhs(b, np.zeros(b.val_plain.shape[1]), lambda p, t: np.zeros(p.shape[0]), 0.5)
        assert np.abs(rhs).max() == 0.0

    def test_linear_in_source(self, rng):
        *_, b = circle_pipeline()
        u_prev = np.zeros(b.val_plain.shape[1])

        def f1(p, t):
            return np.sin(p[:, 0]) + p[:, 1]

        b1 = build_rhs(b, u_prev, f1, 0.5)
        b2 = build_rhs(b, u_prev, lambda p, t: 2.0 * f1(p, t), 0.5)
        assert np.allclose(b2, 2.0 * b1, atol=1e-12)

    def test_nonfinite_source_raises(self):
        *_, b = circle_pipeline()
        with pytest.raises(AssemblyError):
            build_rhs(b, np.zeros(b.val_plain.shape[1]),
                      lambda p, t: np.full(p.shape[0], np.nan), 0.5)


class TestExport:
    def test_coordinate_format(self, tmp_path):
        *_, system, _ = circle_pipeline()
        path = tmp_path / "matrix.txt"
        export_matrix(system, path)
        lines = path.read_text().strip().splitlines()
        header = lines[0].split()
        assert header[0] == "#"
        assert int(header[3]) == len(lines) - 1
