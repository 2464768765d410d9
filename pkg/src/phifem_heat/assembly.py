"""Assembly of the implicit time-step operator and right-hand sides.

The unknown w lives in the degree-k Lagrange space on the active submesh;
the physical solution is the product of the discrete level set with w, and
all derivatives of that product are expanded by the product rule.  The
operator combines, per time step of length dt:

  mass/dt over active cells, stiffness over active cells, the boundary flux
  on the active exterior facets, the facet jump penalty on ghost facets
  (weight sigma*h), and the least-squares cut-cell term (weight sigma*h^2).

The operator is constant over a run with a uniform time grid; the
right-hand side is rebuilt each step from precomputed quadrature tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh, cell_jacobians, facet_normals, facet_measures
from .levelset import DiscreteLevelSet, CellClassification
from .elements import LagrangeBasis, DofMap, QuadratureRule, make_basis, make_quadrature

__all__ = [
    "SparseSystem",
    "RhsBuilder",
    "assemble_lhs",
    "make_rhs_builder",
    "build_rhs",
    "discretize",
    "AssemblyError",
    "BoxBoundaryError",
]

_CHUNK = 4096


class AssemblyError(RuntimeError):
    """Nonfinite entry produced during assembly."""


class BoxBoundaryError(RuntimeError):
    """An active exterior facet lies on the background box boundary, where
    the boundary flux term is not meaningful."""


@dataclass(frozen=True)
class SparseSystem:
    """Assembled constant time-step operator."""

    A: sp.csr_matrix
    n_dofs: int
    sigma: float
    dt: float
    h: float
    k: int
    l: int


@dataclass
class RhsBuilder:
    """Quadrature-point tables over the active cells.

    Sparse operators map coefficient vectors to values/gradients at the
    stacked quadrature points; the same tables serve right-hand-side
    construction and error integration.
    """

    dofmap: DofMap
    sigma: float
    dt: float
    h: float
    qp: np.ndarray                 # (nQ, d) physical quadrature points
    wq: np.ndarray                 # (nQ,) weights including |det J|
    val_w: sp.csr_matrix           # w coefficients -> product values
    val_plain: sp.csr_matrix       # plain field -> values
    grad_w: tuple                  # d operators, product gradient components
    grad_plain: tuple              # d operators, plain gradient components
    cut_rows: np.ndarray           # qp rows lying in cut cells
    lap_cut: sp.csr_matrix         # w-side Laplacian of test functions at cut rows
    cell_of_row: np.ndarray        # active-cell id per qp row

    @property
    def n_dofs(self) -> int:
        return self.dofmap.n_dofs


def _tabulate_batched(basis: LagrangeBasis, points: np.ndarray, hessian: bool):
    """Tabulate at an (..., d) batch of reference points."""
    shape = points.shape[:-1]
    vals, grads, hess = basis.tabulate(points.reshape(-1, points.shape[-1]), hessian=hessian)
    vals = vals.reshape(shape + (basis.n_local,))
    grads = grads.reshape(shape + (basis.n_local, points.shape[-1]))
    if hess is not None:
        hess = hess.reshape(shape + (basis.n_local, points.shape[-1], points.shape[-1]))
    return vals, grads, hess


def discretize(
    mesh: Mesh,
    classification: CellClassification,
    phi_h: DiscreteLevelSet,
    dofmap: DofMap,
    sigma: float,
    dt: float,
    *,
    quad_exactness: Optional[int] = None,
    boundary_term: bool = True,
    allow_box_boundary: bool = False,
):
    """Assemble the operator and build the right-hand-side tables in one
    pass over the active cells.  Returns (SparseSystem, RhsBuilder).
    """
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")

    d = mesh.dim
    k = dofmap.degree
    l = phi_h.degree
    h = mesh.h
    exact = quad_exactness if quad_exactness is not None else 2 * (k + l)
    quad = make_quadrature(d, exact)
    basis_k = make_basis(d, k)
    basis_l = phi_h.basis

    active = classification.active_cells
    if not np.array_equal(dofmap.cell_ids, active):
        raise ValueError("dofmap does not cover exactly the active cells")
    cut_mask_active = np.zeros(active.size, dtype=bool)
    cut_mask_active[np.searchsorted(active, classification.cut_cells)] = True

    nq = quad.n_points
    n = dofmap.n_dofs
    nk = basis_k.n_local

    vals_k, gk_ref, hk_ref = basis_k.tabulate(quad.points)
    vals_l, gl_ref, hl_ref = basis_l.tabulate(quad.points)

    rows_A, cols_A, data_A = [], [], []
    qp_all, wq_all = [], []
    op_rows, op_cols = [], []
    dat_valw, dat_valp = [], []
    dat_gw = [[] for _ in range(d)]
    dat_gp = [[] for _ in range(d)]
    cutrow_chunks = []
    lap_rows, lap_cols, lap_data = [], [], []
    n_cut_rows = 0

    for start in range(0, active.size, _CHUNK):
        pos = np.arange(start, min(start + _CHUNK, active.size))
        cids = active[pos]
        nc = cids.size
        J, Jinv, detJ = cell_jacobians(mesh, cids)
        v0 = mesh.vertices[mesh.cells[cids, 0]]

        gk = np.einsum("qie,ced->cqid", gk_ref, Jinv)
        lapk = np.einsum("cea,qief,cfa->cqi", Jinv, hk_ref, Jinv)
        gl = np.einsum("qie,ced->cqid", gl_ref, Jinv)
        lapl = np.einsum("cea,qief,cfa->cqi", Jinv, hl_ref, Jinv)

        pc = phi_h.cell_coefficients(cids)
        phi_v = np.einsum("ql,cl->cq", vals_l, pc)
        phi_g = np.einsum("cqld,cl->cqd", gl, pc)
        phi_lap = np.einsum("cql,cl->cq", lapl, pc)

        U = phi_v[:, :, None] * vals_k[None, :, :]
        Ug = vals_k[None, :, :, None] * phi_g[:, :, None, :] + phi_v[:, :, None, None] * gk
        Ulap = (
            vals_k[None, :, :] * phi_lap[:, :, None]
            + 2.0 * np.einsum("cqd,cqid->cqi", phi_g, gk)
            + phi_v[:, :, None] * lapk
        )
        wq = quad.weights[None, :] * np.abs(detJ)[:, None]
        qp = v0[:, None, :] + np.einsum("qe,cde->cqd", quad.points, J)

        Aloc = np.einsum("cq,cqi,cqj->cij", wq, U, U) / dt
        Aloc += np.einsum("cq,cqid,cqjd->cij", wq, Ug, Ug)

        cm = cut_mask_active[pos]
        if cm.any():
            Sj = U[cm] / dt - Ulap[cm]
            Aloc[cm] += -sigma * h * h * np.einsum("cq,cqj,cqi->cij", wq[cm], Sj, Ulap[cm])

        if not np.isfinite(Aloc).all():
            bad = int(cids[np.flatnonzero(~np.isfinite(Aloc).all(axis=(1, 2)))[0]])
            raise AssemblyError(f"nonfinite entry assembling cell {bad}")

        dofs = dofmap.cell_dofs[pos]
        rows_A.append(np.broadcast_to(dofs[:, :, None], (nc, nk, nk)).ravel())
        cols_A.append(np.broadcast_to(dofs[:, None, :], (nc, nk, nk)).ravel())
        data_A.append(Aloc.ravel())

        # quadrature tables for the RHS / evaluation operators
        qp_all.append(qp.reshape(-1, d))
        wq_all.append(wq.ravel())
        row_ids = (start * nq + np.arange(nc * nq)).reshape(nc, nq)
        op_rows.append(np.broadcast_to(row_ids[:, :, None], (nc, nq, nk)).ravel())
        op_cols.append(np.broadcast_to(dofs[:, None, :], (nc, nq, nk)).ravel())
        dat_valw.append(U.ravel())
        dat_valp.append(np.broadcast_to(vals_k[None, :, :], (nc, nq, nk)).ravel())
        for m in range(d):
            dat_gw[m].append(Ug[..., m].ravel())
            dat_gp[m].append(np.broadcast_to(gk[..., m], (nc, nq, nk)).ravel())

        if cm.any():
            ncc = int(cm.sum())
            cutrow_chunks.append(row_ids[cm].ravel())
            lrow = (n_cut_rows + np.arange(ncc * nq)).reshape(ncc, nq)
            lap_rows.append(np.broadcast_to(lrow[:, :, None], (ncc, nq, nk)).ravel())
            lap_cols.append(np.broadcast_to(dofs[cm][:, None, :], (ncc, nq, nk)).ravel())
            lap_data.append(Ulap[cm].ravel())
            n_cut_rows += ncc * nq

    nQ = active.size * nq
    rows_A = [np.concatenate(rows_A)]
    cols_A = [np.concatenate(cols_A)]
    data_A = [np.concatenate(data_A)]

    # boundary flux term on the active exterior facets
    sub = classification.submesh
    if boundary_term and sub.exterior_facets.size:
        on_box = mesh.facet_to_cells[sub.exterior_facets, 1] < 0
        if on_box.any() and not allow_box_boundary:
            raise BoxBoundaryError(
                f"{int(on_box.sum())} active exterior facet(s) lie on the box boundary; "
                "enlarge the box or refine the mesh"
            )
        r, c, v = _boundary_term(mesh, sub, phi_h, dofmap, basis_k, exact)
        rows_A.append(r)
        cols_A.append(c)
        data_A.append(v)

    # ghost facet jump penalty
    if classification.ghost_facets.size:
        r, c, v = _ghost_term(mesh, classification, phi_h, dofmap, basis_k, exact, sigma)
        rows_A.append(r)
        cols_A.append(c)
        data_A.append(v)

    A = sp.coo_matrix(
        (np.concatenate(data_A), (np.concatenate(rows_A), np.concatenate(cols_A))),
        shape=(n, n),
    ).tocsr()
    if not np.isfinite(A.data).all():
        raise AssemblyError("nonfinite entry in assembled operator")

    qp = np.concatenate(qp_all, axis=0)
    wq = np.concatenate(wq_all)
    oprow = np.concatenate(op_rows)
    opcol = np.concatenate(op_cols)

    def op(data_chunks):
        return sp.coo_matrix((np.concatenate(data_chunks), (oprow, opcol)), shape=(nQ, n)).tocsr()

    cut_rows = np.concatenate(cutrow_chunks) if cutrow_chunks else np.empty(0, dtype=np.int64)
    if lap_rows:
        lap_cut = sp.coo_matrix(
            (np.concatenate(lap_data), (np.concatenate(lap_rows), np.concatenate(lap_cols))),
            shape=(n_cut_rows, n),
        ).tocsr()
    else:
        lap_cut = sp.csr_matrix((0, n))

    builder = RhsBuilder(
        dofmap=dofmap,
        sigma=sigma,
        dt=dt,
        h=h,
        qp=qp,
        wq=wq,
        val_w=op(dat_valw),
        val_plain=op(dat_valp),
        grad_w=tuple(op(dat_gw[m]) for m in range(d)),
        grad_plain=tuple(op(dat_gp[m]) for m in range(d)),
        cut_rows=cut_rows,
        lap_cut=lap_cut,
        cell_of_row=np.repeat(active, nq),
    )
    system = SparseSystem(A=A, n_dofs=n, sigma=sigma, dt=dt, h=h, k=k, l=l)
    return system, builder


def _facet_side(mesh, phys, cells, basis_k, basis_l, phi_h):
    """Trace values/gradients of the product basis functions of one incident
    cell at physical facet quadrature points (nf, nq, d).
    """
    d = mesh.dim
    J, Jinv, _ = cell_jacobians(mesh, cells)
    v0 = mesh.vertices[mesh.cells[cells, 0]]
    xi = np.einsum("fde,fqe->fqd", Jinv, phys - v0[:, None, :])

    vals_k, gk_ref, _ = _tabulate_batched(basis_k, xi, hessian=False)
    gk = np.einsum("fqie,fed->fqid", gk_ref, Jinv)
    vals_l, gl_ref, _ = _tabulate_batched(basis_l, xi, hessian=False)
    gl = np.einsum("fqie,fed->fqid", gl_ref, Jinv)

    pc = phi_h.cell_coefficients(cells)
    phi_v = np.einsum("fql,fl->fq", vals_l, pc)
    phi_g = np.einsum("fqld,fl->fqd", gl, pc)

    Uval = phi_v[:, :, None] * vals_k
    Ugrad = vals_k[..., None] * phi_g[:, :, None, :] + phi_v[:, :, None, None] * gk
    return Uval, Ugrad


def _facet_quad(mesh, facet_ids, exactness):
    d = mesh.dim
    fq = make_quadrature(d - 1, exactness)
    fv = mesh.vertices[mesh.facets[facet_ids]]
    E = fv[:, 1:] - fv[:, :1]
    phys = fv[:, :1, :] + np.einsum("qe,fed->fqd", fq.points, E)
    measures = facet_measures(mesh, facet_ids)
    wfq = fq.weights[None, :] * (measures / fq.weights.sum())[:, None]
    return phys, wfq


def _boundary_term(mesh, sub, phi_h, dofmap, basis_k, exactness):
    facets = sub.exterior_facets
    cells = sub.exterior_facet_cells
    normals = sub.exterior_facet_normals
    phys, wfq = _facet_quad(mesh, facets, exactness)
    Uval, Ugrad = _facet_side(mesh, phys, cells, basis_k, phi_h.basis, phi_h)
    dn = np.einsum("fqid,fd->fqi", Ugrad, normals)
    Bloc = -np.einsum("fq,fqi,fqj->fij", wfq, Uval, dn)
    if not np.isfinite(Bloc).all():
        bad = int(facets[np.flatnonzero(~np.isfinite(Bloc).all(axis=(1, 2)))[0]])
        raise AssemblyError(f"nonfinite entry assembling boundary facet {bad}")
    pos = np.searchsorted(sub.cell_ids, cells)
    dofs = dofmap.cell_dofs[pos]
    nf, nk = dofs.shape
    rows = np.broadcast_to(dofs[:, :, None], (nf, nk, nk)).ravel()
    cols = np.broadcast_to(dofs[:, None, :], (nf, nk, nk)).ravel()
    return rows, cols, Bloc.ravel()


def _ghost_term(mesh, classification, phi_h, dofmap, basis_k, exactness, sigma):
    facets = classification.ghost_facets
    f2c = mesh.facet_to_cells[facets]
    c1, c2 = f2c[:, 0], f2c[:, 1]
    normals = facet_normals(mesh, facets, c1)
    phys, wfq = _facet_quad(mesh, facets, exactness)

    _, Ug1 = _facet_side(mesh, phys, c1, basis_k, phi_h.basis, phi_h)
    _, Ug2 = _facet_side(mesh, phys, c2, basis_k, phi_h.basis, phi_h)
    dn1 = np.einsum("fqid,fd->fqi", Ug1, normals)
    dn2 = np.einsum("fqid,fd->fqi", Ug2, normals)
    jmp = np.concatenate([dn1, -dn2], axis=2)        # (nf, nq, 2*nk)

    Gloc = sigma * mesh.h * np.einsum("fq,fqi,fqj->fij", wfq, jmp, jmp)
    if not np.isfinite(Gloc).all():
        bad = int(facets[np.flatnonzero(~np.isfinite(Gloc).all(axis=(1, 2)))[0]])
        raise AssemblyError(f"nonfinite entry assembling ghost facet {bad}")

    active = classification.active_cells
    dofs = np.concatenate(
        [dofmap.cell_dofs[np.searchsorted(active, c1)], dofmap.cell_dofs[np.searchsorted(active, c2)]],
        axis=1,
    )
    nf, nd = dofs.shape
    rows = np.broadcast_to(dofs[:, :, None], (nf, nd, nd)).ravel()
    cols = np.broadcast_to(dofs[:, None, :], (nf, nd, nd)).ravel()
    return rows, cols, Gloc.ravel()


def assemble_lhs(
    mesh: Mesh,
    classification: CellClassification,
    phi_h: DiscreteLevelSet,
    dofmap: DofMap,
    sigma: float,
    dt: float,
    **kwargs,
) -> SparseSystem:
    """Assemble only the constant time-step operator."""
    system, _ = discretize(mesh, classification, phi_h, dofmap, sigma, dt, **kwargs)
    return system


def make_rhs_builder(
    mesh: Mesh,
    classification: CellClassification,
    phi_h: DiscreteLevelSet,
    dofmap: DofMap,
    sigma: float,
    dt: float,
    **kwargs,
) -> RhsBuilder:
    """Build only the right-hand-side quadrature tables."""
    _, builder = discretize(mesh, classification, phi_h, dofmap, sigma, dt, **kwargs)
    return builder


def build_rhs(
    builder: RhsBuilder,
    u_prev: np.ndarray,
    f_next: Callable[[np.ndarray, float], np.ndarray],
    t_next: float,
    *,
    initial: bool = False,
) -> np.ndarray:
    """Load vector for one implicit step.

    ``u_prev`` is the w coefficient vector of the previous step, or (with
    ``initial=True``) the plain nodal interpolant of the initial data.
    """
    f_q = np.asarray(f_next(builder.qp, t_next), dtype=float)
    if not np.isfinite(f_q).all():
        bad = builder.qp[np.flatnonzero(~np.isfinite(f_q))[0]]
        raise AssemblyError(f"source term is nonfinite at {tuple(bad)} (t={t_next})")
    value_op = builder.val_plain if initial else builder.val_w
    s = value_op @ u_prev / builder.dt + f_q
    b = builder.val_w.T @ (builder.wq * s)
    if builder.cut_rows.size:
        s_cut = s[builder.cut_rows]
        w_cut = builder.wq[builder.cut_rows]
        b -= builder.sigma * builder.h**2 * (builder.lap_cut.T @ (w_cut * s_cut))
    return b


def export_matrix(system: SparseSystem, path) -> None:
    """Write the operator in coordinate text format (row, col, value)."""
    coo = system.A.tocoo()
    with open(path, "w") as fh:
        fh.write(f"# {system.n_dofs} {system.n_dofs} {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v:.17g}\n")
