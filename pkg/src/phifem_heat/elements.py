"""Lagrange bases on the reference simplex, simplex quadrature, and global
degree-of-freedom numbering.

Bases are built from the monomial basis by inverting the Vandermonde matrix
at the lattice nodes; this covers any modest degree uniformly (the solver
uses degrees 1-3).  Quadrature uses collapsed-coordinate Gauss rules
(Gauss-Jacobi along the singular directions), which have positive weights
at any requested exactness.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .mesh import Mesh, CellGeometry

__all__ = [
    "LagrangeBasis",
    "QuadratureRule",
    "DofMap",
    "make_basis",
    "make_quadrature",
    "push_forward",
    "build_dofmap",
]

_MAX_DEGREE = 6
_MAX_EXACTNESS = 60


def _reference_nodes(d: int, p: int) -> np.ndarray:
    """Lattice nodes of the degree-p Lagrange element, vertices first, then
    edge nodes per sorted vertex pair, then remaining lattice points.
    """
    verts = np.vstack([np.zeros(d), np.eye(d)])      # (d+1, d)
    seen = set()
    nodes = []

    def add(bary):
        key = tuple(bary)
        if key not in seen:
            seen.add(key)
            nodes.append(np.asarray(bary, dtype=np.int64))

    for i in range(d + 1):
        add(p * np.eye(d + 1, dtype=np.int64)[i])
    for i, j in itertools.combinations(range(d + 1), 2):
        for a in range(1, p):
            bary = np.zeros(d + 1, dtype=np.int64)
            bary[i] = p - a
            bary[j] = a
            add(bary)
    for bary in itertools.product(range(p + 1), repeat=d + 1):
        if sum(bary) == p:
            add(np.asarray(bary[::-1], dtype=np.int64)[::-1])
    bary = np.asarray(nodes, dtype=float) / p
    return bary @ verts


class LagrangeBasis:
    """Shape functions of degree ``degree`` on the reference d-simplex.

    ``tabulate`` returns values, reference gradients and reference Hessians
    of all shape functions at a batch of reference points.
    """

    def __init__(self, dim: int, degree: int):
        if dim not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {dim}")
        if not 1 <= degree <= _MAX_DEGREE:
            raise ValueError(f"unsupported degree {degree} (must be in 1..{_MAX_DEGREE})")
        self.dim = dim
        self.degree = degree
        self.nodes = _reference_nodes(dim, degree)
        self.exponents = np.asarray(
            [e for e in itertools.product(range(degree + 1), repeat=dim) if sum(e) <= degree],
            dtype=np.int64,
        )
        V = self._monomials(self.nodes)
        self.coeffs = np.linalg.inv(V)               # (nmono, nloc)

    @property
    def n_local(self) -> int:
        return self.nodes.shape[0]

    def _monomials(self, pts: np.ndarray) -> np.ndarray:
        out = np.ones((pts.shape[0], self.exponents.shape[0]))
        for m in range(self.dim):
            out *= pts[:, m : m + 1] ** self.exponents[None, :, m]
        return out

    def tabulate(self, points: np.ndarray, hessian: bool = True):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n, d = pts.shape
        exps = self.exponents
        nm = exps.shape[0]

        vals = self._monomials(pts) @ self.coeffs

        grads = np.empty((n, self.n_local, d))
        dmono = np.empty((n, nm))
        for m in range(d):
            dmono[:] = exps[None, :, m]
            for a in range(d):
                e = exps[:, a] - (1 if a == m else 0)
                e = np.maximum(e, 0)
                dmono *= pts[:, a : a + 1] ** e[None, :]
            dmono[:, exps[:, m] == 0] = 0.0
            grads[:, :, m] = dmono @ self.coeffs

        if not hessian:
            return vals, grads, None

        hess = np.empty((n, self.n_local, d, d))
        for m1 in range(d):
            for m2 in range(m1, d):
                fac = exps[:, m1] * (exps[:, m2] - (1 if m1 == m2 else 0))
                dd = np.broadcast_to(fac[None, :].astype(float), (n, nm)).copy()
                for a in range(d):
                    e = exps[:, a] - (1 if a == m1 else 0) - (1 if a == m2 else 0)
                    e = np.maximum(e, 0)
                    dd *= pts[:, a : a + 1] ** e[None, :]
                dd[:, fac == 0] = 0.0
                block = dd @ self.coeffs
                hess[:, :, m1, m2] = block
                hess[:, :, m2, m1] = block
        return vals, grads, hess


def make_basis(d: int, p: int) -> LagrangeBasis:
    """Degree-p Lagrange basis on the reference d-simplex."""
    return LagrangeBasis(d, p)


@dataclass(frozen=True)
class QuadratureRule:
    """Positive-weight rule on the reference d-simplex (or [0,1] for d=1)."""

    points: np.ndarray
    weights: np.ndarray
    exactness: int

    @property
    def n_points(self) -> int:
        return self.weights.size


def _gauss01(n: int):
    x, w = roots_legendre(n)
    return (x + 1.0) / 2.0, w / 2.0


def _jacobi01(n: int, alpha: int):
    # nodes/weights for int_0^1 g(t) (1-t)^alpha dt
    x, w = roots_jacobi(n, alpha, 0.0)
    return (x + 1.0) / 2.0, w / 2.0 ** (alpha + 1)


def make_quadrature(d: int, exactness: int) -> QuadratureRule:
    """Rule integrating all polynomials of total degree <= exactness.

    Built by the collapsed-coordinate (Duffy) map from a tensor Gauss grid;
    the map Jacobian is absorbed into Gauss-Jacobi weights, so all weights
    are positive.
    """
    if exactness < 0:
        raise ValueError("exactness must be >= 0")
    if exactness > _MAX_EXACTNESS:
        raise ValueError(f"requested exactness {exactness} beyond supported limit {_MAX_EXACTNESS}")
    n = exactness // 2 + 1
    if d == 1:
        t, w = _gauss01(n)
        return QuadratureRule(t[:, None].copy(), w.copy(), exactness)
    if d == 2:
        tu, wu = _jacobi01(n, 1)
        tv, wv = _gauss01(n)
        U, V = np.meshgrid(tu, tv, indexing="ij")
        x = U.ravel()
        y = (V * (1.0 - U)).ravel()
        w = np.outer(wu, wv).ravel()
        return QuadratureRule(np.stack([x, y], axis=1), w, exactness)
    if d == 3:
        tu, wu = _jacobi01(n, 2)
        tv, wv = _jacobi01(n, 1)
        tw, ww = _gauss01(n)
        U, V, W = np.meshgrid(tu, tv, tw, indexing="ij")
        x = U.ravel()
        y = (V * (1.0 - U)).ravel()
        z = (W * (1.0 - U) * (1.0 - V)).ravel()
        w = np.einsum("i,j,k->ijk", wu, wv, ww).ravel()
        return QuadratureRule(np.stack([x, y, z], axis=1), w, exactness)
    raise ValueError(f"dimension must be 1, 2 or 3, got {d}")


def push_forward(geom: CellGeometry, grads_ref: np.ndarray, hess_ref: np.ndarray | None = None):
    """Map reference derivatives through the affine cell map.

    grad_phys = J^{-T} grad_ref and Hess_phys = J^{-T} Hess_ref J^{-1}.
    """
    Jinv = geom.jacobian_inv
    grads = np.einsum("...e,ed->...d", grads_ref, Jinv)
    if hess_ref is None:
        return grads, None
    hess = np.einsum("ea,...ef,fb->...ab", Jinv, hess_ref, Jinv)
    return grads, hess


@dataclass(frozen=True)
class DofMap:
    """Contiguous global numbering of Lagrange nodes over a cell subset.

    Nodes shared between cells (vertices, edge/face nodes) get one global
    index; numbering is deterministic (sorted by rounded coordinates).
    """

    cell_ids: np.ndarray     # cells covered, ascending
    cell_dofs: np.ndarray    # (n_cells, n_local)
    n_dofs: int
    dof_coords: np.ndarray   # (n_dofs, d)
    degree: int


def build_dofmap(mesh: Mesh, basis: LagrangeBasis, cell_ids=None) -> DofMap:
    """Global numbering of the basis nodes over the given cells (all cells
    by default).  Shared nodes are merged by rounded physical coordinates.
    """
    if cell_ids is None:
        cid = np.arange(mesh.n_cells, dtype=np.int64)
    else:
        cid = np.unique(np.asarray(cell_ids, dtype=np.int64))
        if cid.size == 0:
            raise ValueError("cell subset must be nonempty")

    verts = mesh.vertices[mesh.cells[cid]]           # (nc, d+1, d)
    bary = np.hstack([1.0 - basis.nodes.sum(axis=1, keepdims=True), basis.nodes])
    phys = np.einsum("lj,cjd->cld", bary, verts)     # (nc, nloc, d)

    scale = max(float(np.abs(mesh.vertices).max()), 1.0)
    keys = np.rint(phys / (scale * 1e-10)).astype(np.int64)
    flat = keys.reshape(-1, mesh.dim)
    uniq, index, inverse = np.unique(flat, axis=0, return_index=True, return_inverse=True)
    cell_dofs = inverse.reshape(cid.size, basis.n_local).astype(np.int64)
    dof_coords = phys.reshape(-1, mesh.dim)[index]
    return DofMap(
        cell_ids=cid,
        cell_dofs=cell_dofs,
        n_dofs=uniq.shape[0],
        dof_coords=dof_coords,
        degree=basis.degree,
    )
