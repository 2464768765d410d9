"""Discrete level set and cell/facet classification.

The analytic level set is interpolated nodally into a Lagrange space on the
background mesh.  Cells are classified from the sign of the discrete level
set at deterministic samples (the Lagrange nodes, plus the barycenter for
degree >= 2): a cell is active if any sample is negative, cut if samples of
both signs occur (zero counting as nonnegative).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .mesh import Mesh, SubMesh, extract_submesh
from .elements import LagrangeBasis, DofMap, make_basis, build_dofmap

__all__ = [
    "LevelSetFunction",
    "DiscreteLevelSet",
    "CellClassification",
    "interpolate_levelset",
    "classify",
    "NoActiveCellsError",
]


class NoActiveCellsError(RuntimeError):
    """The level set is nonnegative at every classification sample."""


@dataclass(frozen=True)
class LevelSetFunction:
    """Scalar field, negative inside the physical domain, zero on its
    boundary.  ``evaluator`` must accept an (n, d) array of points.
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "levelset"

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self.evaluator(np.atleast_2d(points)), dtype=float)


@dataclass(frozen=True)
class DiscreteLevelSet:
    """Nodal interpolant of the level set on the full background mesh."""

    mesh: Mesh
    degree: int
    coefficients: np.ndarray   # one value per global degree-l node
    dofmap: DofMap             # covers all background cells
    basis: LagrangeBasis

    def cell_coefficients(self, cell_ids) -> np.ndarray:
        """Nodal values per cell, shape (n_cells, n_local)."""
        return self.coefficients[self.dofmap.cell_dofs[np.asarray(cell_ids, dtype=np.int64)]]


def interpolate_levelset(phi: LevelSetFunction, mesh: Mesh, l: int) -> DiscreteLevelSet:
    """Pointwise interpolation of phi at the degree-l Lagrange nodes."""
    if l < 1:
        raise ValueError(f"interpolation degree must be >= 1, got {l}")
    basis = make_basis(mesh.dim, l)
    dofmap = build_dofmap(mesh, basis)
    coeffs = phi(dofmap.dof_coords)
    return DiscreteLevelSet(mesh=mesh, degree=l, coefficients=np.asarray(coeffs, dtype=float),
                            dofmap=dofmap, basis=basis)


@dataclass(frozen=True)
class CellClassification:
    """Active/cut cell sets, ghost facets and the active submesh boundary."""

    active_cells: np.ndarray          # sorted cell ids
    cut_cells: np.ndarray             # subset of active_cells
    ghost_facets: np.ndarray          # facet ids
    submesh: SubMesh                  # active submesh; carries exterior facets/normals

    @property
    def active_exterior_facets(self) -> np.ndarray:
        return self.submesh.exterior_facets

    def summary(self) -> str:
        return (
            f"active cells      {self.active_cells.size}\n"
            f"cut cells         {self.cut_cells.size}\n"
            f"ghost facets      {self.ghost_facets.size}\n"
            f"exterior facets   {self.submesh.exterior_facets.size}"
        )


def classify(phi_h: DiscreteLevelSet, mesh: Mesh) -> CellClassification:
    """Classify cells by the sign of phi_h at the classification samples."""
    if phi_h.mesh is not mesh:
        raise ValueError("discrete level set was built on a different mesh")
    nodal = phi_h.cell_coefficients(np.arange(mesh.n_cells))
    samples = [nodal]
    if phi_h.degree >= 2:
        bary = np.full((1, mesh.dim), 1.0 / (mesh.dim + 1))
        vals, _, _ = phi_h.basis.tabulate(bary, hessian=False)
        samples.append(nodal @ vals[0])
    samples = np.column_stack([s if s.ndim == 2 else s[:, None] for s in samples])

    negative = samples < 0.0
    active = negative.any(axis=1)
    if not active.any():
        raise NoActiveCellsError("level set has no negative sample in the box")
    cut = active & (samples >= 0.0).any(axis=1)

    active_ids = np.flatnonzero(active)
    cut_ids = np.flatnonzero(cut)
    submesh = extract_submesh(mesh, active_ids)

    f2c = mesh.facet_to_cells
    c0, c1 = f2c[:, 0], f2c[:, 1]
    internal_active = (c1 >= 0) & active[c0] & active[np.where(c1 >= 0, c1, 0)]
    touches_cut = cut[c0] | cut[np.where(c1 >= 0, c1, 0)]
    ghost = np.flatnonzero(internal_active & touches_cut)

    return CellClassification(
        active_cells=active_ids,
        cut_cells=cut_ids,
        ghost_facets=ghost,
        submesh=submesh,
    )
