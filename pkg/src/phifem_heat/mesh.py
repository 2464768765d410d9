"""Quasi-uniform simplicial background meshes on box domains.

A box is subdivided into a Cartesian grid of n cells per axis; each grid
square is split into 2 triangles along the lower-left to upper-right
diagonal, each grid cube into 6 tetrahedra (Kuhn subdivision).  Meshes are
immutable after construction and safe for concurrent reads.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BoxDomain",
    "Mesh",
    "SubMesh",
    "build_background_mesh",
    "extract_submesh",
    "cell_geometry",
    "CellGeometry",
    "dump_mesh",
]


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned box enclosing the physical domain."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise ValueError("lower and upper corners must have the same length")
        d = lo.size
        if d not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {d}")
        if not np.all(hi > lo):
            raise ValueError("upper corner must exceed lower corner componentwise")
        object.__setattr__(self, "lower", tuple(float(x) for x in lo))
        object.__setattr__(self, "upper", tuple(float(x) for x in hi))

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def extents(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))


def _unit_cube_simplices(d: int):
    """Vertex offsets (as corner multi-indices) of the simplices splitting a
    grid cell, with positive orientation.

    2D: split along the (lower-left, upper-right) diagonal.
    3D: Kuhn split into 6 tetrahedra along lattice paths.
    """
    if d == 2:
        return [
            ((0, 0), (1, 0), (1, 1)),
            ((0, 0), (1, 1), (0, 1)),
        ]
    simplices = []
    eye = np.eye(3, dtype=int)
    for perm in itertools.permutations(range(3)):
        offs = [np.zeros(3, dtype=int)]
        for axis in perm:
            offs.append(offs[-1] + eye[axis])
        # Swap the last two vertices of odd permutations to keep det > 0.
        parity = _perm_parity(perm)
        if parity < 0:
            offs[2], offs[3] = offs[3], offs[2]
        simplices.append(tuple(tuple(int(x) for x in o) for o in offs))
    return simplices


def _perm_parity(perm) -> int:
    inv = sum(1 for i in range(len(perm)) for j in range(i + 1, len(perm)) if perm[i] > perm[j])
    return -1 if inv % 2 else 1


@dataclass(frozen=True)
class Mesh:
    """Conforming simplicial mesh with global facet connectivity.

    Facets are stored once and shared; ``facet_to_cells`` has shape (nf, 2)
    with -1 marking the missing neighbor of boundary facets.
    """

    vertices: np.ndarray          # (nv, d)
    cells: np.ndarray             # (nc, d+1), positively oriented
    facets: np.ndarray            # (nf, d), vertex ids sorted per facet
    facet_to_cells: np.ndarray    # (nf, 2)
    h_cell: np.ndarray            # (nc,)
    h: float
    box: BoxDomain | None = None
    grid_n: int | None = None     # subdivisions per axis of the generating grid
    simplices_per_cell: int | None = None

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_facets(self) -> int:
        return self.facets.shape[0]


@dataclass(frozen=True)
class SubMesh:
    """Subset of parent cells with its exterior facet layer.

    ``exterior_facets`` are the parent facets with exactly one incident cell
    inside the subset; ``exterior_facet_cells`` gives that cell and
    ``exterior_facet_normals`` the unit normal pointing out of the subset.
    """

    parent: Mesh
    cell_ids: np.ndarray               # sorted, unique
    exterior_facets: np.ndarray        # facet ids
    exterior_facet_cells: np.ndarray   # owning cell per exterior facet
    exterior_facet_normals: np.ndarray  # (n_ext, d), outward unit normals

    @property
    def n_cells(self) -> int:
        return self.cell_ids.size


def build_background_mesh(box: BoxDomain, n: int) -> Mesh:
    """Cover the box with a Cartesian grid of n cells per axis and split each
    grid cell into simplices.  Deterministic: identical inputs give
    bit-identical arrays.
    """
    if n < 1:
        raise ValueError(f"subdivision count must be >= 1, got {n}")
    d = box.dim
    lo = np.asarray(box.lower)
    ext = box.extents

    axes = [lo[a] + ext[a] * np.arange(n + 1) / n for a in range(d)]
    grids = np.meshgrid(*axes, indexing="ij")
    vertices = np.stack([g.ravel() for g in grids], axis=1)

    vid = np.arange((n + 1) ** d).reshape((n + 1,) * d)
    simplices = _unit_cube_simplices(d)
    s = len(simplices)

    base = np.stack(np.meshgrid(*[np.arange(n)] * d, indexing="ij"), axis=-1).reshape(-1, d)
    ncubes = base.shape[0]
    cells = np.empty((ncubes, s, d + 1), dtype=np.int64)
    for si, simplex in enumerate(simplices):
        for vi, off in enumerate(simplex):
            idx = base + np.asarray(off, dtype=np.int64)
            cells[:, si, vi] = vid[tuple(idx[:, a] for a in range(d))]
    cells = cells.reshape(-1, d + 1)

    facets, facet_to_cells = _build_facets(cells, d)
    h_cell = _cell_diameters(vertices, cells)
    return Mesh(
        vertices=vertices,
        cells=cells,
        facets=facets,
        facet_to_cells=facet_to_cells,
        h_cell=h_cell,
        h=float(h_cell.max()),
        box=box,
        grid_n=n,
        simplices_per_cell=s,
    )


def _build_facets(cells: np.ndarray, d: int):
    nc = cells.shape[0]
    # local facet f of a cell: drop vertex f
    local = [[v for v in range(d + 1) if v != f] for f in range(d + 1)]
    all_facets = cells[:, local].reshape(-1, d)      # (nc*(d+1), d)
    all_facets = np.sort(all_facets, axis=1)
    facets, inverse = np.unique(all_facets, axis=0, return_inverse=True)
    owner = np.repeat(np.arange(nc), d + 1)
    facet_to_cells = np.full((facets.shape[0], 2), -1, dtype=np.int64)
    order = np.argsort(inverse, kind="stable")
    inv_sorted = inverse[order]
    owner_sorted = owner[order]
    first = np.searchsorted(inv_sorted, np.arange(facets.shape[0]), side="left")
    last = np.searchsorted(inv_sorted, np.arange(facets.shape[0]), side="right")
    counts = last - first
    if counts.max() > 2:
        raise ValueError("non-conforming mesh: a facet has more than 2 incident cells")
    facet_to_cells[:, 0] = owner_sorted[first]
    two = counts == 2
    facet_to_cells[two, 1] = owner_sorted[last[two] - 1]
    return facets, facet_to_cells


def _cell_diameters(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    pts = vertices[cells]  # (nc, d+1, d)
    nverts = cells.shape[1]
    diam = np.zeros(cells.shape[0])
    for i in range(nverts):
        for j in range(i + 1, nverts):
            e = np.linalg.norm(pts[:, i] - pts[:, j], axis=1)
            np.maximum(diam, e, out=diam)
    return diam


def cell_jacobians(mesh: Mesh, cell_ids: np.ndarray):
    """Affine map data for a batch of cells.

    Returns (J, Jinv, detJ) where column j of J is vertex_{j+1} - vertex_0,
    so that x = v0 + J xi maps the reference simplex onto the cell.
    """
    pts = mesh.vertices[mesh.cells[cell_ids]]        # (nc, d+1, d)
    J = np.transpose(pts[:, 1:] - pts[:, :1], (0, 2, 1))
    detJ = np.linalg.det(J)
    Jinv = np.linalg.inv(J)
    return J, Jinv, detJ


@dataclass(frozen=True)
class CellGeometry:
    """Affine map of one cell: x = v0 + J xi."""

    v0: np.ndarray
    jacobian: np.ndarray
    jacobian_inv: np.ndarray
    det: float
    volume: float
    diameter: float


def cell_geometry(mesh: Mesh, cell: int) -> CellGeometry:
    """Affine map data (Jacobian, inverse, volume, diameter) of one cell."""
    J, Jinv, detJ = cell_jacobians(mesh, np.asarray([cell]))
    d = mesh.dim
    factorial = 2.0 if d == 2 else 6.0
    return CellGeometry(
        v0=mesh.vertices[mesh.cells[cell, 0]].copy(),
        jacobian=J[0],
        jacobian_inv=Jinv[0],
        det=float(detJ[0]),
        volume=float(abs(detJ[0]) / factorial),
        diameter=float(mesh.h_cell[cell]),
    )


def extract_submesh(mesh: Mesh, cell_ids) -> SubMesh:
    """Restrict the mesh to a cell subset and compute its exterior facets
    with outward normals.
    """
    cid = np.unique(np.asarray(cell_ids, dtype=np.int64))
    if cid.size == 0:
        raise ValueError("cell subset must be nonempty")
    if cid[0] < 0 or cid[-1] >= mesh.n_cells:
        raise ValueError("cell id out of range")

    inside = np.zeros(mesh.n_cells, dtype=bool)
    inside[cid] = True
    f2c = mesh.facet_to_cells
    in0 = inside[f2c[:, 0]]
    in1 = (f2c[:, 1] >= 0) & inside[np.where(f2c[:, 1] >= 0, f2c[:, 1], 0)]
    n_inside = in0.astype(np.int64) + in1.astype(np.int64)
    ext = np.flatnonzero(n_inside == 1)
    owner = np.where(in0[ext], f2c[ext, 0], f2c[ext, 1])

    normals = facet_normals(mesh, ext, owner)
    return SubMesh(
        parent=mesh,
        cell_ids=cid,
        exterior_facets=ext,
        exterior_facet_cells=owner,
        exterior_facet_normals=normals,
    )


def facet_normals(mesh: Mesh, facet_ids: np.ndarray, from_cells: np.ndarray) -> np.ndarray:
    """Unit normals of facets, oriented away from the given incident cells."""
    fv = mesh.vertices[mesh.facets[facet_ids]]       # (nf, d, d)
    d = mesh.dim
    if d == 2:
        t = fv[:, 1] - fv[:, 0]
        normals = np.stack([t[:, 1], -t[:, 0]], axis=1)
    else:
        e0 = fv[:, 1] - fv[:, 0]
        e1 = fv[:, 2] - fv[:, 0]
        normals = np.cross(e0, e1)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    centroids_f = fv.mean(axis=1)
    centroids_c = mesh.vertices[mesh.cells[from_cells]].mean(axis=1)
    flip = np.einsum("fd,fd->f", normals, centroids_f - centroids_c) < 0
    normals[flip] *= -1.0
    return normals


def facet_measures(mesh: Mesh, facet_ids: np.ndarray) -> np.ndarray:
    """Length (2D) or area (3D) of facets."""
    fv = mesh.vertices[mesh.facets[facet_ids]]
    if mesh.dim == 2:
        return np.linalg.norm(fv[:, 1] - fv[:, 0], axis=1)
    return 0.5 * np.linalg.norm(np.cross(fv[:, 1] - fv[:, 0], fv[:, 2] - fv[:, 0]), axis=1)


def locate_cells(mesh: Mesh, points: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Cell id containing each point (-1 for points outside the box).

    Only available for meshes built by :func:`build_background_mesh`, which
    stores the generating grid structure.
    """
    if mesh.box is None or mesh.grid_n is None:
        raise ValueError("cell location requires a structured background mesh")
    pts = np.asarray(points, dtype=float)
    d = mesh.dim
    n = mesh.grid_n
    lo = np.asarray(mesh.box.lower)
    ext = mesh.box.extents
    rel = (pts - lo) / ext * n
    outside = np.any((rel < -tol * n) | (rel > n * (1 + tol)), axis=1)
    gi = np.clip(np.floor(rel).astype(np.int64), 0, n - 1)
    cube = np.ravel_multi_index(tuple(gi[:, a] for a in range(d)), (n,) * d)
    s = mesh.simplices_per_cell
    candidates = cube[:, None] * s + np.arange(s)[None, :]       # (npts, s)

    # barycentric test against each candidate simplex
    J, Jinv, _ = cell_jacobians(mesh, candidates.ravel())
    v0 = mesh.vertices[mesh.cells[candidates.ravel(), 0]]
    xi = np.einsum("pde,pe->pd", Jinv, pts.repeat(s, axis=0) - v0)
    lam0 = 1.0 - xi.sum(axis=1)
    minbary = np.minimum(xi.min(axis=1), lam0).reshape(-1, s)
    best = np.argmax(minbary, axis=1)
    found = minbary[np.arange(pts.shape[0]), best] >= -tol
    result = np.where(found, candidates[np.arange(pts.shape[0]), best], -1)
    result[outside] = -1
    return result


def dump_mesh(mesh: Mesh, path) -> None:
    """Write a plain-text vertex/cell listing for debugging."""
    with open(path, "w") as fh:
        fh.write(f"# dim {mesh.dim} vertices {mesh.n_vertices} cells {mesh.n_cells}\n")
        for v in mesh.vertices:
            fh.write("v " + " ".join(f"{x:.17g}" for x in v) + "\n")
        for c in mesh.cells:
            fh.write("c " + " ".join(str(int(i)) for i in c) + "\n")
