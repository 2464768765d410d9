"""Discrete error norms, convergence-order fits and report serialization.

Errors are integrated over all active cells with the assembly quadrature:
the time-summed H1 seminorm error and the time-max L2 error, both relative.
For cases without an exact solution, coarse runs are measured against the
finest run of a ladder (self-convergence) with nested time grids.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .assembly import RhsBuilder
from .elements import make_basis
from .levelset import DiscreteLevelSet
from .mesh import Mesh, cell_jacobians, locate_cells
from .solver import Trajectory

__all__ = [
    "ErrorRecord",
    "ConvergenceReport",
    "ErrorIntegrator",
    "FieldSampler",
    "error_l2h1",
    "error_linfl2",
    "self_convergence",
    "fit_order",
    "write_records_csv",
    "CSV_COLUMNS",
]

CSV_COLUMNS = [
    "case", "k", "l", "sigma", "dt_rule", "n", "h", "dt", "ndofs",
    "err_l2h1", "err_linfl2", "t_assemble_s", "t_factor_s", "t_solve_s",
]


@dataclass
class ErrorRecord:
    """One row of a convergence study."""

    case: str
    k: int
    l: int
    sigma: float
    dt_rule: str
    n: int
    h: float
    dt: float
    ndofs: int
    err_l2h1: float
    err_linfl2: float
    t_assemble_s: float = 0.0
    t_factor_s: float = 0.0
    t_solve_s: float = 0.0


@dataclass
class ConvergenceReport:
    """Records of one ladder (decreasing h) with fitted orders per norm.

    ``orders[norm]`` is the least-squares slope of log error against log h;
    ``orders_excl_coarsest`` drops the coarsest mesh (pre-asymptotic).
    """

    records: list
    orders: dict
    orders_excl_coarsest: dict
    metadata: dict = field(default_factory=dict)


class ErrorIntegrator:
    """Streaming accumulator of the discrete error norms against an exact
    solution.  Usable as an ``advance`` observer or replayed from a stored
    trajectory.
    """

    def __init__(self, builder: RhsBuilder, u_ref, u_ref_grad=None):
        self.builder = builder
        self.u_ref = u_ref
        self.u_ref_grad = u_ref_grad
        self.num_l2, self.den_l2 = [], []
        self.num_h1, self.den_h1 = [], []

    def __call__(self, n, t, kind, vec):
        b = self.builder
        wq = b.wq
        val_op = b.val_plain if kind == "field" else b.val_w
        uq = val_op @ vec
        ur = np.asarray(self.u_ref(b.qp, t), dtype=float)
        self.num_l2.append(float(wq @ (uq - ur) ** 2))
        self.den_l2.append(float(wq @ ur**2))
        if self.u_ref_grad is not None:
            grad_ops = b.grad_plain if kind == "field" else b.grad_w
            gq = np.stack([op @ vec for op in grad_ops], axis=1)
            gr = np.asarray(self.u_ref_grad(b.qp, t), dtype=float)
            diff = gq - gr
            self.num_h1.append(float(wq @ np.einsum("pd,pd->p", diff, diff)))
            self.den_h1.append(float(wq @ np.einsum("pd,pd->p", gr, gr)))

    def l2h1(self) -> float:
        den = sum(self.den_h1)
        if den == 0.0:
            raise ZeroDivisionError("reference solution has zero H1 seminorm over the time grid")
        return math.sqrt(sum(self.num_h1) / den)

    def linfl2(self) -> float:
        den = max(self.den_l2)
        if den == 0.0:
            return math.nan  # degenerate reference; flagged, not raised
        return math.sqrt(max(self.num_l2) / den)


def _replay(trajectory: Trajectory, integrator: ErrorIntegrator):
    if trajectory.steps is None:
        raise ValueError("trajectory was stored in streaming mode; no per-step states")
    times = trajectory.grid.times()
    integrator(0, 0.0, "field", trajectory.initial_field)
    for n, w in enumerate(trajectory.steps, start=1):
        integrator(n, times[n], "w", w)
    return integrator


def error_l2h1(trajectory: Trajectory, u_ref, u_ref_grad, builder: RhsBuilder) -> float:
    """Relative time-summed H1 seminorm error over the active cells."""
    it = _replay(trajectory, ErrorIntegrator(builder, u_ref, u_ref_grad))
    return it.l2h1()


def error_linfl2(trajectory: Trajectory, u_ref, builder: RhsBuilder) -> float:
    """Relative time-max L2 error over the active cells (nan if the
    reference is identically zero)."""
    it = _replay(trajectory, ErrorIntegrator(builder, u_ref))
    return it.linfl2()


class FieldSampler:
    """Pointwise evaluation of a run's solution at arbitrary points.

    Works on structured background meshes; points outside the active cells
    are flagged invalid.
    """

    def __init__(self, mesh: Mesh, dofmap, phi_h: DiscreteLevelSet, trajectory: Trajectory):
        self.mesh = mesh
        self.dofmap = dofmap
        self.phi_h = phi_h
        self.trajectory = trajectory
        self.basis_k = make_basis(mesh.dim, dofmap.degree)
        lookup = np.full(mesh.n_cells, -1, dtype=np.int64)
        lookup[dofmap.cell_ids] = np.arange(dofmap.cell_ids.size)
        self._active_pos = lookup

    def sample(self, points: np.ndarray, step_index: int):
        """Values, gradients and validity mask at the given points for time
        step ``step_index`` (0 is the initial interpolant)."""
        mesh = self.mesh
        d = mesh.dim
        pts = np.asarray(points, dtype=float)
        cells = locate_cells(mesh, pts)
        pos = np.where(cells >= 0, self._active_pos[np.maximum(cells, 0)], -1)
        valid = pos >= 0

        values = np.zeros(pts.shape[0])
        grads = np.zeros((pts.shape[0], d))
        if not valid.any():
            return values, grads, valid

        vc = cells[valid]
        vp = pts[valid]
        J, Jinv, _ = cell_jacobians(mesh, vc)
        v0 = mesh.vertices[mesh.cells[vc, 0]]
        xi = np.einsum("pde,pe->pd", Jinv, vp - v0)

        vals_k, gk_ref, _ = self.basis_k.tabulate(xi, hessian=False)
        gk = np.einsum("pie,ped->pid", gk_ref, Jinv)

        if step_index == 0:
            coeffs = self.trajectory.initial_field[self.dofmap.cell_dofs[pos[valid]]]
            values[valid] = np.einsum("pi,pi->p", vals_k, coeffs)
            grads[valid] = np.einsum("pid,pi->pd", gk, coeffs)
            return values, grads, valid

        w = self.trajectory.steps[step_index - 1]
        coeffs = w[self.dofmap.cell_dofs[pos[valid]]]
        wval = np.einsum("pi,pi->p", vals_k, coeffs)
        wgrad = np.einsum("pid,pi->pd", gk, coeffs)

        basis_l = self.phi_h.basis
        vals_l, gl_ref, _ = basis_l.tabulate(xi, hessian=False)
        gl = np.einsum("pie,ped->pid", gl_ref, Jinv)
        pc = self.phi_h.cell_coefficients(vc)
        phi_v = np.einsum("pl,pl->p", vals_l, pc)
        phi_g = np.einsum("pld,pl->pd", gl, pc)

        values[valid] = phi_v * wval
        grads[valid] = wval[:, None] * phi_g + phi_v[:, None] * wgrad
        return values, grads, valid


def _lcm_all(values):
    out = 1
    for v in values:
        out = out * v // math.gcd(out, v)
    return out


def self_convergence(
    case,
    ns,
    n_ref: int,
    *,
    k: int = 1,
    l: int = 2,
    sigma: float = 1.0,
    dt_rule: str = "1",
    final_time: Optional[float] = None,
    box=None,
    solver: str = "direct",
) -> ConvergenceReport:
    """Measure a mesh ladder against the finest run of the same scheme.

    Time grids are nested: each coarse step count divides the reference step
    count.  Errors are integrated over the reference quadrature points lying
    in cells fully covered by the coarse active mesh.
    """
    from .driver import run_single, steps_for_rule, mesh_size

    ns = sorted(set(int(n) for n in ns))
    if ns and ns[-1] >= n_ref:
        raise ValueError("ladder entries must be coarser than the reference run")

    T = final_time if final_time is not None else case.final_time
    n_steps = {n: steps_for_rule(mesh_size(case, n, box), dt_rule, T) for n in ns}
    N_ref = max(steps_for_rule(mesh_size(case, n_ref, box), dt_rule, T), _lcm_all(n_steps.values()))
    if N_ref > 100_000:
        raise ValueError(f"nested time grids would need {N_ref} reference steps")

    ref = run_single(
        case, n_ref, k=k, l=l, sigma=sigma, dt_rule=dt_rule, final_time=T, box=box,
        solver=solver, store_trajectory=True, compute_errors=False, n_steps=N_ref,
    )
    fb = ref.builder
    nq_cell = fb.qp.shape[0] // ref.dofmap.cell_ids.size
    times_ref = ref.trajectory.grid.times()

    records = []
    for n in ns:
        N_c = n_steps[n]
        if N_ref % N_c != 0:
            raise ValueError(f"time grids not nested: {N_c} does not divide {N_ref}")
        run = run_single(
            case, n, k=k, l=l, sigma=sigma, dt_rule=dt_rule, final_time=T, box=box,
            solver=solver, store_trajectory=True, compute_errors=False, n_steps=N_c,
        )
        sampler = FieldSampler(run.mesh, run.dofmap, run.phi_h, run.trajectory)
        stride = N_ref // N_c
        dt_c = T / N_c

        num_l2, den_l2, num_h1, den_h1 = [], [], [], []
        mask = None
        for m in range(N_c + 1):
            ridx = m * stride
            kind_ref = "field" if ridx == 0 else "w"
            vec = ref.trajectory.initial_field if ridx == 0 else ref.trajectory.steps[ridx - 1]
            val_op = fb.val_plain if kind_ref == "field" else fb.val_w
            grad_ops = fb.grad_plain if kind_ref == "field" else fb.grad_w
            uf = val_op @ vec
            gf = np.stack([op @ vec for op in grad_ops], axis=1)

            uc, gc, valid = sampler.sample(fb.qp, m)
            if mask is None:
                # only reference cells whose every quadrature point lies in
                # the coarse active mesh enter the error integrals
                cell_ok = valid.reshape(-1, nq_cell).all(axis=1)
                mask = np.repeat(cell_ok, nq_cell)
            w = fb.wq[mask]
            du = (uc - uf)[mask]
            dg = (gc - gf)[mask]
            num_l2.append(float(w @ du**2))
            den_l2.append(float(w @ uf[mask] ** 2))
            num_h1.append(float(w @ np.einsum("pd,pd->p", dg, dg)))
            gfm = gf[mask]
            den_h1.append(float(w @ np.einsum("pd,pd->p", gfm, gfm)))

        err_l2h1 = math.sqrt(dt_c * sum(num_h1) / (dt_c * sum(den_h1))) if sum(den_h1) else math.nan
        err_linfl2 = math.sqrt(max(num_l2) / max(den_l2)) if max(den_l2) else math.nan
        rec = run.record
        rec.err_l2h1 = err_l2h1
        rec.err_linfl2 = err_linfl2
        records.append(rec)

    records.sort(key=lambda r: -r.h)
    return build_report(records, metadata={
        "case": case.name, "k": k, "l": l, "sigma": sigma, "dt_rule": dt_rule,
        "reference_n": n_ref, "reference_steps": N_ref,
    })


def fit_order(hs, errors, skip_coarsest: bool = False) -> float:
    """Least-squares slope of log error against log mesh size."""
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if skip_coarsest and hs.size > 2:
        keep = hs < hs.max()
        hs, errors = hs[keep], errors[keep]
    if hs.size < 2:
        raise ValueError("at least 2 records are required to fit an order")
    if np.any(errors < 0) or not np.all(np.isfinite(errors)):
        raise ValueError("errors must be finite and nonnegative")
    if np.all(errors == 0):
        return 0.0
    if np.any(errors == 0):
        raise ValueError("cannot fit an order through an exactly zero error")
    return float(np.polyfit(np.log(hs), np.log(errors), 1)[0])


def build_report(records, metadata=None) -> ConvergenceReport:
    """Order the records by decreasing h and attach fitted orders."""
    records = sorted(records, key=lambda r: -r.h)
    hs = [r.h for r in records]
    if len(set(hs)) != len(hs):
        raise ValueError("records must have strictly decreasing mesh sizes")
    orders, orders_excl = {}, {}
    if len(records) >= 2:
        for norm in ("err_l2h1", "err_linfl2"):
            errs = [getattr(r, norm) for r in records]
            if all(np.isfinite(errs)) and all(e > 0 for e in errs):
                orders[norm] = fit_order(hs, errs)
                orders_excl[norm] = fit_order(hs, errs, skip_coarsest=True)
    return ConvergenceReport(records=records, orders=orders, orders_excl_coarsest=orders_excl,
                             metadata=metadata or {})


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def write_records_csv(path, records, append: bool = False) -> None:
    """Serialize error records with the canonical column set."""
    mode = "a" if append else "w"
    with open(path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if not append:
            writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
