"""End-to-end pipeline for one configuration: mesh, classification,
assembly, time stepping and error measurement."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .analysis import ErrorIntegrator, ErrorRecord
from .assembly import discretize
from .cases import TestCase
from .elements import make_basis, build_dofmap
from .levelset import interpolate_levelset, classify
from .mesh import BoxDomain, build_background_mesh
from .solver import TimeGrid, interpolate_initial, advance

__all__ = ["RunResult", "run_single", "make_time_grid", "steps_for_rule", "mesh_size"]

log = logging.getLogger("phifem_heat")


@dataclass
class RunResult:
    """Everything produced by one pipeline execution."""

    record: ErrorRecord
    case: TestCase
    mesh: object
    phi_h: object
    classification: object
    dofmap: object
    system: object
    builder: object
    trajectory: object
    grid: TimeGrid


def parse_dt_rule(rule: str) -> Fraction:
    try:
        frac = Fraction(rule)
    except (ValueError, ZeroDivisionError) as exc:
        raise ValueError(f"invalid dt rule {rule!r}; expected a rational like '1' or '3/2'") from exc
    if frac <= 0:
        raise ValueError(f"dt rule exponent must be positive, got {rule!r}")
    return frac


def mesh_size(case: TestCase, n: int, box: Optional[BoxDomain] = None) -> float:
    """Mesh size of the background grid without building it: the grid-cell
    diagonal, which is the largest simplex edge of the subdivision."""
    b = box if box is not None else case.box
    return float(np.linalg.norm(b.extents / n))


def steps_for_rule(h: float, dt_rule: str, final_time: float) -> int:
    """Step count from dt = h^(p/m), rounded so the grid lands on T."""
    exponent = float(parse_dt_rule(dt_rule))
    return max(1, math.ceil(final_time / h**exponent))


def make_time_grid(h: float, dt_rule: str, final_time: float, n_steps: Optional[int] = None) -> TimeGrid:
    if n_steps is None:
        n_steps = steps_for_rule(h, dt_rule, final_time)
    return TimeGrid(final_time=final_time, n_steps=n_steps)


def run_single(
    case: TestCase,
    n: int,
    *,
    k: int = 1,
    l: Optional[int] = None,
    sigma: Optional[float] = None,
    dt_rule: str = "1",
    final_time: Optional[float] = None,
    box: Optional[BoxDomain] = None,
    solver: str = "direct",
    store_trajectory: bool = False,
    compute_errors: bool = True,
    n_steps: Optional[int] = None,
    quad_exactness: Optional[int] = None,
) -> RunResult:
    """Run the full pipeline for one mesh resolution.

    Timings cover assembly, factorization and the time loop, not mesh
    construction.
    """
    if k < 1:
        raise ValueError(f"element degree k must be >= 1, got {k}")
    l = l if l is not None else k + 1
    if l < k:
        raise ValueError(f"level-set degree l={l} must be at least k={k}")
    sigma = sigma if sigma is not None else case.sigma
    T = final_time if final_time is not None else case.final_time
    b = box if box is not None else case.box

    mesh = build_background_mesh(b, n)
    phi_h = interpolate_levelset(case.levelset, mesh, l)
    cls = classify(phi_h, mesh)
    log.info(
        "case=%s n=%d h=%.4g: %d active, %d cut cells, %d ghost facets",
        case.name, n, mesh.h, cls.active_cells.size, cls.cut_cells.size, cls.ghost_facets.size,
    )

    grid = make_time_grid(mesh.h, dt_rule, T, n_steps=n_steps)

    basis_k = make_basis(mesh.dim, k)
    dofmap = build_dofmap(mesh, basis_k, cls.active_cells)
    log.info("degrees of freedom: %d, time steps: %d (dt=%.4g)", dofmap.n_dofs, grid.n_steps, grid.dt)

    t0 = time.perf_counter()
    system, builder = discretize(
        mesh, cls, phi_h, dofmap, sigma, grid.dt, quad_exactness=quad_exactness
    )
    t_assemble = time.perf_counter() - t0

    u0_field = interpolate_initial(case.initial, dofmap, mesh)

    observers = []
    integrator = None
    if compute_errors and case.exact is not None:
        integrator = ErrorIntegrator(builder, case.exact, case.exact_gradient)
        observers.append(integrator)

    trajectory = advance(
        system, builder, grid, u0_field, case.source,
        method=solver, store=store_trajectory, observers=observers,
    )

    err_l2h1 = err_linfl2 = math.nan
    if integrator is not None:
        err_linfl2 = integrator.linfl2()
        if case.exact_gradient is not None:
            err_l2h1 = integrator.l2h1()

    record = ErrorRecord(
        case=case.name,
        k=k,
        l=l,
        sigma=sigma,
        dt_rule=dt_rule,
        n=n,
        h=mesh.h,
        dt=grid.dt,
        ndofs=dofmap.n_dofs,
        err_l2h1=err_l2h1,
        err_linfl2=err_linfl2,
        t_assemble_s=t_assemble,
        t_factor_s=trajectory.factor_seconds,
        t_solve_s=trajectory.solve_seconds,
    )
    return RunResult(
        record=record,
        case=case,
        mesh=mesh,
        phi_h=phi_h,
        classification=cls,
        dofmap=dofmap,
        system=system,
        builder=builder,
        trajectory=trajectory,
        grid=grid,
    )
