"""Implicit Euler time loop with a once-factored constant operator."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import SparseSystem, RhsBuilder, build_rhs
from .elements import DofMap
from .mesh import Mesh

__all__ = [
    "TimeGrid",
    "Trajectory",
    "interpolate_initial",
    "advance",
    "SolveError",
    "TimeStepResolutionWarning",
    "RESIDUAL_TOL",
]

RESIDUAL_TOL = 1e-10


class SolveError(RuntimeError):
    """Factorization failure or residual above tolerance."""


class TimeStepResolutionWarning(UserWarning):
    """The time step is below h^2, outside the regime backing the stability
    analysis.  Runs typically still converge; the warning is advisory."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [0, T] into N steps; t_N == T exactly."""

    final_time: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError(f"step count must be >= 1, got {self.n_steps}")
        if self.final_time <= 0.0:
            raise ValueError(f"final time must be positive, got {self.final_time}")

    @property
    def dt(self) -> float:
        return self.final_time / self.n_steps

    def times(self) -> np.ndarray:
        # derived, not accumulated, so t_N lands on T
        return np.arange(self.n_steps + 1) * (self.final_time / self.n_steps)


@dataclass
class Trajectory:
    """Per-step coefficient vectors plus solve diagnostics.

    ``steps[n]`` holds w at t_{n+1}; with streaming storage only the final
    vector is retained and ``steps`` is None.
    """

    grid: TimeGrid
    initial_field: np.ndarray
    steps: Optional[list]
    final: np.ndarray
    residuals: np.ndarray
    factor_seconds: float
    solve_seconds: float


def interpolate_initial(u0: Callable[[np.ndarray], np.ndarray], dofmap: DofMap, mesh: Mesh) -> np.ndarray:
    """Nodal interpolation of the initial data at the unknown's nodes."""
    vals = np.asarray(u0(dofmap.dof_coords), dtype=float)
    if vals.shape != (dofmap.n_dofs,):
        raise ValueError("initial data evaluator returned a wrong shape")
    if not np.isfinite(vals).all():
        bad = dofmap.dof_coords[np.flatnonzero(~np.isfinite(vals))[0]]
        raise ValueError(f"initial data is nonfinite at node {tuple(bad)}")
    return vals


def _direct_factor(A: sp.csr_matrix):
    try:
        lu = spla.splu(A.tocsc())
    except RuntimeError as exc:  # singular matrix
        raise SolveError(f"sparse LU factorization failed: {exc}") from exc
    return lu.solve


def _iterative_factor(A: sp.csr_matrix):
    try:
        ilu = spla.spilu(A.tocsc(), drop_tol=1e-8, fill_factor=20)
    except RuntimeError as exc:
        raise SolveError(f"incomplete factorization failed: {exc}") from exc
    M = spla.LinearOperator(A.shape, ilu.solve)

    def solve(b):
        x, info = spla.gmres(A, b, M=M, rtol=1e-12, atol=0.0, restart=100, maxiter=2000)
        if info != 0:
            raise SolveError(f"GMRES did not converge (info={info})")
        return x

    return solve


def advance(
    system: SparseSystem,
    builder: RhsBuilder,
    grid: TimeGrid,
    u0_field: np.ndarray,
    f: Callable[[np.ndarray, float], np.ndarray],
    *,
    method: str = "direct",
    store: bool = True,
    observers=(),
) -> Trajectory:
    """Advance the implicit scheme over the whole time grid.

    The operator is factored once.  Observers are called as
    ``observer(n, t, kind, vec)`` with kind 'field' for the initial
    interpolant (n=0) and 'w' for each computed step.
    """
    if abs(grid.dt - system.dt) > 1e-12 * max(grid.dt, system.dt):
        raise ValueError(f"system assembled with dt={system.dt}, grid has dt={grid.dt}")
    if grid.dt < system.h**2:
        warnings.warn(
            f"dt={grid.dt:.3e} is below h^2={system.h**2:.3e}; the stability regime "
            "requires dt of order h^2 or larger",
            TimeStepResolutionWarning,
            stacklevel=2,
        )

    t0 = time.perf_counter()
    if method == "direct":
        solve = _direct_factor(system.A)
    elif method == "iterative":
        solve = _iterative_factor(system.A)
    else:
        raise ValueError(f"unknown solver method {method!r}")
    factor_seconds = time.perf_counter() - t0

    for obs in observers:
        obs(0, 0.0, "field", u0_field)

    times = grid.times()
    residuals = np.empty(grid.n_steps)
    steps = [] if store else None
    u_prev = np.asarray(u0_field, dtype=float)
    initial = True
    t0 = time.perf_counter()
    for n in range(grid.n_steps):
        b = build_rhs(builder, u_prev, f, times[n + 1], initial=initial)
        nb = np.linalg.norm(b)
        if nb == 0.0:
            x = np.zeros_like(b)
            res = 0.0
        else:
            x = solve(b)
            res = np.linalg.norm(system.A @ x - b) / nb
            if not np.isfinite(x).all():
                raise SolveError(f"nonfinite solution at step {n + 1}")
            if res > RESIDUAL_TOL:
                raise SolveError(f"relative residual {res:.3e} above {RESIDUAL_TOL} at step {n + 1}")
        residuals[n] = res
        if store:
            steps.append(x)
        for obs in observers:
            obs(n + 1, times[n + 1], "w", x)
        u_prev = x
        initial = False
    solve_seconds = time.perf_counter() - t0

    return Trajectory(
        grid=grid,
        initial_field=np.asarray(u0_field, dtype=float),
        steps=steps,
        final=u_prev,
        residuals=residuals,
        factor_seconds=factor_seconds,
        solve_seconds=solve_seconds,
    )
