"""Built-in test configurations and a small expression-based case loader.

The circle case carries a manufactured solution (so errors can be measured
exactly); the 3D popcorn case has a Gaussian source and no closed-form
solution, and is meant for self-convergence studies.
"""

from __future__ import annotations

import ast
import math
import operator
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .levelset import LevelSetFunction
from .mesh import BoxDomain

__all__ = ["TestCase", "circle_case", "popcorn_case", "load_case", "compile_expression"]


@dataclass(frozen=True)
class TestCase:
    """One solver configuration: geometry, data, and recommended defaults."""

    name: str
    dim: int
    levelset: LevelSetFunction
    source: Callable[[np.ndarray, float], np.ndarray]       # f(points, t)
    initial: Callable[[np.ndarray], np.ndarray]             # u0(points)
    box: BoxDomain
    exact: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    exact_gradient: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    sigma: float = 1.0
    final_time: float = 1.0


def circle_case() -> TestCase:
    """Unit circle with a manufactured solution vanishing on the boundary.

    u(x, y, t) = cos(pi (x^2 + y^2) / 2) exp(x) sin(t); the source is the
    closed-form heat residual of u (checked against finite differences in
    the test suite).
    """

    def phi(p):
        return -1.0 + p[:, 0] ** 2 + p[:, 1] ** 2

    def phi_grad(p):
        return 2.0 * p

    def exact(p, t):
        q = 0.5 * np.pi * (p[:, 0] ** 2 + p[:, 1] ** 2)
        return np.cos(q) * np.exp(p[:, 0]) * math.sin(t)

    def exact_gradient(p, t):
        x, y = p[:, 0], p[:, 1]
        q = 0.5 * np.pi * (x**2 + y**2)
        ex = np.exp(x) * math.sin(t)
        gx = ex * (np.cos(q) - np.pi * x * np.sin(q))
        gy = -np.pi * y * ex * np.sin(q)
        return np.stack([gx, gy], axis=1)

    def source(p, t):
        x, y = p[:, 0], p[:, 1]
        r2 = x**2 + y**2
        q = 0.5 * np.pi * r2
        cq, sq = np.cos(q), np.sin(q)
        lap = np.exp(x) * math.sin(t) * (cq - 2.0 * np.pi * x * sq - 2.0 * np.pi * sq - np.pi**2 * r2 * cq)
        dt = cq * np.exp(x) * math.cos(t)
        return dt - lap

    return TestCase(
        name="circle",
        dim=2,
        levelset=LevelSetFunction(phi, phi_grad, name="circle"),
        source=source,
        initial=lambda p: np.zeros(p.shape[0]),
        box=BoxDomain((-1.5, -1.5), (1.5, 1.5)),
        exact=exact,
        exact_gradient=exact_gradient,
        sigma=1.0,
        final_time=1.0,
    )


def popcorn_centers(r0: float = 0.6) -> np.ndarray:
    """The twelve bump centers of the popcorn surface."""
    centers = np.zeros((12, 3))
    for k in range(5):
        a = 2.0 * k * math.pi / 5.0
        centers[k] = (r0 / math.sqrt(5.0)) * np.array([2.0 * math.cos(a), 2.0 * math.sin(a), 1.0])
    for k in range(5, 10):
        a = (2.0 * (k - 5) - 1.0) * math.pi / 5.0
        centers[k] = (r0 / math.sqrt(5.0)) * np.array([2.0 * math.cos(a), 2.0 * math.sin(a), -1.0])
    centers[10] = (0.0, 0.0, r0)
    centers[11] = (0.0, 0.0, -r0)
    return centers


def popcorn_case(r0: float = 0.6, amplitude: float = 1.5, width: float = 0.3) -> TestCase:
    """3D popcorn domain heated by a fixed Gaussian source, zero initial data."""
    centers = popcorn_centers(r0)
    mu = np.array([0.2, 0.3, -0.1])

    def phi(p):
        val = np.einsum("pd,pd->p", p, p) - r0**2
        for c in centers:
            diff = p - c
            val -= amplitude * np.exp(-np.einsum("pd,pd->p", diff, diff) / width**2)
        return val

    def source(p, t):
        diff = p - mu
        return np.exp(-np.einsum("pd,pd->p", diff, diff) / (2.0 * width**2))

    return TestCase(
        name="popcorn",
        dim=3,
        levelset=LevelSetFunction(phi, name="popcorn"),
        source=source,
        initial=lambda p: np.zeros(p.shape[0]),
        box=BoxDomain((-1.5, -1.5, -1.5), (1.5, 1.5, 1.5)),
        sigma=1.0,
        final_time=1.0,
    )


# ---------------------------------------------------------------------------
# expression-based custom cases

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_FUNCS = {"exp": np.exp, "sin": np.sin, "cos": np.cos, "sqrt": np.sqrt}


def compile_expression(text: str, variables=("x", "y", "z", "t")):
    """Compile an arithmetic expression over x, y, z, t into a vectorized
    function of a variable dict.  Supports + - * / ^, exp, sin, cos, sqrt.
    """
    tree = ast.parse(text.replace("^", "**"), mode="eval")

    def ev(node, env):
        if isinstance(node, ast.Expression):
            return ev(node.body, env)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id in env:
                return env[node.id]
            if node.id == "pi":
                return math.pi
            raise ValueError(f"unknown variable {node.id!r}")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left, env), ev(node.right, env))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub):
            return -ev(node.operand, env)
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.UAdd):
            return ev(node.operand, env)
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS:
            if len(node.args) != 1 or node.keywords:
                raise ValueError(f"{node.func.id} takes exactly one argument")
            return _FUNCS[node.func.id](ev(node.args[0], env))
        raise ValueError(f"unsupported expression element: {ast.dump(node)}")

    def fn(env):
        bad = set(env) - set(variables)
        if bad:
            raise ValueError(f"unexpected variables {sorted(bad)}")
        return ev(tree, env)

    return fn


def load_case(path) -> TestCase:
    """Build a case from a TOML file with expression strings.

    Required keys: name, dimension, phi, f.  Optional: u0 (default 0),
    box_lower/box_upper, sigma, T.
    """
    with open(path, "rb") as fh:
        cfg = tomllib.load(fh)
    name = cfg["name"]
    dim = int(cfg["dimension"])
    if dim not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {dim}")
    coords = ("x", "y", "z")[:dim]

    phi_fn = compile_expression(cfg["phi"])
    f_fn = compile_expression(cfg["f"])
    u0_fn = compile_expression(cfg.get("u0", "0"))

    def env(points, t=None):
        e = {c: points[:, i] for i, c in enumerate(coords)}
        if t is not None:
            e["t"] = t
        return e

    def phi(p):
        return np.broadcast_to(np.asarray(phi_fn(env(p)), dtype=float), (p.shape[0],)).copy()

    def source(p, t):
        return np.broadcast_to(np.asarray(f_fn(env(p, t)), dtype=float), (p.shape[0],)).copy()

    def initial(p):
        return np.broadcast_to(np.asarray(u0_fn(env(p, 0.0)), dtype=float), (p.shape[0],)).copy()

    lower = tuple(cfg.get("box_lower", (-1.5,) * dim))
    upper = tuple(cfg.get("box_upper", (1.5,) * dim))
    return TestCase(
        name=name,
        dim=dim,
        levelset=LevelSetFunction(phi, name=name),
        source=source,
        initial=initial,
        box=BoxDomain(lower, upper),
        sigma=float(cfg.get("sigma", 1.0)),
        final_time=float(cfg.get("T", 1.0)),
    )
