"""Outer-loop optimizers used by the direct and variable-projection fitters.

All optimizers are deterministic and never evaluate the objective outside
the supplied box.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import ConfigError, FitError

Objective = Callable[[np.ndarray], float]
ObjectiveAndGrad = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass(frozen=True)
class Box:
    """Elementwise bounds; infinities are allowed."""

    lower: np.ndarray
    upper: np.ndarray

    def __init__(self, lower: Sequence[float], upper: Sequence[float]):
        lo = np.asarray(lower, dtype=float)
        hi = np.asarray(upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ConfigError("box bounds must be 1-D and of equal length")
        if not np.all(lo < hi):
            raise ConfigError("box requires lower < upper elementwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def project(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def scipy_bounds(self) -> list[tuple[Optional[float], Optional[float]]]:
        return [
            (None if math.isinf(lo) else float(lo), None if math.isinf(hi) else float(hi))
            for lo, hi in zip(self.lower, self.upper)
        ]


@dataclass
class OptimResult:
    x: np.ndarray
    f: float
    iterations: int
    converged: bool
    gradient_norm: Optional[float] = None
    evaluations: int = 0
    message: str = ""


def grid_axes(box: Box, points_per_dim: int) -> list[np.ndarray]:
    if points_per_dim < 2:
        raise ConfigError("points_per_dim must be >= 2")
    if not (np.all(np.isfinite(box.lower)) and np.all(np.isfinite(box.upper))):
        raise ConfigError("grid search needs a finite box")
    return [np.linspace(lo, hi, points_per_dim) for lo, hi in zip(box.lower, box.upper)]


def grid_search(
    objective: Objective,
    box: Optional[Box] = None,
    points_per_dim: Optional[int] = None,
    *,
    axes: Optional[Sequence[np.ndarray]] = None,
    batched: bool = False,
) -> OptimResult:
    """Exhaustive search over a tensor grid.

    The grid is either uniform over ``box`` with ``points_per_dim`` nodes per
    dimension, or given explicitly as ``axes``. With ``batched=True`` the
    objective receives a ``(nodes, dim)`` array and returns one value per
    node. Non-finite values are skipped; ties resolve to the lowest
    lexicographic node index.
    """
    if axes is None:
        if box is None or points_per_dim is None:
            raise ConfigError("grid_search needs either axes or box + points_per_dim")
        axes = grid_axes(box, points_per_dim)
    axes = [np.asarray(a, dtype=float) for a in axes]
    nodes = np.array(list(itertools.product(*axes)))
    if batched:
        values = np.asarray(objective(nodes), dtype=float)
    else:
        values = np.array([objective(node) for node in nodes], dtype=float)
    values = np.where(np.isfinite(values), values, np.inf)
    best = int(np.argmin(values))
    if not np.isfinite(values[best]):
        raise FitError("objective is non-finite at every grid node")
    return OptimResult(
        x=nodes[best].copy(), f=float(values[best]), iterations=1,
        converged=True, evaluations=len(nodes),
    )


def nelder_mead(
    objective: Objective,
    start,
    box: Box,
    *,
    xtol: float = 1e-10,
    ftol: float = 1e-14,
    max_iter: int = 2000,
    initial_step: float = 0.05,
) -> OptimResult:
    """Bounded Nelder-Mead simplex search.

    Reflection, expansion, contraction and shrink coefficients are 1, 2, 0.5
    and 0.5. Trial points are projected onto the box. Stops once the simplex
    diameter is below ``xtol`` and the spread of objective values is below
    ``ftol``, or when the spread is exactly zero.
    """
    x0 = box.project(start)
    n = x0.size
    evaluations = 0

    def f(x):
        nonlocal evaluations
        evaluations += 1
        value = float(objective(x))
        return value if math.isfinite(value) else math.inf

    simplex = [x0]
    for i in range(n):
        v = x0.copy()
        step = initial_step * abs(v[i]) if v[i] != 0 else 0.00025
        v[i] = v[i] + step
        if v[i] > box.upper[i]:
            v[i] = x0[i] - step
        simplex.append(box.project(v))
    simplex = np.array(simplex)
    fvals = np.array([f(v) for v in simplex])

    iterations = 0
    converged = False
    while True:
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        spread = fvals[-1] - fvals[0]
        diameter = np.max(np.abs(simplex[1:] - simplex[0]))
        if spread == 0.0 or (diameter <= xtol and spread <= ftol):
            converged = True
            break
        if iterations >= max_iter:
            break
        iterations += 1

        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = box.project(centroid + (centroid - worst))
        fr = f(xr)
        if fr < fvals[0]:
            xe = box.project(centroid + 2.0 * (centroid - worst))
            fe = f(xe)
            if fe < fr:
                simplex[-1], fvals[-1] = xe, fe
            else:
                simplex[-1], fvals[-1] = xr, fr
            continue
        if fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
            continue
        if fr < fvals[-1]:
            xc = box.project(centroid + 0.5 * (xr - centroid))
            fc = f(xc)
            if fc <= fr:
                simplex[-1], fvals[-1] = xc, fc
                continue
        else:
            xc = box.project(centroid + 0.5 * (worst - centroid))
            fc = f(xc)
            if fc < fvals[-1]:
                simplex[-1], fvals[-1] = xc, fc
                continue
        for i in range(1, n + 1):
            simplex[i] = box.project(simplex[0] + 0.5 * (simplex[i] - simplex[0]))
            fvals[i] = f(simplex[i])

    best = int(np.argmin(fvals))
    return OptimResult(
        x=simplex[best].copy(), f=float(fvals[best]), iterations=iterations,
        converged=converged, evaluations=evaluations,
    )


def central_difference_gradient(
    objective: Objective, x, box: Optional[Box] = None, rel_step: float = 1e-6, order: int = 2
) -> np.ndarray:
    """Central differences with step ``rel_step * max(1, |x_i|)``.

    ``order=2`` is the 3-point stencil; inside a box, a stencil that would
    leave it falls back to a one-sided difference so the objective is never
    evaluated outside. ``order=4`` is the unboxed 5-point stencil, whose
    smaller truncation error permits larger steps and so less round-off.
    """
    if order not in (2, 4):
        raise ConfigError("order must be 2 or 4")
    if order == 4 and box is not None:
        raise ConfigError("the 5-point stencil does not support boxes")
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        h = rel_step * max(1.0, abs(x[i]))
        step = np.zeros_like(x)
        step[i] = h
        if order == 4:
            grad[i] = (
                -objective(x + 2 * step) + 8 * objective(x + step)
                - 8 * objective(x - step) + objective(x - 2 * step)
            ) / (12.0 * h)
        elif box is not None and x[i] + h > box.upper[i]:
            grad[i] = (objective(x) - objective(x - step)) / h
        elif box is not None and x[i] - h < box.lower[i]:
            grad[i] = (objective(x + step) - objective(x)) / h
        else:
            grad[i] = (objective(x + step) - objective(x - step)) / (2.0 * h)
    return grad


def projected_gradient_norm(x: np.ndarray, grad: np.ndarray, box: Box) -> float:
    pg = np.clip(x - grad, box.lower, box.upper) - x
    return float(np.max(np.abs(pg))) if pg.size else 0.0


def bounded_quasi_newton(
    objective_and_grad,
    start,
    box: Box,
    *,
    gradient: str = "analytic",
    rel_gtol: float = 1e-9,
    max_iter: int = 500,
    memory: int = 10,
    fd_step: float = 1e-6,
    ftol: float = 0.0,
    scale: Optional[np.ndarray] = None,
) -> OptimResult:
    """Limited-memory quasi-Newton search inside a box (L-BFGS-B).

    ``gradient="analytic"`` expects ``objective_and_grad(x) -> (f, g)``.
    ``gradient="fd"`` accepts a plain objective ``x -> f`` (or one returning
    a tuple, whose gradient is ignored) and uses 3-point central differences.
    Convergence means the projected-gradient infinity norm fell below
    ``rel_gtol * max(1, |f|)``. ``ftol`` is L-BFGS-B's relative-reduction
    test, which is effectively absolute once ``|f| < 1``; the default of 0
    disables it so that small residual objectives are driven to the
    gradient test or to line-search exhaustion.

    ``scale`` is an optional positive diagonal preconditioner: the search
    runs on ``y = x / scale`` and results are mapped back. Finite-difference
    steps are taken in the scaled coordinates.
    """
    if gradient not in ("analytic", "fd"):
        raise ConfigError("gradient must be 'analytic' or 'fd'")
    if scale is not None:
        scale = np.asarray(scale, dtype=float)
        if scale.shape != box.lower.shape or not np.all(scale > 0) or not np.all(np.isfinite(scale)):
            raise ConfigError("scale must be positive and finite, one entry per dimension")

        def scaled(y):
            out = objective_and_grad(y * scale)
            if gradient == "analytic":
                fval, g = out
                return fval, np.asarray(g, dtype=float) * scale
            return out

        res = bounded_quasi_newton(
            scaled, box.project(start) / scale, Box(box.lower / scale, box.upper / scale),
            gradient=gradient, rel_gtol=rel_gtol, max_iter=max_iter, memory=memory,
            fd_step=fd_step, ftol=ftol,
        )
        x = box.project(res.x * scale)
        res.x = x
        if res.gradient_norm is not None and gradient == "analytic":
            res.gradient_norm = projected_gradient_norm(x, objective_and_grad(x)[1], box)
        return res
    x0 = box.project(start)
    evaluations = 0

    def value_only(x):
        nonlocal evaluations
        evaluations += 1
        out = objective_and_grad(x)
        return float(out[0] if isinstance(out, tuple) else out)

    if gradient == "analytic":
        def fun(x):
            nonlocal evaluations
            evaluations += 1
            fval, g = objective_and_grad(x)
            return float(fval), np.asarray(g, dtype=float)
    else:
        def fun(x):
            fval = value_only(x)
            return fval, central_difference_gradient(value_only, x, box, fd_step)

    res = minimize(
        fun, x0, jac=True, method="L-BFGS-B", bounds=box.scipy_bounds(),
        options={
            "maxiter": max_iter, "maxcor": memory, "ftol": ftol, "gtol": 0.0,
            "maxls": 50, "maxfun": 20 * max_iter,
        },
    )
    x = box.project(res.x)
    fval, g = fun(x)
    pg = projected_gradient_norm(x, g, box)
    # L-BFGS-B may also stop on its relative-reduction test, which is
    # reported as success.
    converged = pg < rel_gtol * max(1.0, abs(fval)) or bool(res.success)
    return OptimResult(
        x=x, f=fval, iterations=int(res.nit), converged=bool(converged),
        gradient_norm=pg, evaluations=evaluations, message=str(res.message),
    )


def check_gradient(
    objective_and_grad: ObjectiveAndGrad, x, rel_step=None, order: int = 4
) -> float:
    """Max componentwise ``|g_analytic - g_fd| / max(1, |g_fd|)``.

    ``rel_step`` may be a sequence, in which case the smallest discrepancy
    over the steps is returned: round-off favours large steps where ``|f|``
    is large, truncation favours small ones near a minimum, and a wrong
    analytic gradient disagrees at every step. Defaults to the 5-point
    stencil at steps 1e-4 and 1e-5; use ``order=2`` (step 1e-6) for
    objectives with kinks such as Huber losses.
    """
    x = np.asarray(x, dtype=float)
    if rel_step is None:
        rel_step = (1e-4, 1e-5) if order == 4 else 1e-6
    _, g = objective_and_grad(x)
    g = np.asarray(g, dtype=float)
    value = lambda v: objective_and_grad(v)[0]  # noqa: E731
    worst = math.inf
    for step in np.atleast_1d(rel_step):
        g_fd = central_difference_gradient(value, x, None, float(step), order)
        worst = min(worst, float(np.max(np.abs(g - g_fd) / np.maximum(1.0, np.abs(g_fd)))))
    return worst
