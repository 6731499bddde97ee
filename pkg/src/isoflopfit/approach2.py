"""Parabolic IsoFLOP pipeline (Chinchilla Approach 2) and its vertex-shift bias.

All regressions here use log10 coordinates.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import FitResult, as_points
from .errors import ConfigError, DataError, DomainError, FitError
from .linsolve import solve_ols
from .model import AllocationLaw, LossSurface, eval_loss, optimal_point

log = logging.getLogger(__name__)

AXES = ("N", "D")


@dataclass(frozen=True)
class ParabolaFit:
    """``loss = p x**2 + q x + r`` with ``x`` the log10 of the swept axis."""

    p: float
    q: float
    r: float
    vertex: float  # NaN when p <= 0
    axis: str
    p_stderr: float
    n_points: int

    @property
    def valid(self) -> bool:
        return self.p > 0 and math.isfinite(self.vertex)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.p * x * x + self.q * x + self.r


@dataclass(frozen=True)
class PowerLawFit:
    slope: float
    intercept: float
    r_squared: float
    budgets: tuple[float, ...]
    values: tuple[float, ...]


@dataclass(frozen=True)
class VertexShift:
    delta_w: float
    intercept_error: float


@dataclass
class Approach2Result:
    law: AllocationLaw
    axis: str
    fits: list[ParabolaFit]
    budgets: np.ndarray
    N_opt: np.ndarray
    D_opt: np.ndarray
    n_law: PowerLawFit
    d_law: PowerLawFit
    dropped_budgets: list[float] = field(default_factory=list)

    def to_fit_result(self) -> FitResult:
        return FitResult(
            method="approach2", law=self.law, variant=f"axis={self.axis}",
            extra={"dropped_budgets": list(self.dropped_budgets)},
        )


def fit_parabola(x, loss, axis: str = "D") -> ParabolaFit:
    """Least-squares parabola in ``x`` (log10 position).

    The regression is solved in mean-centred coordinates for conditioning and
    reported in the original ones. ``p_stderr`` is the usual OLS standard
    error (NaN when there are no residual degrees of freedom).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(loss, dtype=float)
    if x.size < 3:
        raise DataError(f"parabola fit needs at least 3 points, got {x.size}")
    if np.unique(x).size < 3:
        raise DataError("parabola fit needs at least 3 distinct positions")
    shift = float(np.mean(x))
    u = x - shift
    X = np.column_stack([u * u, u, np.ones_like(u)])
    sol = solve_ols(X, y)
    pc, qc, rc = sol.coef
    # Curvature below round-off of the fitted values is treated as exactly zero.
    if abs(pc) * float(np.max(u * u)) <= 1e-12 * max(float(np.max(np.abs(y))), 1e-300):
        pc = 0.0
    p = float(pc)
    q = float(qc - 2.0 * pc * shift)
    r = float(rc - qc * shift + pc * shift * shift)
    vertex = shift - qc / (2.0 * pc) if pc > 0 else math.nan

    dof = x.size - 3
    if dof > 0:
        s2 = sol.rss / dof
        # (X^T X)^-1 via the pseudo-inverse keeps this total for tiny spans.
        cov = s2 * np.linalg.pinv(X.T @ X)
        p_stderr = float(math.sqrt(max(cov[0, 0], 0.0)))
    else:
        p_stderr = math.nan
    return ParabolaFit(p, q, r, float(vertex), axis, p_stderr, int(x.size))


def fit_power_law(budgets, values) -> PowerLawFit:
    """OLS of ``log10(value)`` on ``log10(C)``."""
    C = np.asarray(budgets, dtype=float)
    v = np.asarray(values, dtype=float)
    if C.size < 2:
        raise DataError(f"power-law fit needs at least 2 budgets, got {C.size}")
    if np.any(~(C > 0)) or np.any(~(v > 0)):
        raise DataError("power-law fit needs positive budgets and values")
    x, y = np.log10(C), np.log10(v)
    shift = float(np.mean(x))
    sol = solve_ols(np.column_stack([x - shift, np.ones_like(x)]), y)
    slope = float(sol.coef[0])
    intercept = float(sol.coef[1] - slope * shift)
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - sol.rss / sst if sst > 0 else 1.0
    return PowerLawFit(slope, intercept, r2, tuple(map(float, C)), tuple(map(float, v)))


def run_approach2(experiment, axis: str = "D") -> Approach2Result:
    """Parabola per budget on ``axis``, then power laws through the vertices.

    The complementary optimum follows from ``C = 6 N D``. Budgets whose
    parabola has non-positive curvature (or too few points) are dropped with
    a warning.
    """
    if axis not in AXES:
        raise ConfigError(f"axis must be one of {AXES}")
    pts = as_points(experiment)
    fits, budgets, n_opt, d_opt, dropped = [], [], [], [], []
    for grp in pts.groups():
        swept = grp.D if axis == "D" else grp.N
        try:
            fit = fit_parabola(np.log10(swept), grp.loss, axis)
        except DataError as exc:
            log.warning("budget %.4g dropped: %s", grp.budget, exc)
            dropped.append(grp.budget)
            continue
        if not fit.valid:
            log.warning("budget %.4g dropped: non-positive curvature", grp.budget)
            dropped.append(grp.budget)
            continue
        if abs(fit.vertex) > 300:
            log.warning("budget %.4g dropped: vertex 10^%.3g out of range", grp.budget, fit.vertex)
            dropped.append(grp.budget)
            continue
        opt = 10.0 ** fit.vertex
        C = grp.budget
        if axis == "D":
            d_star, n_star = opt, C / (6.0 * opt)
        else:
            n_star, d_star = opt, C / (6.0 * opt)
        fits.append(fit)
        budgets.append(C)
        n_opt.append(n_star)
        d_opt.append(d_star)
    if len(budgets) < 2:
        raise FitError(f"Approach 2 needs >= 2 usable budgets, got {len(budgets)}")
    n_law = fit_power_law(budgets, n_opt)
    d_law = fit_power_law(budgets, d_opt)
    law = AllocationLaw(a=n_law.slope, b=d_law.slope, a0=n_law.intercept, b0=d_law.intercept)
    return Approach2Result(
        law=law, axis=axis, fits=fits, budgets=np.array(budgets),
        N_opt=np.array(n_opt), D_opt=np.array(d_opt), n_law=n_law, d_law=d_law,
        dropped_budgets=dropped,
    )


def fit_approach2(data, axis: str = "D") -> FitResult:
    return run_approach2(data, axis).to_fit_result()


def vertex_shift_oracle(
    alpha: float,
    beta: float,
    W: float,
    n: int,
    *,
    axis: str = "N",
    budget: float = 1e20,
    E: float = 0.0,
    A: float = 1.0,
    B: float = 1.0,
) -> VertexShift:
    """Vertex displacement of a parabola fit to a noise-free IsoFLOP curve.

    Samples ``n`` points uniformly in ``w = log10(X / X*)`` over
    ``[-W/2, W/2]`` (``X`` is N or D per ``axis``), evaluates the surface
    along the compute constraint, fits a parabola in ``w`` and returns its
    vertex. The result depends only on ``(alpha, beta, W, n)``; ``budget``
    and the coefficients are exposed so that independence can be checked.
    """
    if not W > 0:
        raise DomainError("W must be positive")
    if n < 3:
        raise DomainError("n must be >= 3")
    if axis not in AXES:
        raise ConfigError(f"axis must be one of {AXES}")
    surface = LossSurface(E=E, A=A, B=B, alpha=alpha, beta=beta)
    opt, _ = optimal_point(surface, budget)
    w = np.linspace(-W / 2.0, W / 2.0, n)
    if axis == "N":
        N = opt.N * 10.0 ** w
        D = budget / (6.0 * N)
    else:
        D = opt.D * 10.0 ** w
        N = budget / (6.0 * D)
    fit = fit_parabola(w, eval_loss(surface, N, D), axis)
    dw = fit.vertex
    return VertexShift(delta_w=float(dw), intercept_error=float(10.0 ** dw - 1.0))


def intercept_relative_error(inferred: float, true: float) -> float:
    """Signed log-intercept error relative to ``|true|``."""
    return (inferred - true) / abs(true)


def grid_positions(center_log10: float, half_factor: float, n_points: int) -> np.ndarray:
    """``n_points`` log10 positions spanning ``center / k`` to ``center * k``."""
    half = math.log10(half_factor)
    return np.linspace(center_log10 - half, center_log10 + half, n_points)


__all__: Sequence[str] = [
    "ParabolaFit", "PowerLawFit", "VertexShift", "Approach2Result",
    "fit_parabola", "fit_power_law", "run_approach2", "fit_approach2",
    "vertex_shift_oracle", "intercept_relative_error", "grid_positions",
]
