"""Misallocation cost, error summaries, bootstrap intervals and diagnostics."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from .data import IsoflopPoints, as_points
from .errors import DomainError, FitError, IsoflopError
from .model import AllocationLaw, LossSurface, eval_loss, invert_optimal_loss, optimal_point

GEOMEAN_FLOOR = 1e-15


@dataclass(frozen=True)
class CostModel:
    """Converts FLOPs to dollars.

    Attributes:
        mfu: Achieved fraction of peak throughput.
        price_per_gpu_hour: USD per accelerator-hour.
        peak_flops_per_gpu: Peak FLOP/s per accelerator.
    """

    mfu: float = 0.5
    price_per_gpu_hour: float = 2.0
    peak_flops_per_gpu: float = 1.979e15

    def __post_init__(self):
        if not 0 < self.mfu <= 1:
            raise DomainError("mfu must lie in (0, 1]")
        if not (self.price_per_gpu_hour >= 0 and self.peak_flops_per_gpu > 0):
            raise DomainError("price must be non-negative and peak throughput positive")

    def dollars(self, flops: float) -> float:
        return flops / (self.mfu * self.peak_flops_per_gpu) / 3600.0 * self.price_per_gpu_hour


@dataclass(frozen=True)
class DclReport:
    C: float
    N_inferred: float
    D_inferred: float
    N_opt: float
    D_opt: float
    loss_penalty: float
    C_eq: float
    dcl: float
    dcl_pct: float
    dollars: float
    ci90: Optional[tuple[float, float]] = None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["kind"] = "dcl"
        out["ci90"] = list(self.ci90) if self.ci90 is not None else None
        return out


def dcl(
    reference: LossSurface,
    inferred: AllocationLaw,
    C: float,
    cost: Optional[CostModel] = None,
) -> DclReport:
    """Deadweight compute loss of training at ``inferred``'s allocation.

    The token count comes from the inferred D* law and the model size from
    the compute constraint. ``C_eq`` is the smallest budget reaching the same
    loss when allocated optimally on ``reference``; the waste is ``C - C_eq``.
    """
    cost = cost or CostModel()
    if not C > 0:
        raise DomainError("evaluation budget must be positive")
    D_inf = float(inferred.D_opt(C))
    if not (math.isfinite(D_inf) and D_inf > 0):
        raise DomainError("inferred allocation is not a positive finite token count")
    N_inf = C / (6.0 * D_inf)
    opt, loss_opt = optimal_point(reference, C)
    loss_inf = eval_loss(reference, N_inf, D_inf)
    penalty = loss_inf - loss_opt
    if penalty < -1e-12 * max(abs(loss_opt), 1.0):
        raise DomainError(
            f"inconsistent reference: inferred loss {loss_inf} below optimum {loss_opt}"
        )
    if penalty <= 0:
        c_eq, waste = C, 0.0
    else:
        c_eq = invert_optimal_loss(reference, loss_inf)
        waste = min(max(C - c_eq, 0.0), C)
    return DclReport(
        C=C, N_inferred=N_inf, D_inferred=D_inf, N_opt=opt.N, D_opt=opt.D,
        loss_penalty=max(penalty, 0.0), C_eq=c_eq, dcl=waste, dcl_pct=waste / C,
        dollars=cost.dollars(waste),
    )


def extrapolation_error(true_surface: LossSurface, inferred: AllocationLaw, C_target: float) -> float:
    """Signed relative error of the inferred D* at ``C_target``."""
    opt, _ = optimal_point(true_surface, C_target)
    return (float(inferred.D_opt(C_target)) - opt.D) / opt.D


@dataclass(frozen=True)
class ErrorStats:
    geomean_abs: float
    max_abs: float
    min_abs: float
    variance: float
    n: int


def error_stats(values: Sequence[float]) -> ErrorStats:
    """Summary of signed relative errors; NaNs are ignored."""
    v = np.asarray(values, dtype=float)
    v = v[~np.isnan(v)]
    if v.size == 0:
        raise DomainError("error_stats needs at least one value")
    a = np.abs(v)
    geo = float(np.exp(np.mean(np.log(np.maximum(a, GEOMEAN_FLOOR)))))
    return ErrorStats(geo, float(a.max()), float(a.min()), float(np.var(v)), int(v.size))


def stratified_resample(points: IsoflopPoints, rng: np.random.Generator) -> IsoflopPoints:
    """Resample points with replacement within each budget."""
    picks = [rng.choice(g.index, size=g.index.size, replace=True) for g in points.groups()]
    return points.subset(np.concatenate(picks))


def bootstrap_ci(
    data,
    fit: Callable[[IsoflopPoints], object],
    statistic: Callable[[object], float],
    level: float = 0.90,
    n_boot: int = 1000,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap interval from budget-stratified resamples.

    Replicate ``i`` draws from a Philox stream keyed on ``(seed, i)``.
    Replicates whose fit or statistic fails are dropped; more than half
    failing raises FitError.
    """
    if not 0 < level < 1:
        raise DomainError("level must lie in (0, 1)")
    pts = as_points(data)
    if any(g.index.size < 2 for g in pts.groups()):
        raise DomainError("bootstrap needs at least 2 points per budget")
    values = []
    for i in range(n_boot):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, i])))
        try:
            with np.errstate(all="ignore"):
                value = float(statistic(fit(stratified_resample(pts, rng))))
        except (IsoflopError, ValueError, ArithmeticError, np.linalg.LinAlgError):
            continue
        if math.isfinite(value):
            values.append(value)
    if len(values) * 2 < n_boot:
        raise FitError(f"bootstrap failed in {n_boot - len(values)} of {n_boot} replicates")
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(values, [tail, 1.0 - tail])
    return float(lo), float(hi)


@dataclass(frozen=True)
class ResidualTests:
    kruskal_wallis_p: float
    levene_p: float
    kruskal_wallis_h: float
    levene_w: float


def residual_tests(groups: Sequence[Sequence[float]]) -> ResidualTests:
    """Location (Kruskal-Wallis) and spread (median-centered Levene) tests across budgets."""
    arrays = [np.asarray(g, dtype=float) for g in groups]
    if len(arrays) < 2 or any(a.size < 2 for a in arrays):
        raise DomainError("residual tests need at least 2 groups of at least 2 values")
    pooled = np.concatenate(arrays)
    if np.all(pooled == pooled[0]):
        return ResidualTests(1.0, 1.0, 0.0, 0.0)
    kw = stats.kruskal(*arrays)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        lev = stats.levene(*arrays, center="median")
    # Zero within-group spread of deviations gives 0/0; no evidence either way.
    lev_p = float(lev.pvalue) if math.isfinite(lev.pvalue) else 1.0
    lev_w = float(lev.statistic) if math.isfinite(lev.statistic) else 0.0
    return ResidualTests(float(kw.pvalue), lev_p, float(kw.statistic), lev_w)


@dataclass(frozen=True)
class HessianCondition:
    eigenvalues: np.ndarray
    kappa: float
    hessian: np.ndarray


def numeric_hessian(objective: Callable[[np.ndarray], float], x, steps) -> np.ndarray:
    """Central-difference Hessian with per-coordinate ``steps``, symmetrized."""
    x = np.asarray(x, dtype=float)
    h = np.asarray(steps, dtype=float)
    n = x.size
    H = np.empty((n, n))
    f0 = float(objective(x))
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h[i]
        H[i, i] = (objective(x + ei) - 2.0 * f0 + objective(x - ei)) / (h[i] * h[i])
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = h[j]
            H[i, j] = (
                objective(x + ei + ej) - objective(x + ei - ej)
                - objective(x - ei + ej) + objective(x - ei - ej)
            ) / (4.0 * h[i] * h[j])
            H[j, i] = H[i, j]
    return 0.5 * (H + H.T)


def hessian_condition(objective: Callable[[np.ndarray], float], x, scale=None) -> HessianCondition:
    """Eigenvalues and condition number of the numeric Hessian at ``x``.

    Steps are ``1e-4 * scale`` per coordinate; ``scale`` defaults to
    ``max(|x_i|, 1)``.
    """
    x = np.asarray(x, dtype=float)
    if scale is None:
        scale = np.maximum(np.abs(x), 1.0)
    H = numeric_hessian(objective, x, 1e-4 * np.asarray(scale, dtype=float))
    if not np.all(np.isfinite(H)):
        raise FitError("non-finite Hessian entries")
    eig = np.linalg.eigvalsh(H)
    lo, hi = float(eig[0]), float(eig[-1])
    kappa = hi / lo if lo > 0 else math.inf
    return HessianCondition(eig, kappa, H)


__all__ = [
    "CostModel", "DclReport", "dcl", "extrapolation_error", "ErrorStats", "error_stats",
    "stratified_resample", "bootstrap_ci", "ResidualTests", "residual_tests",
    "HessianCondition", "numeric_hessian", "hessian_condition",
]
