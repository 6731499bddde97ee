"""Quality control for real IsoFLOP data.

Stages, in order: duplicate removal, off-center window, leave-one-out
Akima outliers, curvature significance, and a final minimum-points check.
Every stage only annotates; point values are never modified.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats
from scipy.interpolate import Akima1DInterpolator

from .approach2 import fit_parabola
from .data import IsoflopPoints, as_points
from .errors import ConfigError, DataError

POINT_STATUSES = ("clean", "dup_removed", "near_dup_removed", "off_center", "spline_outlier")
BUDGET_STATUSES = ("kept", "too_few_points", "negative_curvature", "weak_curvature")
MAD_SCALE = 1.4826


@dataclass(frozen=True)
class QcConfig:
    """QC thresholds.

    Attributes:
        near_dup_tol: Bin width in log10 of the swept variable.
        min_points: Minimum points per budget, checked before and after QC.
        off_center_multiplier: Window half-width in units of the vertex's
            distance to the nearer grid edge.
        mad_threshold: Outlier cutoff in scaled MADs.
        curvature_ci: Confidence level for the curvature test.
        axis: Swept variable, ``N`` or ``D``.
        fixpoint: Repeat near-duplicate binning and the off-center and
            spline stages until nothing further is removed, which makes
            :func:`run_qc` idempotent. ``False`` applies each stage once.
    """

    near_dup_tol: float = 0.01
    min_points: int = 6
    off_center_multiplier: float = 2.5
    mad_threshold: float = 5.0
    curvature_ci: float = 0.95
    axis: str = "N"
    fixpoint: bool = True

    def __post_init__(self):
        if not (self.near_dup_tol > 0 and self.off_center_multiplier > 0 and self.mad_threshold > 0):
            raise ConfigError("QC tolerances must be positive")
        if self.min_points < 3:
            raise ConfigError("min_points must be at least 3")
        if not 0 < self.curvature_ci < 1:
            raise ConfigError("curvature_ci must lie in (0, 1)")
        if self.axis not in ("N", "D"):
            raise ConfigError("axis must be 'N' or 'D'")


@dataclass
class QcReport:
    """Annotation trail of one QC run.

    ``point_status`` is aligned with the input points. ``removals`` maps each
    budget to per-stage removal counts.
    """

    point_status: np.ndarray
    budget_status: dict[float, str]
    removals: dict[float, dict[str, int]] = field(default_factory=dict)

    @property
    def n_removed(self) -> int:
        return int(np.sum(self.point_status != "clean"))

    def summary(self) -> dict:
        return {
            "points": {s: int(np.sum(self.point_status == s)) for s in POINT_STATUSES},
            "budgets": dict(Counter(self.budget_status.values())),
            "per_budget": {
                f"{c:.6g}": {"status": self.budget_status[c], **self.removals.get(c, {})}
                for c in sorted(self.budget_status)
            },
        }


def _positions(pts: IsoflopPoints, idx: np.ndarray, axis: str) -> np.ndarray:
    return np.log10(pts.N[idx] if axis == "N" else pts.D[idx])


def _representative(pts: IsoflopPoints, members: np.ndarray, budget: float) -> int:
    """Member whose implied compute is closest to the budget; ties by lower loss."""
    gap = np.abs(6.0 * pts.N[members] * pts.D[members] - budget)
    order = np.lexsort((pts.loss[members], gap))
    return int(members[order[0]])


def _sorted_members(pts: IsoflopPoints, idx: np.ndarray, axis: str) -> np.ndarray:
    # Total order on values keeps every stage independent of input order.
    x = _positions(pts, idx, axis)
    return idx[np.lexsort((pts.loss[idx], pts.D[idx], pts.N[idx], x))]


def pre_qc(pts: IsoflopPoints, config: QcConfig, status: np.ndarray) -> dict[float, np.ndarray]:
    """Exact and near-duplicate removal. Returns surviving indices per budget."""
    out = {}
    swept = pts.N if config.axis == "N" else pts.D
    for grp in pts.groups():
        idx = _sorted_members(pts, grp.index, config.axis)
        # Exact duplicates of the swept value.
        survivors = []
        for value in np.unique(swept[idx]):
            members = idx[swept[idx] == value]
            keep = _representative(pts, members, grp.budget)
            status[members[members != keep]] = "dup_removed"
            survivors.append(keep)
        idx = _sorted_members(pts, np.array(survivors, dtype=int), config.axis)
        while True:
            merged = _near_dup_pass(pts, idx, grp.budget, config, status)
            if merged.size == idx.size or not config.fixpoint:
                break
            idx = merged
        out[grp.budget] = merged
    return out


def _near_dup_pass(pts, idx, budget, config, status) -> np.ndarray:
    """Greedy binning anchored at the first point of each bin."""
    x = _positions(pts, idx, config.axis)
    survivors = []
    start = 0
    while start < idx.size:
        stop = start + 1
        while stop < idx.size and x[stop] - x[start] < config.near_dup_tol:
            stop += 1
        members = idx[start:stop]
        keep = _representative(pts, members, budget)
        status[members[members != keep]] = "near_dup_removed"
        survivors.append(keep)
        start = stop
    return _sorted_members(pts, np.array(survivors, dtype=int), config.axis)


def off_center_window(x: np.ndarray, vertex: float, multiplier: float) -> np.ndarray:
    """Boolean mask of points inside ``vertex +/- multiplier * d``.

    ``d`` is the vertex's distance to the nearer grid edge, clamped at 0 when
    the vertex lies outside the sampled range.
    """
    d = max(min(vertex - x.min(), x.max() - vertex), 0.0)
    return (x >= vertex - multiplier * d) & (x <= vertex + multiplier * d)


def off_center_filter(pts: IsoflopPoints, idx: np.ndarray, config: QcConfig) -> np.ndarray:
    """Mask of points in ``idx`` that fall outside the window (skipped on invalid fits)."""
    if idx.size < 3:
        return np.zeros(idx.size, dtype=bool)
    x = _positions(pts, idx, config.axis)
    try:
        fit = fit_parabola(x, pts.loss[idx], config.axis)
    except DataError:
        return np.zeros(idx.size, dtype=bool)
    if not fit.valid:
        return np.zeros(idx.size, dtype=bool)
    return ~off_center_window(x, fit.vertex, config.off_center_multiplier)


def _akima_with_linear_ends(x: np.ndarray, y: np.ndarray):
    spline = Akima1DInterpolator(x, y)
    slope = spline.derivative()
    lo, hi = x[0], x[-1]
    s_lo, s_hi = float(slope(lo)), float(slope(hi))

    def evaluate(t: float) -> float:
        if t < lo:
            return float(y[0] + s_lo * (t - lo))
        if t > hi:
            return float(y[-1] + s_hi * (t - hi))
        return float(spline(t))

    return evaluate


def loo_spline_residuals(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Leave-one-out Akima residuals; ``x`` must be strictly increasing."""
    res = np.empty(x.size)
    for i in range(x.size):
        keep = np.arange(x.size) != i
        res[i] = y[i] - _akima_with_linear_ends(x[keep], y[keep])(x[i])
    return res


def akima_outliers(pts: IsoflopPoints, idx: np.ndarray, config: QcConfig) -> np.ndarray:
    """Mask of spline outliers among ``idx`` (sorted by position)."""
    if idx.size < 5:
        return np.zeros(idx.size, dtype=bool)
    x = _positions(pts, idx, config.axis)
    if np.any(np.diff(x) <= 0):
        raise DataError("spline stage needs distinct positions; run pre_qc first")
    return robust_outliers(loo_spline_residuals(x, pts.loss[idx]), config.mad_threshold)


def robust_outliers(residuals: np.ndarray, threshold: float) -> np.ndarray:
    """``|r - median(r)| / (1.4826 MAD) > threshold``; nothing flagged when MAD is 0."""
    center = np.median(residuals)
    mad = MAD_SCALE * float(np.median(np.abs(residuals - center)))
    if mad == 0 or not math.isfinite(mad):
        return np.zeros(residuals.size, dtype=bool)
    return np.abs(residuals - center) / mad > threshold


def curvature_status(x: np.ndarray, loss: np.ndarray, ci: float = 0.95) -> str:
    """``kept``, ``negative_curvature`` or ``weak_curvature`` for one budget."""
    fit = fit_parabola(x, loss)
    if not fit.p > 0:
        return "negative_curvature"
    dof = x.size - 3
    if dof <= 0:
        return "weak_curvature"
    half = stats.t.ppf(1.0 - (1.0 - ci) / 2.0, dof) * fit.p_stderr
    return "weak_curvature" if fit.p - half <= 0 else "kept"


def weak_curvature_filter(pts: IsoflopPoints, idx: np.ndarray, config: QcConfig) -> str:
    if idx.size < 3:
        return "weak_curvature"
    return curvature_status(_positions(pts, idx, config.axis), pts.loss[idx], config.curvature_ci)


def run_qc(data, config: Optional[QcConfig] = None) -> tuple[IsoflopPoints, QcReport]:
    """Apply every QC stage once and return the surviving points with the trail."""
    config = config or QcConfig()
    pts = as_points(data)
    status = np.full(len(pts), "clean", dtype=object)
    budget_status: dict[float, str] = {}
    removals: dict[float, dict[str, int]] = {}
    for budget, idx in pre_qc(pts, config, status).items():
        group = pts.budget == budget
        counts = {
            "dup_removed": int(np.sum(status[group] == "dup_removed")),
            "near_dup_removed": int(np.sum(status[group] == "near_dup_removed")),
            "off_center": 0,
            "spline_outlier": 0,
        }
        removals[budget] = counts
        if idx.size < config.min_points:
            budget_status[budget] = "too_few_points"
            continue
        while True:
            off = off_center_filter(pts, idx, config)
            status[idx[off]] = "off_center"
            counts["off_center"] += int(off.sum())
            idx = idx[~off]
            outl = akima_outliers(pts, idx, config)
            status[idx[outl]] = "spline_outlier"
            counts["spline_outlier"] += int(outl.sum())
            idx = idx[~outl]
            if not config.fixpoint or not (off.any() or outl.any()):
                break
        verdict = weak_curvature_filter(pts, idx, config)
        if verdict == "kept" and idx.size < config.min_points:
            verdict = "too_few_points"
        budget_status[budget] = verdict
    keep_budget = np.array([budget_status[c] == "kept" for c in pts.budget], dtype=bool)
    clean = pts.subset((status == "clean") & keep_budget)
    return clean, QcReport(status.astype(str), budget_status, removals)


__all__ = [
    "QcConfig", "QcReport", "POINT_STATUSES", "BUDGET_STATUSES", "pre_qc",
    "off_center_window", "off_center_filter", "loo_spline_residuals", "akima_outliers", "robust_outliers",
    "curvature_status", "weak_curvature_filter", "run_qc",
]
