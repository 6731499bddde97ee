"""Containers for IsoFLOP observations and fit results."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterator, Optional

import numpy as np

from .errors import AllocationUndefinedError, DataError
from .model import AllocationLaw, LossSurface, allocation_law


@dataclass(frozen=True)
class BudgetGroup:
    budget: float
    N: np.ndarray
    D: np.ndarray
    loss: np.ndarray
    index: np.ndarray  # positions in the parent IsoflopPoints


@dataclass(frozen=True)
class IsoflopPoints:
    """Flat table of observations ``(budget, N, D, loss)``.

    ``budget`` is the nominal compute budget used for grouping; it need not
    equal ``6 N D`` exactly for real data.
    """

    budget: np.ndarray
    N: np.ndarray
    D: np.ndarray
    loss: np.ndarray

    def __post_init__(self):
        arrays = [np.asarray(getattr(self, k), dtype=float) for k in ("budget", "N", "D", "loss")]
        n = arrays[0].shape
        if any(a.ndim != 1 or a.shape != n for a in arrays):
            raise DataError("budget, N, D and loss must be 1-D arrays of equal length")
        for name, arr in zip(("budget", "N", "D", "loss"), arrays):
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.loss.size

    @property
    def budgets(self) -> np.ndarray:
        """Distinct budgets in ascending order."""
        return np.unique(self.budget)

    def groups(self) -> Iterator[BudgetGroup]:
        for C in self.budgets:
            idx = np.flatnonzero(self.budget == C)
            yield BudgetGroup(float(C), self.N[idx], self.D[idx], self.loss[idx], idx)

    def subset(self, mask_or_index) -> "IsoflopPoints":
        sel = np.asarray(mask_or_index)
        return IsoflopPoints(self.budget[sel], self.N[sel], self.D[sel], self.loss[sel])

    def with_loss(self, loss: np.ndarray) -> "IsoflopPoints":
        return IsoflopPoints(self.budget, self.N, self.D, np.asarray(loss, dtype=float))

    def normalized(self, n_scale: float = 1e6, d_scale: float = 1e9) -> "IsoflopPoints":
        return IsoflopPoints(self.budget, self.N / n_scale, self.D / d_scale, self.loss)

    @classmethod
    def concat(cls, parts: list["IsoflopPoints"]) -> "IsoflopPoints":
        return cls(
            np.concatenate([p.budget for p in parts]),
            np.concatenate([p.N for p in parts]),
            np.concatenate([p.D for p in parts]),
            np.concatenate([p.loss for p in parts]),
        )


def as_points(data) -> IsoflopPoints:
    """Accept IsoflopPoints, anything with a ``points`` attribute, or an (N, D, L) triple."""
    if isinstance(data, IsoflopPoints):
        return data
    points = getattr(data, "points", None)
    if isinstance(points, IsoflopPoints):
        return points
    if isinstance(data, tuple) and len(data) == 3:
        N, D, L = (np.asarray(v, dtype=float) for v in data)
        return IsoflopPoints(6.0 * N * D, N, D, L)
    raise DataError(f"cannot interpret {type(data).__name__} as IsoFLOP points")


def as_arrays(data) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(N, D, L)`` float arrays, validated for fitting."""
    if isinstance(data, tuple) and len(data) == 3:
        N, D, L = (np.asarray(v, dtype=float) for v in data)
    else:
        pts = as_points(data)
        N, D, L = pts.N, pts.D, pts.loss
    if not (N.shape == D.shape == L.shape) or N.ndim != 1:
        raise DataError("N, D and L must be 1-D arrays of equal length")
    if not (np.all(np.isfinite(N)) and np.all(np.isfinite(D)) and np.all(np.isfinite(L))):
        raise DataError("N, D and L must be finite")
    if np.any(N <= 0) or np.any(D <= 0):
        raise DataError("N and D must be positive")
    return N, D, L


def law_from_surface(surface: LossSurface) -> AllocationLaw:
    """Allocation law of a fitted surface; intercepts are NaN if A or B is zero."""
    try:
        return allocation_law(surface)
    except AllocationUndefinedError:
        s = surface.alpha + surface.beta
        return AllocationLaw(surface.beta / s, surface.alpha / s, float("nan"), float("nan"))


def denormalize(surface: LossSurface, n_scale: float, d_scale: float) -> LossSurface:
    """Map a surface fitted on ``N / n_scale, D / d_scale`` back to raw units."""
    return LossSurface(
        surface.E,
        surface.A * n_scale ** surface.alpha,
        surface.B * d_scale ** surface.beta,
        surface.alpha,
        surface.beta,
    )


@dataclass
class FitResult:
    """Outcome of a surface or allocation-law fit.

    ``surface`` is None for Approach 2, which estimates only the allocation
    law. ``law`` always carries the exponents; intercepts are NaN when the
    method does not determine them.
    """

    method: str
    law: AllocationLaw
    surface: Optional[LossSurface] = None
    rss: Optional[float] = None
    iterations: int = 0
    converged: bool = True
    variant: str = ""
    message: str = ""
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def a(self) -> float:
        return self.law.a

    @property
    def b(self) -> float:
        return self.law.b

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "kind": "fit",
            "method": self.method,
            "variant": self.variant,
            "a": self.law.a,
            "b": self.law.b,
            "a0": self.law.a0,
            "b0": self.law.b0,
            "rss": self.rss,
            "iterations": self.iterations,
            "converged": self.converged,
            "message": self.message,
        }
        if self.surface is not None:
            out.update(
                E=self.surface.E, A=self.surface.A, B=self.surface.B,
                alpha=self.surface.alpha, beta=self.surface.beta,
            )
        return out
