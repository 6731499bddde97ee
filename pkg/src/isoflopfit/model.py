"""Chinchilla loss surface and its compute-optimal allocation.

The surface is ``L(N, D) = E + A / N**alpha + B / D**beta`` with compute
``C = 6 N D`` treated as exact. Allocation laws are power laws in log10 space:
``log10 N* = a log10 C + a0`` and ``log10 D* = b log10 C + b0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import AllocationUndefinedError, DomainError, UnreachableLossError

ArrayLike = Union[float, np.ndarray]

LOG10_6 = math.log10(6.0)

# Bisection bracket for invert_optimal_loss, in FLOPs.
DEFAULT_BRACKET = (1e10, 1e35)


@dataclass(frozen=True)
class LossSurface:
    """Five-parameter Chinchilla surface.

    Attributes:
        E: Irreducible loss (nats).
        A: Parameter-term coefficient.
        B: Data-term coefficient.
        alpha: Parameter exponent.
        beta: Data exponent.
    """

    E: float
    A: float
    B: float
    alpha: float
    beta: float

    def __post_init__(self):
        for name in ("E", "A", "B", "alpha", "beta"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise DomainError(f"{name}={value} is not finite")
        if self.E < 0 or self.A < 0 or self.B < 0:
            raise DomainError("E, A and B must be non-negative")
        if self.alpha <= 0 or self.beta <= 0:
            raise DomainError("alpha and beta must be positive")

    def loss(self, N: ArrayLike, D: ArrayLike) -> ArrayLike:
        return eval_loss(self, N, D)

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.E, self.A, self.B, self.alpha, self.beta)

    def scaled(self, coefficient_factor: float) -> "LossSurface":
        """Same exponents with A and B multiplied by ``coefficient_factor``."""
        return LossSurface(
            self.E, self.A * coefficient_factor, self.B * coefficient_factor,
            self.alpha, self.beta,
        )


@dataclass(frozen=True)
class AllocationLaw:
    """Power laws ``N* = 10**a0 * C**a`` and ``D* = 10**b0 * C**b``."""

    a: float
    b: float
    a0: float
    b0: float

    def N_opt(self, C: ArrayLike) -> ArrayLike:
        return 10.0 ** (self.a0 + self.a * np.log10(C))

    def D_opt(self, C: ArrayLike) -> ArrayLike:
        return 10.0 ** (self.b0 + self.b * np.log10(C))


@dataclass(frozen=True)
class Allocation:
    C: float
    N: float
    D: float


SURFACES: dict[str, LossSurface] = {
    "symmetric": LossSurface(E=1.69, A=400.0, B=400.0, alpha=0.31, beta=0.31),
    "chinchilla": LossSurface(E=1.69, A=406.4, B=410.7, alpha=0.34, beta=0.28),
    "asymmetric": LossSurface(E=1.69, A=406.4, B=410.7, alpha=0.465, beta=0.155),
}


def get_surface(name: str) -> LossSurface:
    try:
        return SURFACES[name]
    except KeyError:
        raise DomainError(
            f"unknown surface {name!r}; choose from {sorted(SURFACES)}"
        ) from None


def eval_loss(surface: LossSurface, N: ArrayLike, D: ArrayLike) -> ArrayLike:
    """Evaluate the surface at parameter count ``N`` and token count ``D``."""
    N_arr = np.asarray(N, dtype=float)
    D_arr = np.asarray(D, dtype=float)
    if np.any(~(N_arr > 0)) or np.any(~(D_arr > 0)):
        raise DomainError("N and D must be positive")
    out = surface.E + surface.A * N_arr ** (-surface.alpha) + surface.B * D_arr ** (-surface.beta)
    if np.ndim(out) == 0:
        return float(out)
    return out


def _log10_G(surface: LossSurface) -> float:
    if surface.A <= 0 or surface.B <= 0:
        raise AllocationUndefinedError("allocation undefined: A and B must be positive")
    s = surface.alpha + surface.beta
    return (
        math.log10(surface.alpha) + math.log10(surface.A)
        - math.log10(surface.beta) - math.log10(surface.B)
    ) / s


def allocation_law(surface: LossSurface) -> AllocationLaw:
    """Closed-form compute-optimal allocation law of ``surface``."""
    log_g = _log10_G(surface)
    s = surface.alpha + surface.beta
    a = surface.beta / s
    b = surface.alpha / s
    return AllocationLaw(a=a, b=b, a0=log_g - a * LOG10_6, b0=-log_g - b * LOG10_6)


def optimal_point(surface: LossSurface, C: float) -> tuple[Allocation, float]:
    """Compute-optimal ``(N*, D*)`` at budget ``C`` and the loss there."""
    if not C > 0:
        raise DomainError(f"compute budget must be positive, got {C}")
    log_g = _log10_G(surface)
    s = surface.alpha + surface.beta
    log_c6 = math.log10(C) - LOG10_6
    log_n = log_g + (surface.beta / s) * log_c6
    N = 10.0 ** log_n
    # D from the constraint keeps 6 N D = C to rounding.
    D = C / (6.0 * N)
    return Allocation(C=C, N=N, D=D), eval_loss(surface, N, D)


def optimal_loss(surface: LossSurface, C: float) -> float:
    return optimal_point(surface, C)[1]


def invert_optimal_loss(
    surface: LossSurface,
    target_loss: float,
    bracket: tuple[float, float] = DEFAULT_BRACKET,
    max_expansions: int = 40,
) -> float:
    """Smallest budget whose optimal loss equals ``target_loss``.

    Bisects on log10 C; the optimal loss is strictly decreasing in C. The
    bracket is widened by factors of 10**5 when it does not contain the root.
    """
    if not target_loss > surface.E:
        raise UnreachableLossError(
            f"unreachable loss: target {target_loss} <= irreducible loss {surface.E}"
        )
    lo, hi = math.log10(bracket[0]), math.log10(bracket[1])
    for _ in range(max_expansions):
        if optimal_loss(surface, 10.0 ** lo) < target_loss:
            lo -= 5.0
        elif optimal_loss(surface, 10.0 ** hi) > target_loss:
            hi += 5.0
        else:
            break
    else:
        raise UnreachableLossError(
            f"could not bracket target loss {target_loss} in [1e{lo:g}, 1e{hi:g}]"
        )
    if not (optimal_loss(surface, 10.0 ** lo) >= target_loss >= optimal_loss(surface, 10.0 ** hi)):
        raise UnreachableLossError(f"could not bracket target loss {target_loss}")
    # Bisect to floating-point resolution of log10 C.
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if optimal_loss(surface, 10.0 ** mid) > target_loss:
            lo = mid
        else:
            hi = mid
    c_lo, c_hi = 10.0 ** lo, 10.0 ** hi
    if abs(optimal_loss(surface, c_lo) - target_loss) <= abs(optimal_loss(surface, c_hi) - target_loss):
        return c_lo
    return c_hi
