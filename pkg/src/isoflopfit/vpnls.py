"""Variable projection with non-negative least squares (VPNLS).

The surface is linear in ``(E, A, B)`` for fixed exponents, so the search
runs over ``(alpha, beta)`` only and the coefficients are solved exactly at
every candidate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import FitResult, as_arrays, denormalize, law_from_surface
from .direct import D_SCALE, N_SCALE
from .errors import ConfigError, DataError, FitError, NnlsConvergenceError
from .linsolve import solve_nnls, solve_nnls_batch, solve_ols
from .model import LossSurface
from .optim import Box, OptimResult, bounded_quasi_newton, grid_axes, grid_search, nelder_mead

VARIANTS = ("nnls_nelder_mead", "ols_quasi_newton", "grid_only")

DEFAULT_BOX = Box([1e-4, 1e-4], [1.5, 1.5])

# Grid nodes are solved in chunks to bound memory on fine grids.
_CHUNK = 4096


@dataclass(frozen=True)
class VpnlsConfig:
    """Settings for :func:`fit_vpnls`.

    Attributes:
        variant: ``nnls_nelder_mead``, ``ols_quasi_newton`` or ``grid_only``.
        coarse_grid: Points per exponent for the seeding grid.
        fine_grid: Points per exponent for ``grid_only``.
        box: Bounds on ``(alpha, beta)``.
        normalize: Fit on ``N / 1e6`` and ``D / 1e9``.
        xtol: Simplex-diameter tolerance for Nelder-Mead.
        ftol: Objective-spread tolerance for Nelder-Mead.
        max_iter: Iteration cap for the local search.
    """

    variant: str = "nnls_nelder_mead"
    coarse_grid: int = 32
    fine_grid: int = 256
    box: Box = field(default=DEFAULT_BOX)
    normalize: bool = False
    xtol: float = 1e-10
    ftol: float = 1e-14
    max_iter: int = 2000

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.coarse_grid < 2 or self.fine_grid < 2:
            raise ConfigError("grid sizes must be >= 2")
        if self.box.dim != 2:
            raise ConfigError("VPNLS box must bound (alpha, beta)")
        if not np.all(self.box.lower > 0):
            raise ConfigError("exponent box must be strictly positive")


class _Prepared:
    def __init__(self, data):
        N, D, L = as_arrays(data)
        self.L = L
        self.lnN = np.log(N)
        self.lnD = np.log(D)


def _prepare(data) -> _Prepared:
    return data if isinstance(data, _Prepared) else _Prepared(data)


def design_matrix(alpha: float, beta: float, data) -> np.ndarray:
    """Columns ``[1, N**-alpha, D**-beta]``."""
    d = _prepare(data)
    return np.column_stack([
        np.ones_like(d.L), np.exp(-alpha * d.lnN), np.exp(-beta * d.lnD),
    ])


def _check_exponents(alpha: float, beta: float) -> None:
    if not (alpha > 0 and beta > 0):
        raise ConfigError(f"exponents must be positive, got ({alpha}, {beta})")


def solve_coefficients(alpha: float, beta: float, data) -> tuple[np.ndarray, float]:
    """Non-negative ``(E, A, B)`` at fixed exponents and the resulting RSS."""
    _check_exponents(alpha, beta)
    d = _prepare(data)
    try:
        sol = solve_nnls(design_matrix(alpha, beta, d), d.L)
    except NnlsConvergenceError as exc:
        sol = exc.best
    return sol.coef, sol.rss


def vp_objective_nnls(alpha: float, beta: float, data) -> float:
    """RSS after eliminating ``(E, A, B) >= 0`` by NNLS."""
    return solve_coefficients(alpha, beta, data)[1]


def vp_objective_ols_grad(alpha: float, beta: float, data) -> tuple[float, float, float]:
    """RSS after eliminating ``(E, A, B)`` by OLS, with exponent gradients.

    The inner coefficients are optimal for each ``(alpha, beta)``, so their
    own derivatives drop out of the total derivative and only the explicit
    dependence through the design matrix remains.
    """
    _check_exponents(alpha, beta)
    d = _prepare(data)
    tN = np.exp(-alpha * d.lnN)
    tD = np.exp(-beta * d.lnD)
    X = np.column_stack([np.ones_like(d.L), tN, tD])
    coef = solve_ols(X, d.L).coef
    r = d.L - X @ coef
    A, B = coef[1], coef[2]
    g_alpha = 2.0 * A * (r @ (d.lnN * tN))
    g_beta = 2.0 * B * (r @ (d.lnD * tD))
    return float(r @ r), float(g_alpha), float(g_beta)


def vp_objective_ols(alpha: float, beta: float, data) -> float:
    return vp_objective_ols_grad(alpha, beta, data)[0]


def grid_objective_nnls(nodes: np.ndarray, data) -> np.ndarray:
    """NNLS-projected RSS at each ``(alpha, beta)`` row of ``nodes``.

    Nodes are solved in batches by enumerating column subsets, which is
    exact for the three-column design and avoids a Python-level active-set
    loop per node.
    """
    d = _prepare(data)
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    out = np.empty(len(nodes))
    ones = np.ones_like(d.L)
    for start in range(0, len(nodes), _CHUNK):
        block = nodes[start:start + _CHUNK]
        tN = np.exp(-np.outer(block[:, 0], d.lnN))
        tD = np.exp(-np.outer(block[:, 1], d.lnD))
        X = np.stack([np.broadcast_to(ones, tN.shape), tN, tD], axis=2)
        out[start:start + len(block)] = solve_nnls_batch(X, d.L)[1]
    return out


def _check_identifiable(data) -> None:
    N, D, _ = as_arrays(data)
    if N.size < 4:
        raise DataError(f"VPNLS needs at least 4 points, got {N.size}")
    if np.unique(N).size < 2 or np.unique(D).size < 2:
        raise FitError("exponent unidentifiable: data need at least 2 distinct N and 2 distinct D")


def fit_vpnls(data, config: Optional[VpnlsConfig] = None) -> FitResult:
    """Fit the surface by a 2-D exponent search with exact inner coefficients.

    A coarse grid seeds the local search (Nelder-Mead on the NNLS objective
    or bounded quasi-Newton on the OLS objective); ``grid_only`` returns the
    best fine-grid node instead. The reported coefficients are always the
    NNLS solution at the final exponents, and the result never has a larger
    RSS than the grid seed.
    """
    config = config or VpnlsConfig()
    _check_identifiable(data)
    N, D, L = as_arrays(data)
    if config.normalize:
        N, D = N / N_SCALE, D / D_SCALE
    d = _Prepared((N, D, L))
    box = config.box
    batched = lambda nodes: grid_objective_nnls(nodes, d)  # noqa: E731

    if config.variant == "grid_only":
        seed = grid_search(batched, box, config.fine_grid, batched=True)
        local = OptimResult(seed.x, seed.f, 0, True, evaluations=seed.evaluations)
    else:
        seed = grid_search(batched, box, config.coarse_grid, batched=True)
        if config.variant == "nnls_nelder_mead":
            local = nelder_mead(
                lambda x: vp_objective_nnls(x[0], x[1], d), seed.x, box,
                xtol=config.xtol, ftol=config.ftol, max_iter=config.max_iter,
            )
        else:
            def fun(x):
                f, ga, gb = vp_objective_ols_grad(x[0], x[1], d)
                return f, np.array([ga, gb])

            local = bounded_quasi_newton(fun, seed.x, box, max_iter=config.max_iter)

    coef, rss = solve_coefficients(local.x[0], local.x[1], d)
    x = local.x
    if rss > seed.f:
        coef, rss = solve_coefficients(seed.x[0], seed.x[1], d)
        x = seed.x
    fitted = LossSurface(
        float(coef[0]), float(coef[1]), float(coef[2]), float(x[0]), float(x[1])
    )
    surface = denormalize(fitted, N_SCALE, D_SCALE) if config.normalize else fitted
    step = (box.upper - box.lower) / (config.fine_grid - 1)
    extra = {
        "seed": seed.x.tolist(),
        "seed_rss": seed.f,
        "evaluations": seed.evaluations + local.evaluations,
    }
    if config.variant == "grid_only":
        extra["half_cell"] = (0.5 * step).tolist()
    if config.normalize:
        extra["normalized_surface"] = fitted.as_tuple()
    return FitResult(
        method="vpnls", law=law_from_surface(surface), surface=surface,
        rss=float(rss), iterations=local.iterations, converged=local.converged,
        variant=config.variant, message=local.message, extra=extra,
    )


def grid_resolution(config: VpnlsConfig) -> np.ndarray:
    """Half the fine-grid spacing per exponent (the grid_only error bound)."""
    axes = grid_axes(config.box, config.fine_grid)
    return np.array([0.5 * (ax[1] - ax[0]) for ax in axes])


__all__ = [
    "VpnlsConfig", "VARIANTS", "design_matrix", "solve_coefficients",
    "vp_objective_nnls", "vp_objective_ols", "vp_objective_ols_grad",
    "grid_objective_nnls", "fit_vpnls", "grid_resolution",
]
