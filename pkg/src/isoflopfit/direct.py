"""Direct five-parameter surface fits (Approach 3).

Three variants are provided:

* ``naive``: raw parameters, one random start, RSS objective.
* ``mle``: raw parameters, best node of a 4^5 grid seeds the local search.
* ``lse_log``: parameters ``(e, a, b) = log(E, A, B)``, predictions composed
  with logsumexp, objective on log-loss residuals (MSE or Huber).

``lse_linear`` uses the same reparameterization with linear-loss residuals,
which is the raw RSS objective in different coordinates.

Logs in this module are natural logs; Approach 2 uses log10 throughout.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import FitResult, as_arrays, denormalize, law_from_surface
from .errors import ConfigError, DataError, FitError
from .model import LossSurface
from .optim import Box, bounded_quasi_newton

VARIANTS = ("naive", "mle", "lse_log", "lse_linear")
OBJECTIVES = ("mse", "huber")

GRID_E = (0.5, 1.0, 2.0, 4.0)
GRID_AB = (1.0, 10.0, 100.0, 1000.0)
GRID_EXP = (0.1, 0.3, 0.5, 0.7)

N_SCALE = 1e6
D_SCALE = 1e9

# (E, A, B, alpha, beta)
DEFAULT_BOX = Box([0.0, 0.0, 0.0, 1e-4, 1e-4], [10.0, 1e6, 1e6, 1.5, 1.5])
# (e, a, b, alpha, beta)
DEFAULT_LSE_BOX = Box([-20.0, -20.0, -20.0, 1e-4, 1e-4], [20.0, 20.0, 20.0, 1.5, 1.5])


@dataclass(frozen=True)
class DirectFitConfig:
    """Settings for :func:`fit_direct`.

    Attributes:
        variant: ``naive``, ``mle``, ``lse_log`` or ``lse_linear``.
        objective: ``mse`` or ``huber``; Huber applies to ``lse_log`` only.
        huber_delta: Huber threshold on log residuals.
        init: ``random`` or ``grid``. Defaults to random for ``naive`` and
            grid otherwise.
        seed: Seed for the random start.
        box: Optimizer bounds in the variant's own coordinates.
        gradient: ``analytic`` or ``fd``.
        normalize: Fit on ``N / 1e6`` and ``D / 1e9``.
        multistart: Number of best grid nodes to refine.
        max_iter: Iteration cap for the local search.
        precondition: Rescale each parameter by the inverse square root of
            the Gauss-Newton diagonal at the start point.
    """

    variant: str = "mle"
    objective: str = "mse"
    huber_delta: float = 1e-3
    init: Optional[str] = None
    seed: int = 0
    box: Optional[Box] = None
    gradient: str = "analytic"
    normalize: bool = False
    multistart: int = 1
    max_iter: int = 1000
    precondition: bool = True
    grid: tuple = field(default=(GRID_E, GRID_AB, GRID_AB, GRID_EXP, GRID_EXP))

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.objective == "huber" and self.variant != "lse_log":
            raise ConfigError("huber objective is only available with the lse_log variant")
        if self.init not in (None, "random", "grid"):
            raise ConfigError(f"init must be 'random' or 'grid', got {self.init!r}")
        if self.gradient not in ("analytic", "fd"):
            raise ConfigError("gradient must be 'analytic' or 'fd'")
        if self.multistart < 1:
            raise ConfigError("multistart must be >= 1")
        if not self.huber_delta > 0:
            raise ConfigError("huber_delta must be positive")

    @property
    def resolved_init(self) -> str:
        if self.init is not None:
            return self.init
        return "random" if self.variant == "naive" else "grid"

    @property
    def lse(self) -> bool:
        return self.variant.startswith("lse")

    @property
    def resolved_box(self) -> Box:
        if self.box is not None:
            return self.box
        return DEFAULT_LSE_BOX if self.lse else DEFAULT_BOX


class _Prepared:
    """Log-transformed data shared by repeated objective evaluations."""

    def __init__(self, data):
        N, D, L = as_arrays(data)
        self.N, self.D, self.L = N, D, L
        self.lnN = np.log(N)
        self.lnD = np.log(D)
        self._lnL = None

    @property
    def lnL(self) -> np.ndarray:
        if self._lnL is None:
            if np.any(self.L <= 0):
                bad = int(np.flatnonzero(self.L <= 0)[0])
                raise DataError(f"log-loss undefined: loss[{bad}] = {self.L[bad]} <= 0")
            self._lnL = np.log(self.L)
        return self._lnL


def _prepare(data) -> _Prepared:
    return data if isinstance(data, _Prepared) else _Prepared(data)


def _check_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise FitError(f"non-finite {what} at datum {bad}")


def rss_objective_grad(params, data) -> tuple[float, np.ndarray]:
    """RSS of the raw surface and its analytic gradient.

    Args:
        params: ``(E, A, B, alpha, beta)``.
        data: ``(N, D, L)`` arrays or IsoflopPoints.

    Returns:
        ``(rss, grad)`` with ``grad`` of shape (5,).
    """
    d = _prepare(data)
    E, A, B, alpha, beta = (float(v) for v in params)
    # Overflow surfaces as a non-finite residual, which is reported below.
    with np.errstate(over="ignore", invalid="ignore"):
        tN = np.exp(-alpha * d.lnN)
        tD = np.exp(-beta * d.lnD)
        r = d.L - (E + A * tN + B * tD)
    _check_finite(r, "residual")
    grad = np.array([
        -2.0 * r.sum(),
        -2.0 * (r @ tN),
        -2.0 * (r @ tD),
        2.0 * A * (r @ (d.lnN * tN)),
        2.0 * B * (r @ (d.lnD * tD)),
    ])
    return float(r @ r), grad


def lse_log_prediction(params, data) -> tuple[np.ndarray, np.ndarray]:
    """``log L_hat`` and the softmax weights of its three terms."""
    d = _prepare(data)
    e, a, b, alpha, beta = (float(v) for v in params)
    terms = np.stack([
        np.full_like(d.lnN, e),
        a - alpha * d.lnN,
        b - beta * d.lnD,
    ])
    # Max-subtraction keeps exp() in range for any parameter values.
    peak = terms.max(axis=0)
    shifted = np.exp(terms - peak)
    total = shifted.sum(axis=0)
    return peak + np.log(total), shifted / total


def lse_log_objective(
    params,
    data,
    objective: str = "mse",
    *,
    delta: float = 1e-3,
    residual: str = "log",
) -> tuple[float, np.ndarray]:
    """Objective and gradient in ``(e, a, b, alpha, beta)`` coordinates.

    With ``residual="log"`` residuals are ``ln L - log L_hat``; with
    ``residual="linear"`` they are ``L - exp(log L_hat)``. ``objective`` is
    ``mse`` (sum of squares) or ``huber`` (sum of Huber losses at ``delta``).
    """
    if objective not in OBJECTIVES:
        raise ConfigError(f"objective must be one of {OBJECTIVES}")
    if residual not in ("log", "linear"):
        raise ConfigError("residual must be 'log' or 'linear'")
    d = _prepare(data)
    log_pred, w = lse_log_prediction(params, d)
    # d log_pred / d params, shape (5, n)
    jac = np.stack([w[0], w[1], w[2], -w[1] * d.lnN, -w[2] * d.lnD])
    if residual == "log":
        r = d.lnL - log_pred
        dr = -jac
    else:
        pred = np.exp(log_pred)
        r = d.L - pred
        dr = -jac * pred
    _check_finite(r, "residual")
    if objective == "mse":
        return float(r @ r), 2.0 * (dr @ r)
    abs_r = np.abs(r)
    quad = abs_r <= delta
    value = np.where(quad, 0.5 * r * r, delta * (abs_r - 0.5 * delta)).sum()
    psi = np.where(quad, r, delta * np.sign(r))
    return float(value), dr @ psi


def _grid_nodes(config: DirectFitConfig) -> np.ndarray:
    axes = [np.asarray(g, dtype=float) for g in config.grid]
    if config.lse:
        axes = [np.log(axes[0]), np.log(axes[1]), np.log(axes[2]), axes[3], axes[4]]
    return np.array(list(itertools.product(*axes)))


def _grid_values(nodes: np.ndarray, d: _Prepared, config: DirectFitConfig) -> np.ndarray:
    E, A, B, alpha, beta = nodes.T
    if config.lse:
        E, A, B = np.exp(E), np.exp(A), np.exp(B)
    # Exponent grids are small; evaluate powers once per distinct value.
    ua, ia = np.unique(alpha, return_inverse=True)
    ub, ib = np.unique(beta, return_inverse=True)
    tN = np.exp(-np.outer(ua, d.lnN))[ia]
    tD = np.exp(-np.outer(ub, d.lnD))[ib]
    pred = E[:, None] + A[:, None] * tN + B[:, None] * tD
    if config.variant == "lse_log":
        r = d.lnL[None, :] - np.log(pred)
        if config.objective == "huber":
            a = np.abs(r)
            dl = config.huber_delta
            return np.where(a <= dl, 0.5 * r * r, dl * (a - 0.5 * dl)).sum(axis=1)
    else:
        r = d.L[None, :] - pred
    return np.einsum("ij,ij->i", r, r)


def _random_start(config: DirectFitConfig) -> np.ndarray:
    rng = np.random.default_rng(config.seed)
    E = rng.uniform(0.0, 5.0)
    A = 10.0 ** rng.uniform(-2.0, 3.0)
    B = 10.0 ** rng.uniform(-2.0, 3.0)
    alpha, beta = rng.uniform(0.0, 1.0, size=2)
    x = np.array([E, A, B, alpha, beta])
    if config.lse:
        x[:3] = np.log(np.maximum(x[:3], 1e-300))
    return x


def _objective(config: DirectFitConfig, d: _Prepared):
    if config.variant in ("naive", "mle"):
        return lambda x: rss_objective_grad(x, d)
    residual = "log" if config.variant == "lse_log" else "linear"
    return lambda x: lse_log_objective(
        x, d, config.objective, delta=config.huber_delta, residual=residual
    )


def _gauss_newton_scale(x: np.ndarray, d: _Prepared, config: DirectFitConfig) -> np.ndarray:
    """``1 / sqrt(diag(J^T J))`` of the residual Jacobian at ``x``.

    The raw surface has parameter sensitivities spanning many decades;
    equalizing them lets the quasi-Newton search reach the bottom of the
    narrow valley instead of stalling on its walls.
    """
    if config.lse:
        log_pred, w = lse_log_prediction(x, d)
        jac = np.stack([w[0], w[1], w[2], -w[1] * d.lnN, -w[2] * d.lnD])
        if config.variant == "lse_linear":
            jac = jac * np.exp(log_pred)
    else:
        E, A, B, alpha, beta = x
        tN = np.exp(-alpha * d.lnN)
        tD = np.exp(-beta * d.lnD)
        jac = np.stack([np.ones_like(tN), tN, tD, -A * d.lnN * tN, -B * d.lnD * tD])
    diag = np.einsum("ij,ij->i", jac, jac)
    scale = np.ones_like(diag)
    ok = np.isfinite(diag) & (diag > 0)
    scale[ok] = 1.0 / np.sqrt(diag[ok])
    return scale


def _to_surface(x: np.ndarray, lse: bool) -> LossSurface:
    E, A, B, alpha, beta = (float(v) for v in x)
    if lse:
        E, A, B = math.exp(E), math.exp(A), math.exp(B)
    return LossSurface(E, A, B, alpha, beta)


def fit_direct(data, config: Optional[DirectFitConfig] = None) -> FitResult:
    """Fit all five surface parameters directly.

    Returns a FitResult whose surface is in raw units even when the fit ran
    on normalized inputs (the normalized surface is kept in
    ``extra["normalized_surface"]``). Non-convergence is flagged on the
    result rather than raised.
    """
    config = config or DirectFitConfig()
    N, D, L = as_arrays(data)
    if N.size < 5:
        raise DataError(f"direct fit needs at least 5 points, got {N.size}")
    if config.normalize:
        N, D = N / N_SCALE, D / D_SCALE
    d = _Prepared((N, D, L))
    box = config.resolved_box
    if box.dim != 5:
        raise ConfigError("direct-fit box must be 5-dimensional")
    fun = _objective(config, d)

    if config.resolved_init == "random":
        starts = [box.project(_random_start(config))]
        evaluations = 0
    else:
        nodes = _grid_nodes(config)
        values = _grid_values(nodes, d, config)
        values = np.where(np.isfinite(values), values, np.inf)
        order = np.argsort(values, kind="stable")[: config.multistart]
        if not np.isfinite(values[order[0]]):
            raise FitError("objective is non-finite at every grid node")
        starts = [box.project(nodes[i]) for i in order]
        evaluations = len(nodes)

    best = None
    for x0 in starts:
        try:
            scale = _gauss_newton_scale(x0, d, config) if config.precondition else None
            res = bounded_quasi_newton(
                fun, x0, box, gradient=config.gradient, max_iter=config.max_iter,
                scale=scale,
            )
        except FitError as exc:
            if best is None:
                best_x, best_f, iters, ok, msg = x0, math.inf, 0, False, str(exc)
            continue
        evaluations += res.evaluations
        if best is None or res.f < best.f:
            best = res
    if best is not None:
        best_x, best_f, iters, ok, msg = best.x, best.f, best.iterations, best.converged, best.message

    fitted = _to_surface(best_x, config.lse)
    surface = denormalize(fitted, N_SCALE, D_SCALE) if config.normalize else fitted
    r = L - fitted.loss(N, D)
    extra = {"objective": best_f, "evaluations": evaluations, "start": starts[0].tolist()}
    if config.normalize:
        extra["normalized_surface"] = fitted.as_tuple()
    return FitResult(
        method="direct", law=law_from_surface(surface), surface=surface,
        rss=float(r @ r), iterations=iters, converged=ok,
        variant=config.variant, message=msg, extra=extra,
    )


__all__ = [
    "DirectFitConfig", "rss_objective_grad", "lse_log_objective",
    "lse_log_prediction", "fit_direct", "VARIANTS",
]
