"""Synthetic IsoFLOP experiments and Monte Carlo sweeps.

Noise is drawn from counter-based Philox streams keyed on
``(seed, budget index)``; the point index is the position within that
stream. Any experiment or sweep cell can therefore be regenerated on its
own, in any order, on any worker.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

from .approach2 import fit_approach2
from .data import FitResult, IsoflopPoints
from .direct import DirectFitConfig, fit_direct
from .errors import ConfigError, IsoflopError
from .model import LossSurface, allocation_law, get_surface, optimal_point, eval_loss
from .vpnls import VpnlsConfig, fit_vpnls

log = logging.getLogger(__name__)

BUDGET_RANGE = (1e17, 1e21)


@dataclass(frozen=True)
class GridSpec:
    """Per-budget sampling grid spanning ``center / k`` to ``center * k``."""

    name: str
    half_factor: float
    n_points: int = 15

    def __post_init__(self):
        if not self.half_factor > 1:
            raise ConfigError(f"grid half-factor must exceed 1, got {self.half_factor}")
        if self.n_points < 3:
            raise ConfigError(f"grid needs at least 3 points, got {self.n_points}")

    @property
    def width(self) -> float:
        """Decade span ``W = 2 log10 k``."""
        return 2.0 * math.log10(self.half_factor)

    def with_points(self, n_points: int) -> "GridSpec":
        return replace(self, n_points=n_points)


GRID_PRESETS: dict[str, float] = {"XS": 2.0, "S": 4.0, "L": 8.0, "XL": 16.0}


def grid_spec(name_or_k, n_points: int = 15) -> GridSpec:
    """Preset grid by name (XS, S, L, XL) or custom half-factor."""
    if isinstance(name_or_k, GridSpec):
        return name_or_k.with_points(n_points)
    if isinstance(name_or_k, str):
        key = name_or_k.upper()
        if key in GRID_PRESETS:
            return GridSpec(key, GRID_PRESETS[key], n_points)
        try:
            k = float(name_or_k)
        except ValueError:
            raise ConfigError(
                f"unknown grid {name_or_k!r}; use one of {list(GRID_PRESETS)} or a factor"
            ) from None
    else:
        k = float(name_or_k)
    return GridSpec(f"x{k:g}", k, n_points)


@dataclass(frozen=True)
class BiasSpec:
    """Offset of the sampling center from ``D*`` on the token axis.

    ``constant`` multiplies every center by ``factor``. ``drift`` moves the
    log10 offset linearly in log10 C from 0 at the lowest budget to
    ``log10(factor)`` at the highest.
    """

    kind: str = "none"
    factor: float = 1.0

    def __post_init__(self):
        if self.kind not in ("none", "constant", "drift"):
            raise ConfigError(f"bias kind must be none, constant or drift, got {self.kind!r}")
        if not self.factor > 0:
            raise ConfigError("bias factor must be positive")

    def center_factors(self, budgets: Sequence[float]) -> np.ndarray:
        C = np.asarray(budgets, dtype=float)
        if self.kind == "none":
            return np.ones_like(C)
        if self.kind == "constant":
            return np.full_like(C, self.factor)
        lc = np.log10(C)
        span = lc[-1] - lc[0]
        frac = (lc - lc[0]) / span if span > 0 else np.zeros_like(lc)
        return 10.0 ** (frac * math.log10(self.factor))

    @property
    def label(self) -> str:
        return "none" if self.kind == "none" else f"{self.kind}({self.factor:g})"


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ConfigError("noise sigma must be non-negative")


@dataclass(frozen=True)
class IsoflopExperiment:
    surface: LossSurface
    budgets: tuple[float, ...]
    grid: GridSpec
    bias: BiasSpec
    noise: NoiseSpec
    points: IsoflopPoints


def log_uniform_budgets(count: int, low: float = BUDGET_RANGE[0], high: float = BUDGET_RANGE[1]) -> np.ndarray:
    """``count`` budgets log-uniformly spaced, both endpoints included."""
    if count < 1:
        raise ConfigError("need at least one budget")
    if count == 1:
        return np.array([low])
    return np.logspace(math.log10(low), math.log10(high), count)


def build_experiment(
    surface: LossSurface,
    budgets: Sequence[float],
    grid: GridSpec,
    bias: Optional[BiasSpec] = None,
) -> IsoflopExperiment:
    """Noise-free IsoFLOP curves with ``grid.n_points`` per budget."""
    bias = bias or BiasSpec()
    C = np.asarray(budgets, dtype=float)
    if C.ndim != 1 or C.size < 1:
        raise ConfigError("budgets must be a non-empty 1-D sequence")
    if np.any(np.diff(C) <= 0):
        raise ConfigError("budgets must be strictly ascending")
    factors = bias.center_factors(C)
    half = math.log10(grid.half_factor)
    offsets = np.linspace(-half, half, grid.n_points)
    cols = {"budget": [], "N": [], "D": [], "loss": []}
    for c, f in zip(C, factors):
        opt, _ = optimal_point(surface, float(c))
        D = 10.0 ** (math.log10(opt.D * f) + offsets)
        N = c / (6.0 * D)
        cols["budget"].append(np.full(grid.n_points, c))
        cols["N"].append(N)
        cols["D"].append(D)
        cols["loss"].append(eval_loss(surface, N, D))
    points = IsoflopPoints(*(np.concatenate(cols[k]) for k in ("budget", "N", "D", "loss")))
    return IsoflopExperiment(surface, tuple(map(float, C)), grid, bias, NoiseSpec(), points)


def noise_stream(seed: int, budget_index: int) -> np.random.Generator:
    """Independent Philox stream for one budget of one experiment."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, budget_index])))


def add_noise(experiment: IsoflopExperiment, noise: NoiseSpec) -> IsoflopExperiment:
    """Add iid Gaussian noise with constant ``sigma`` to every loss."""
    if noise.sigma == 0:
        return replace(experiment, noise=noise)
    pts = experiment.points
    loss = pts.loss.copy()
    for i, grp in enumerate(pts.groups()):
        draws = noise_stream(noise.seed, i).standard_normal(grp.index.size)
        loss[grp.index] += noise.sigma * draws
    return replace(experiment, noise=noise, points=pts.with_loss(loss))


# -- method registry -------------------------------------------------------

MethodFn = Callable[[IsoflopPoints, int], FitResult]


_VPNLS_VARIANTS = {"vpnls": "ols_quasi_newton", "vpnls_nm": "nnls_nelder_mead", "vpnls_grid": "grid_only"}


def run_method(name: str, points: IsoflopPoints, seed: int = 0, normalize: bool = False) -> FitResult:
    """Fit ``points`` with a registered method.

    ``normalize`` fits direct and VPNLS methods on ``N / 1e6`` and
    ``D / 1e9``; Approach 2 is scale-free and ignores it.
    """
    if name not in METHODS:
        raise ConfigError(f"unknown method {name!r}; choose from {sorted(METHODS)}")
    if name == "approach2":
        return fit_approach2(points, axis="D")
    if name.startswith("direct_"):
        return fit_direct(points, DirectFitConfig(variant=name[len("direct_"):], seed=seed, normalize=normalize))
    return fit_vpnls(points, VpnlsConfig(variant=_VPNLS_VARIANTS[name], normalize=normalize))


METHODS: dict[str, MethodFn] = {
    name: (lambda points, seed, _n=name: run_method(_n, points, seed))
    for name in (
        "approach2", "direct_naive", "direct_mle", "direct_lse_log", "direct_lse_linear",
        "vpnls", "vpnls_nm", "vpnls_grid",
    )
}


# -- sweeps ----------------------------------------------------------------

RECORD_COLUMNS = (
    "surface", "grid", "bias_kind", "bias_factor", "sigma", "n_budgets", "n_points",
    "realization", "method", "a_hat", "b_hat", "a_err_rel", "b_err_rel", "status",
)


@dataclass(frozen=True)
class SweepConfig:
    """Cross-product of experimental settings.

    Every combination of surface, grid, bias, sigma, budget count and
    points-per-curve is realized ``realizations`` times; each realization
    shares one noisy dataset across all ``methods``.
    """

    surfaces: tuple[str, ...] = ("asymmetric",)
    grids: tuple[str, ...] = ("L",)
    biases: tuple[BiasSpec, ...] = (BiasSpec(),)
    sigmas: tuple[float, ...] = (0.0,)
    budget_counts: tuple[int, ...] = (5,)
    points_per_curve: tuple[int, ...] = (15,)
    realizations: int = 1
    methods: tuple[str, ...] = ("approach2", "vpnls")
    master_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; choose from {sorted(METHODS)}")
        if self.realizations < 1:
            raise ConfigError("realizations must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        for name in self.surfaces:
            get_surface(name)

    @property
    def n_cells(self) -> int:
        return (
            len(self.surfaces) * len(self.grids) * len(self.biases) * len(self.sigmas)
            * len(self.budget_counts) * len(self.points_per_curve) * self.realizations
        )

    @property
    def n_rows(self) -> int:
        return self.n_cells * len(self.methods)


@dataclass(frozen=True)
class _Cell:
    index: int
    surface: str
    grid: str
    bias: BiasSpec
    sigma: float
    n_budgets: int
    n_points: int
    realization: int


def _cells(config: SweepConfig) -> Iterator[_Cell]:
    product = itertools.product(
        config.surfaces, config.grids, config.biases, config.sigmas,
        config.budget_counts, config.points_per_curve, range(config.realizations),
    )
    for i, combo in enumerate(product):
        yield _Cell(i, *combo)


def cell_seed(master_seed: int, cell_index: int) -> int:
    """64-bit seed for one sweep cell."""
    state = np.random.SeedSequence([master_seed, cell_index]).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


def _run_cell(cell: _Cell, config: SweepConfig) -> list[dict]:
    surface = get_surface(cell.surface)
    truth = allocation_law(surface)
    grid = grid_spec(cell.grid, cell.n_points)
    seed = cell_seed(config.master_seed, cell.index)
    exp = build_experiment(surface, log_uniform_budgets(cell.n_budgets), grid, cell.bias)
    exp = add_noise(exp, NoiseSpec(cell.sigma, seed))
    rows = []
    for method in config.methods:
        row = {
            "surface": cell.surface, "grid": grid.name, "bias_kind": cell.bias.kind,
            "bias_factor": cell.bias.factor, "sigma": cell.sigma,
            "n_budgets": cell.n_budgets, "n_points": cell.n_points,
            "realization": cell.realization, "method": method,
            "a_hat": math.nan, "b_hat": math.nan,
            "a_err_rel": math.nan, "b_err_rel": math.nan, "status": "ok",
        }
        try:
            with np.errstate(all="ignore"):
                fit = METHODS[method](exp.points, seed)
        except (IsoflopError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            row["status"] = f"failed: {type(exc).__name__}"
            log.debug("cell %d method %s failed: %s", cell.index, method, exc)
        else:
            row.update(
                a_hat=fit.a, b_hat=fit.b,
                a_err_rel=(fit.a - truth.a) / truth.a,
                b_err_rel=(fit.b - truth.b) / truth.b,
                status="ok" if fit.converged else "not_converged",
            )
        rows.append(row)
    return rows


def _run_chunk(args) -> list[dict]:
    cells, config = args
    out = []
    for cell in cells:
        out.extend(_run_cell(cell, config))
    return out


def iter_sweep(config: SweepConfig, chunk_size: int = 32) -> Iterator[list[dict]]:
    """Yield record batches in cell order as they complete.

    Each cell derives its own seed from ``(master_seed, cell index)`` and
    batches are reduced in cell order, so output is identical for any
    ``workers`` value.
    """
    cells = list(_cells(config))
    chunks = [cells[i:i + chunk_size] for i in range(0, len(cells), chunk_size)]
    if config.workers == 1:
        for chunk in chunks:
            yield _run_chunk((chunk, config))
        return
    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        yield from pool.map(_run_chunk, [(c, config) for c in chunks])


def run_sweep(
    config: SweepConfig,
    progress: Optional[Callable[[int, int], None]] = None,
    chunk_size: int = 32,
) -> list[dict]:
    """Execute every cell and return one record per (cell, method)."""
    records: list[dict] = []
    per_cell = len(config.methods)
    for batch in iter_sweep(config, chunk_size):
        records.extend(batch)
        if progress:
            progress(len(records) // per_cell, config.n_cells)
    return records


def write_records_csv(records: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RECORD_COLUMNS)
        writer.writeheader()
        write_records(writer, records)


def write_records(writer: csv.DictWriter, records: Iterable[dict]) -> None:
    for row in records:
        writer.writerow({k: _fmt(row[k]) for k in RECORD_COLUMNS})


def _fmt(value):
    if isinstance(value, float):
        return "" if math.isnan(value) else f"{value:.9g}"
    return value


def exponent_inference_sweep(**overrides) -> SweepConfig:
    """Asymmetric surface, 3x drift, L grid, 3 x 3 x 4 settings x 256 realizations."""
    base = SweepConfig(
        surfaces=("asymmetric",), grids=("L",), biases=(BiasSpec("drift", 3.0),),
        sigmas=(0.05, 0.1, 0.2), budget_counts=(2, 3, 4), points_per_curve=(4, 8, 16, 32),
        realizations=256,
        methods=("approach2", "direct_naive", "direct_mle", "direct_lse_log", "vpnls"),
    )
    return replace(base, **overrides)


def data_efficiency_sweep(**overrides) -> SweepConfig:
    """Symmetric surface, centered sampling, 3^4 settings x 10 trials."""
    base = SweepConfig(
        surfaces=("symmetric",), grids=("XS", "S", "L"), biases=(BiasSpec(),),
        sigmas=(0.01, 0.02, 0.05), budget_counts=(3, 5, 7), points_per_curve=(21, 31, 41),
        realizations=10, methods=("approach2", "direct_mle", "vpnls"),
    )
    return replace(base, **overrides)


__all__ = [
    "GridSpec", "GRID_PRESETS", "grid_spec", "BiasSpec", "NoiseSpec", "IsoflopExperiment",
    "log_uniform_budgets", "build_experiment", "add_noise", "noise_stream", "METHODS", "run_method",
    "SweepConfig", "RECORD_COLUMNS", "run_sweep", "iter_sweep", "write_records", "cell_seed", "write_records_csv",
    "exponent_inference_sweep", "data_efficiency_sweep",
]
