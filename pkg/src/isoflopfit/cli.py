"""Command-line interface.

Every run is described by a :class:`RunConfig`, read from an optional YAML
file and overridden by flags whose names mirror the config keys. JSON
reports embed the resolved config and the toolkit version.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import yaml

from . import __version__
from .csvio import fmt_float, ingest_csv, write_points_csv
from .data import IsoflopPoints
from .direct import lse_log_objective, rss_objective_grad
from .errors import ConfigError, DataError, DomainError, FitError, IsoflopError
from .metrics import CostModel, bootstrap_ci, dcl, error_stats, hessian_condition, residual_tests
from .model import allocation_law, get_surface
from .optim import check_gradient
from .qc import QcConfig, run_qc
from .simulate import (
    METHODS, RECORD_COLUMNS, BiasSpec, NoiseSpec, add_noise, build_experiment,
    data_efficiency_sweep, exponent_inference_sweep, grid_spec, iter_sweep,
    log_uniform_budgets, run_method, write_records,
)
from .vpnls import vp_objective_ols, vp_objective_ols_grad

log = logging.getLogger("isoflopfit")

COMMANDS = ("simulate", "fit", "compare", "qc", "dcl", "sweep", "diagnose")
COMPARE_METHODS = ("approach2", "direct_naive", "direct_mle", "direct_lse_log", "vpnls")
SWEEP_PRESETS = {
    "exponent_inference": exponent_inference_sweep,
    "data_efficiency": data_efficiency_sweep,
}
EXIT_CODES = ((ConfigError, 2), (DomainError, 2), (DataError, 3), (FitError, 4))


@dataclass(frozen=True)
class RunConfig:
    """Declarative description of one CLI run.

    Data come from ``input`` when set, otherwise from a synthetic experiment
    on ``surface`` built from the grid, bias and noise keys. ``surface`` is
    also the reference for error tables and ``dcl``, unless ``reference``
    names a method whose fit to the unfiltered data serves instead.
    """

    command: str
    input: Optional[str] = None
    output: Optional[str] = None
    report: Optional[str] = None
    surface: str = "symmetric"
    methods: tuple[str, ...] = ()
    normalize: bool = False
    grid: str = "XL"
    n_points: int = 15
    n_budgets: int = 5
    budget_min: float = 1e17
    budget_max: float = 1e21
    bias_kind: str = "none"
    bias_factor: float = 1.0
    sigma: float = 0.0
    seed: int = 0
    max_budget: Optional[float] = None
    budget_column: Optional[str] = None
    qc: bool = False
    qc_axis: str = "N"
    min_points: int = 6
    mad_threshold: float = 5.0
    eval_budget: Optional[float] = None
    reference: Optional[str] = None
    mfu: float = 0.5
    price_per_gpu_hour: float = 2.0
    peak_flops_per_gpu: float = 1.979e15
    bootstrap: int = 0
    preset: str = "exponent_inference"
    realizations: Optional[int] = None
    threads: int = 1

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"command must be one of {COMMANDS}, got {self.command!r}")
        methods = (self.methods,) if isinstance(self.methods, str) else tuple(self.methods)
        object.__setattr__(self, "methods", methods)
        unknown = [m for m in methods + ((self.reference,) if self.reference else ()) if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; choose from {sorted(METHODS)}")
        get_surface(self.surface)
        if self.n_points < 3 or self.n_budgets < 1:
            raise ConfigError("n_points must be >= 3 and n_budgets >= 1")
        if not 0 < self.budget_min <= self.budget_max:
            raise ConfigError("budget range must be positive and ascending")
        if self.sigma < 0 or self.bootstrap < 0 or self.threads < 1:
            raise ConfigError("sigma and bootstrap must be >= 0 and threads >= 1")
        if self.preset not in SWEEP_PRESETS:
            raise ConfigError(f"preset must be one of {sorted(SWEEP_PRESETS)}")
        if self.realizations is not None and self.realizations < 1:
            raise ConfigError("realizations must be >= 1")
        # Construct the specs now so that invalid values fail before any work.
        grid_spec(self.grid, self.n_points)
        BiasSpec(self.bias_kind, self.bias_factor)
        self.qc_config()
        self.cost_model()

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["methods"] = list(self.methods)
        return out

    def qc_config(self) -> QcConfig:
        return QcConfig(axis=self.qc_axis, min_points=self.min_points, mad_threshold=self.mad_threshold)

    def cost_model(self) -> CostModel:
        return CostModel(self.mfu, self.price_per_gpu_hour, self.peak_flops_per_gpu)


# -- helpers ---------------------------------------------------------------

def _round(value: Any) -> Any:
    """JSON-safe copy with floats at 9 significant digits and NaN as null."""
    if isinstance(value, dict):
        return {str(k): _round(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_round(v) for v in value]
    if isinstance(value, np.ndarray):
        return _round(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        text = fmt_float(value)
        return None if text == "" or not math.isfinite(float(value)) else float(text)
    return value


def _emit_report(config: RunConfig, results: list[dict]) -> dict:
    report = _round({
        "config": config.to_dict(),
        "results": results,
        "provenance": {"seed": config.seed, "version": __version__, "command": config.command},
    })
    text = json.dumps(report, indent=2, sort_keys=False) + "\n"
    if config.report:
        Path(config.report).write_text(text)
    else:
        sys.stdout.write(text)
    return report


def _simulate(config: RunConfig) -> IsoflopPoints:
    surface = get_surface(config.surface)
    budgets = log_uniform_budgets(config.n_budgets, config.budget_min, config.budget_max)
    exp = build_experiment(
        surface, budgets, grid_spec(config.grid, config.n_points),
        BiasSpec(config.bias_kind, config.bias_factor),
    )
    return add_noise(exp, NoiseSpec(config.sigma, config.seed)).points


def _load_raw(config: RunConfig) -> IsoflopPoints:
    if config.input:
        return ingest_csv(config.input, config.max_budget, config.budget_column)
    return _simulate(config)


def _apply_qc(config: RunConfig, pts: IsoflopPoints) -> IsoflopPoints:
    if not config.qc:
        return pts
    clean, _ = run_qc(pts, config.qc_config())
    if len(clean) == 0:
        raise DataError("no points survive QC")
    return clean


def _load(config: RunConfig) -> IsoflopPoints:
    return _apply_qc(config, _load_raw(config))


def _fit_record(name: str, fit, truth=None) -> dict:
    out = {"name": name, **fit.to_dict()}
    if truth is not None:
        out["a_err_rel"] = (fit.a - truth.a) / truth.a
        out["b_err_rel"] = (fit.b - truth.b) / truth.b
    return out


def _truth(config: RunConfig):
    """True allocation law when the data were simulated, else None."""
    return None if config.input else allocation_law(get_surface(config.surface))


# -- commands --------------------------------------------------------------

def cmd_simulate(config: RunConfig) -> list[dict]:
    if not config.output:
        raise ConfigError("simulate needs an output path")
    pts = _simulate(config)
    write_points_csv(pts, config.output)
    law = allocation_law(get_surface(config.surface))
    return [{
        "kind": "experiment", "surface": config.surface, "n_points": len(pts),
        "budgets": pts.budgets.tolist(), "a": law.a, "b": law.b, "a0": law.a0, "b0": law.b0,
        "output": config.output,
    }]


def cmd_fit(config: RunConfig) -> list[dict]:
    name = config.methods[0] if config.methods else "vpnls"
    fit = run_method(name, _load(config), config.seed, config.normalize)
    return [_fit_record(name, fit, _truth(config))]


def cmd_compare(config: RunConfig) -> list[dict]:
    pts = _load(config)
    truth = _truth(config)
    true_surface = None if config.input else get_surface(config.surface)
    results, rows = [], []
    for name in config.methods or COMPARE_METHODS:
        try:
            fit = run_method(name, pts, config.seed, config.normalize)
        except FitError as exc:
            results.append({"kind": "fit", "name": name, "method": name, "error": str(exc)})
            continue
        rec = _fit_record(name, fit, truth)
        results.append(rec)
        for key in ("a", "b", "a0", "b0", "E", "A", "B", "alpha", "beta"):
            if key not in rec:
                continue
            ref = math.nan
            if truth is not None:
                ref = getattr(truth, key) if hasattr(truth, key) else getattr(true_surface, key)
            err = (rec[key] - ref) / abs(ref) if ref and math.isfinite(ref) else math.nan
            rows.append([name, key, fmt_float(rec[key]), fmt_float(ref), fmt_float(err)])
    if config.output:
        with open(config.output, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["method", "quantity", "estimate", "truth", "rel_error"])
            writer.writerows(rows)
    return results


def cmd_qc(config: RunConfig) -> list[dict]:
    if not config.input:
        raise ConfigError("qc needs an input CSV")
    pts = ingest_csv(config.input, config.max_budget, config.budget_column)
    clean, report = run_qc(pts, config.qc_config())
    if config.output:
        write_points_csv(pts, config.output, report.point_status, report.budget_status)
    return [{"kind": "qc", "n_input": len(pts), "n_clean": len(clean), **report.summary()}]


def cmd_dcl(config: RunConfig) -> list[dict]:
    if config.eval_budget is None:
        raise ConfigError("dcl needs eval_budget")
    name = config.methods[0] if config.methods else "approach2"
    cost = config.cost_model()
    raw = _load_raw(config)
    results = []
    if config.reference:
        ref_fit = run_method(config.reference, raw, config.seed, config.normalize)
        if ref_fit.surface is None:
            raise ConfigError(f"reference method {config.reference} does not fit a surface")
        reference = ref_fit.surface
        results.append(_fit_record(f"reference:{config.reference}", ref_fit))
    else:
        reference = get_surface(config.surface)
    pts = _apply_qc(config, raw)

    def fit(points):
        return run_method(name, points, config.seed, config.normalize)

    fitted = fit(pts)
    report = dcl(reference, fitted.law, config.eval_budget, cost)
    if config.bootstrap:
        ci = bootstrap_ci(
            pts, fit, lambda f: dcl(reference, f.law, config.eval_budget, cost).dcl_pct,
            level=0.90, n_boot=config.bootstrap, seed=config.seed,
        )
        report = dataclasses.replace(report, ci90=ci)
    return results + [_fit_record(name, fitted), report.to_dict()]


def cmd_diagnose(config: RunConfig) -> list[dict]:
    pts = _load(config)
    name = config.methods[0] if config.methods else "vpnls"
    fit = run_method(name, pts, config.seed, config.normalize)
    if fit.surface is None:
        raise ConfigError(f"diagnose needs a surface-fitting method, not {name}")
    s = fit.surface
    data = (pts.N, pts.D, pts.loss)
    x5 = np.array(s.as_tuple())
    kappa5 = hessian_condition(lambda p: rss_objective_grad(p, data)[0], x5)
    x2 = x5[3:]
    kappa2 = hessian_condition(lambda p: vp_objective_ols(p[0], p[1], data), x2, scale=np.ones(2))
    residual = pts.loss - s.loss(pts.N, pts.D)
    groups = [residual[g.index] for g in pts.groups()]
    tests = residual_tests(groups) if len(groups) >= 2 and min(map(len, groups)) >= 2 else None
    x_lse = np.array([math.log(max(s.E, 1e-300)), math.log(max(s.A, 1e-300)),
                      math.log(max(s.B, 1e-300)), s.alpha, s.beta])
    grads = {
        "rss_objective_grad": check_gradient(lambda p: rss_objective_grad(p, data), x5),
        "lse_log_objective": check_gradient(lambda p: lse_log_objective(p, data), x_lse),
        "vp_objective_ols_grad": check_gradient(
            lambda p: (lambda r: (r[0], np.array(r[1:])))(vp_objective_ols_grad(p[0], p[1], data)), x2,
        ),
    }
    return [
        _fit_record(name, fit, _truth(config)),
        {
            "kind": "diagnose",
            "hessian_5d": {"kappa": kappa5.kappa, "eigenvalues": kappa5.eigenvalues},
            "hessian_vpnls": {"kappa": kappa2.kappa, "eigenvalues": kappa2.eigenvalues},
            "residual_tests": dataclasses.asdict(tests) if tests else None,
            "gradient_check": grads,
        },
    ]


def cmd_sweep(config: RunConfig) -> list[dict]:
    if not config.output:
        raise ConfigError("sweep needs an output path")
    overrides: dict[str, Any] = {"master_seed": config.seed, "workers": config.threads}
    if config.realizations is not None:
        overrides["realizations"] = config.realizations
    if config.methods:
        overrides["methods"] = config.methods
    sweep = SWEEP_PRESETS[config.preset](**overrides)
    records: list[dict] = []
    # Rows are flushed per batch so an interrupted sweep keeps its prefix.
    with open(config.output, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RECORD_COLUMNS, lineterminator="\n")
        writer.writeheader()
        try:
            for batch in iter_sweep(sweep):
                write_records(writer, batch)
                fh.flush()
                records.extend(batch)
                log.info("sweep: %d / %d rows", len(records), sweep.n_rows)
        except KeyboardInterrupt:
            log.warning("sweep interrupted after %d rows; partial output kept", len(records))
            raise
    return sweep_summary(records)


def sweep_summary(records: Sequence[dict]) -> list[dict]:
    """Per-method error summary of sweep rows."""
    out = []
    for method in dict.fromkeys(r["method"] for r in records):
        rows = [r for r in records if r["method"] == method]
        a = [r["a_err_rel"] for r in rows]
        b = [r["b_err_rel"] for r in rows]
        entry = {
            "kind": "sweep_summary", "method": method, "n": len(rows),
            "n_failed": sum(r["status"].startswith("failed") for r in rows),
            "n_not_converged": sum(r["status"] == "not_converged" for r in rows),
        }
        if not all(math.isnan(v) for v in a):
            sa, sb = error_stats(a), error_stats(b)
            entry.update(
                a_max_abs=sa.max_abs, a_geomean_abs=sa.geomean_abs,
                b_max_abs=sb.max_abs, b_geomean_abs=sb.geomean_abs, b_hat_variance=sb.variance,
            )
        out.append(entry)
    return out


HANDLERS = {
    "simulate": cmd_simulate, "fit": cmd_fit, "compare": cmd_compare, "qc": cmd_qc,
    "dcl": cmd_dcl, "sweep": cmd_sweep, "diagnose": cmd_diagnose,
}


def run_command(config: RunConfig) -> dict:
    """Execute ``config`` and write its JSON report; returns the report."""
    results = HANDLERS[config.command](config)
    return _emit_report(config, results)


# -- argument parsing ------------------------------------------------------

_FLAG_TYPES = {"int": int, "Optional[int]": int, "float": float, "Optional[float]": float}


def _flag_type(field: dataclasses.Field):
    """Argument type for a config field; None marks a boolean switch."""
    return None if field.type == "bool" else _FLAG_TYPES.get(field.type, str)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isoflopfit", description="Scaling-law fitting toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        p = sub.add_parser(command)
        p.add_argument("--config", dest="config_file", help="YAML file of RunConfig keys")
        p.add_argument("-v", "--verbose", action="store_true")
        for f in fields(RunConfig):
            if f.name == "command":
                continue
            flag = "--" + f.name.replace("_", "-")
            if f.name == "methods":
                p.add_argument(flag, nargs="+", default=argparse.SUPPRESS)
            elif _flag_type(f) is None:
                p.add_argument(flag, action=argparse.BooleanOptionalAction, default=argparse.SUPPRESS)
            else:
                p.add_argument(flag, type=_flag_type(f), default=argparse.SUPPRESS)
    return parser


def resolve_config(argv: Optional[Sequence[str]] = None) -> tuple[RunConfig, bool]:
    """Merge YAML values with flag overrides into a validated RunConfig."""
    args = vars(build_parser().parse_args(argv))
    verbose = args.pop("verbose", False)
    path = args.pop("config_file", None)
    values: dict[str, Any] = {}
    if path:
        try:
            loaded = yaml.safe_load(Path(path).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError("config file must hold a mapping")
        values.update(loaded or {})
        if values.get("command", args["command"]) != args["command"]:
            raise ConfigError(f"config is for {values['command']!r}, not {args['command']!r}")
    values.update(args)
    return RunConfig.from_mapping(values), verbose


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        config, verbose = resolve_config(argv)
        logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s")
        run_command(config)
    except KeyboardInterrupt:
        return 130
    except IsoflopError as exc:
        for cls, code in EXIT_CODES:
            if isinstance(exc, cls):
                print(f"error: {exc}", file=sys.stderr)
                return code
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
