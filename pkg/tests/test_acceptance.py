"""Acceptance criteria, one test per criterion.

Each test records a ``PASS``, ``FAIL`` or ``SKIP`` line that is printed in
the terminal summary. Real-data gates read CSV paths from
``ISOFLOPFIT_CHINCHILLA_CSV`` and ``ISOFLOPFIT_LLAMA_CSV`` and skip when
they are unset.
"""

import math
import os
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import SAMPLING_RANGES, SURFACE_NAMES, experiment, rel_err
from test_metrics import kw_statistic, levene_statistic, permutation_p
from isoflopfit.approach2 import run_approach2, vertex_shift_oracle
from isoflopfit.csvio import ingest_csv
from isoflopfit.direct import DirectFitConfig, fit_direct, lse_log_objective, rss_objective_grad
from isoflopfit.metrics import dcl, extrapolation_error, hessian_condition, residual_tests
from isoflopfit.model import allocation_law, get_surface
from isoflopfit.optim import check_gradient
from isoflopfit.qc import POINT_STATUSES, run_qc
from isoflopfit.simulate import (
    BiasSpec, NoiseSpec, _cells, _run_cell, add_noise, data_efficiency_sweep,
    exponent_inference_sweep, grid_spec, run_method, run_sweep,
)
from isoflopfit.vpnls import VpnlsConfig, fit_vpnls, grid_resolution, vp_objective_ols, vp_objective_ols_grad

RESULTS: dict[str, str] = {}


def record(key, checks, detail=""):
    """Record one criterion line; ``checks`` maps a label to a boolean."""
    failed = [label for label, ok in checks.items() if not ok]
    status = "PASS" if not failed else "FAIL"
    line = f"criterion {key}: {status}  {detail}"
    if failed:
        line += f"  [failed: {'; '.join(failed)}]"
    RESULTS[key] = line
    print(line)
    assert not failed, line


def skip(key, reason):
    RESULTS[key] = f"criterion {key}: SKIP  {reason}"
    pytest.skip(reason)


def real_csv(var):
    path = os.environ.get(var)
    return path if path and os.path.isfile(path) else None


def test_criterion_01_symmetric_recovery():
    t0 = time.perf_counter()
    res = run_approach2(experiment("symmetric", "XL"))
    elapsed = time.perf_counter() - t0
    err = abs(res.law.b - 0.5) / 0.5
    record("1", {
        "b rel err <= 1e-9": err <= 1e-9,
        "b0 = -0.389076 +/- 1e-6": abs(res.law.b0 + 0.389076) <= 1e-6,
        "runtime < 1 s": elapsed < 1.0,
    }, f"b rel err {err:.1e}, b0 {res.law.b0:.7f}, {elapsed * 1e3:.1f} ms")


def test_criterion_02_asymmetric_intercept_bias():
    checks, parts = {}, []
    cases = (("chinchilla", 0.548387, -0.578092, -0.041, -0.555357),
             ("asymmetric", 0.750000, -1.459957, -0.085, -1.345791))
    for name, b, b0, rel, true_b0 in cases:
        res = run_approach2(experiment(name, "XL"))
        truth = allocation_law(get_surface(name))
        err = (res.law.b0 - truth.b0) / abs(truth.b0)
        checks[f"{name} b"] = abs(res.law.b - b) <= 1e-6
        checks[f"{name} b0"] = abs(res.law.b0 - b0) <= 5e-4
        checks[f"{name} intercept error"] = abs(err - rel) <= 1e-3
        checks[f"{name} true b0"] = abs(truth.b0 - true_b0) <= 1e-4
        parts.append(f"{name}: b {res.law.b:.6f}, b0 {res.law.b0:.6f} ({100 * err:+.2f}%)")
    record("2", checks, "; ".join(parts))


def test_criterion_03_vertex_shift_oracle():
    small = vertex_shift_oracle(0.34, 0.28, 0.60, 15)
    wide = vertex_shift_oracle(0.34, 0.28, 2.41, 15)
    wide_d = vertex_shift_oracle(0.34, 0.28, 2.41, 15, axis="D")
    sym = max(abs(vertex_shift_oracle(a, a, w, 15).delta_w) for a in (0.2, 0.31, 0.5) for w in (0.6, 2.41))
    ref = wide.delta_w
    spread = max(
        abs(vertex_shift_oracle(0.34, 0.28, 2.41, 15, **kw).delta_w - ref)
        for kw in (dict(budget=1e17), dict(budget=1e24), dict(A=406.4, B=410.7, E=1.69), dict(A=50.0, B=0.5))
    )
    record("3", {
        "|err| = 0.3% +/- 0.05pp at W=0.60": abs(abs(small.intercept_error) - 0.003) <= 5e-4,
        "|err| = 4.1% +/- 0.1pp at W=2.41": abs(abs(wide.intercept_error) - 0.041) <= 1e-3,
        "dw = 0 for alpha = beta": sym <= 1e-12,
        "dw invariant to budget and coefficients": spread <= 1e-12,
    }, f"W=0.60: {100 * small.intercept_error:+.3f}%; W=2.41: {100 * wide.intercept_error:+.3f}% "
       f"(D-axis {100 * wide_d.intercept_error:+.3f}%); max |dw| for alpha=beta {sym:.1e}; spread {spread:.1e}")


def extrapolation_table(name, bias=None):
    s = get_surface(name)
    return {g: extrapolation_error(s, run_approach2(experiment(s, g, bias=bias)).law, 1e24)
            for g in ("XS", "S", "L", "XL")}


def test_criterion_04_extrapolation_errors():
    ch, asym, sym = (extrapolation_table(n) for n in ("chinchilla", "asymmetric", "symmetric"))
    record("4", {
        "chinchilla XS -0.3 +/- 0.2pp": abs(ch["XS"] + 0.003) <= 0.002,
        "chinchilla XL -5.1 +/- 0.2pp": abs(ch["XL"] + 0.051) <= 0.002,
        "asymmetric XS -1.7 +/- 0.5pp": abs(asym["XS"] + 0.017) <= 0.005,
        "asymmetric XL -23 +/- 0.5pp": abs(asym["XL"] + 0.23) <= 0.005,
        "symmetric 0 +/- 1e-6": max(abs(v) for v in sym.values()) <= 1e-6,
    }, "chinchilla " + ", ".join(f"{g} {100 * v:+.2f}%" for g, v in ch.items())
       + "; asymmetric " + ", ".join(f"{g} {100 * v:+.2f}%" for g, v in asym.items())
       + f"; symmetric max {max(abs(v) for v in sym.values()):.1e}")


def test_criterion_05_off_center_bias():
    s = get_surface("symmetric")
    truth = allocation_law(s)
    const = {g: run_approach2(experiment(s, g, bias=BiasSpec("constant", 3.0))).law for g in ("XS", "S", "L", "XL")}
    exp_err = max(max(abs(l.a - truth.a), abs(l.b - truth.b)) for l in const.values())
    icpt = [10.0 ** (l.b0 - truth.b0) - 1.0 for l in const.values()]
    drift = run_approach2(experiment(s, "L", bias=BiasSpec("drift", 3.0))).law
    compound = extrapolation_table("asymmetric", BiasSpec("drift", 3.0))
    worst = max(compound.values(), key=abs)
    record("5", {
        "constant(3): exponent error 0 +/- 1e-9": exp_err <= 1e-9,
        "constant(3): intercept error positive": all(v > 0 for v in icpt),
        "constant(3): intercept error decreasing in width": all(b < a for a, b in zip(icpt, icpt[1:])),
        "drift(3): exponent error nonzero": abs(drift.b - truth.b) > 1e-6,
        "compounding worst case +35 +/- 2pp": abs(worst - 0.35) <= 0.02,
    }, f"constant exp err {exp_err:.1e}, intercept errors "
       + ", ".join(f"{100 * v:.2f}%" for v in icpt)
       + f"; drift b err {drift.b - truth.b:+.2e}; compounding worst {100 * worst:+.2f}%")


def recovery_battery(fit, bound):
    worst, t0 = 0.0, time.perf_counter()
    for name in SURFACE_NAMES:
        s = get_surface(name)
        for k in SAMPLING_RANGES:
            worst = max(worst, bound(s, fit(experiment(s, k).points)))
    return worst, time.perf_counter() - t0


def test_criterion_06_parameter_recovery():
    def params(s, f):
        return float(np.max(rel_err(f.surface.as_tuple(), s.as_tuple())))

    half = grid_resolution(VpnlsConfig(variant="grid_only"))

    def cells(s, f):
        return float(np.max(np.abs(np.array([f.surface.alpha - s.alpha, f.surface.beta - s.beta])) / half))

    runs = {
        "vpnls nnls_nelder_mead": (lambda p: fit_vpnls(p, VpnlsConfig("nnls_nelder_mead")), params, 1e-9),
        "vpnls ols_quasi_newton": (lambda p: fit_vpnls(p, VpnlsConfig("ols_quasi_newton")), params, 1e-9),
        "direct analytic": (lambda p: fit_direct(p, DirectFitConfig("mle")), params, 1e-6),
        "direct finite-difference": (lambda p: fit_direct(p, DirectFitConfig("mle", gradient="fd")), params, 1e-4),
        "vpnls grid_only (half cells)": (lambda p: fit_vpnls(p, VpnlsConfig("grid_only")), cells, 1.0),
    }
    checks, parts = {}, []
    for label, (fit, bound, tol) in runs.items():
        worst, elapsed = recovery_battery(fit, bound)
        checks[f"{label} <= {tol:g}"] = worst <= tol
        checks[f"{label} < 120 s"] = elapsed < 120
        unit = "" if "cells" in label else "%"
        shown = worst if "cells" in label else 100 * worst
        parts.append(f"{label} worst {shown:.1e}{unit} in {elapsed:.1f} s")
    record("6", checks, "; ".join(parts))


def test_criterion_07_conditioning():
    s = get_surface("asymmetric")
    p = experiment(s, "L").points
    data = (p.N, p.D, p.loss)
    h5 = hessian_condition(lambda x: rss_objective_grad(x, data)[0], np.array(s.as_tuple()))
    h2 = hessian_condition(lambda x: vp_objective_ols(x[0], x[1], data), np.array([s.alpha, s.beta]), np.ones(2))
    lo, hi = h5.eigenvalues[0], h5.eigenvalues[-1]
    record("7", {
        "kappa 5D in [1e10, 1e13]": 1e10 <= h5.kappa <= 1e13,
        "kappa 2D in [2, 100]": 2 <= h2.kappa <= 100,
        "min eigenvalue within a decade of 8e-6": abs(math.log10(lo / 8e-6)) <= 1,
        "max eigenvalue within a decade of 3e6": abs(math.log10(hi / 3e6)) <= 1,
    }, f"kappa 5D {h5.kappa:.2e} (eigenvalues {lo:.2e} .. {hi:.2e}); kappa 2D {h2.kappa:.2f}")


def max_abs(rows, key, method):
    vals = [abs(r[key]) for r in rows if r["method"] == method and not math.isnan(r[key])]
    return max(vals) if vals else math.nan


@pytest.mark.slow
def test_criterion_08_noisy_exponent_inference():
    config = exponent_inference_sweep(workers=max(1, os.cpu_count() or 1))
    t0 = time.perf_counter()
    rows = run_sweep(config)
    elapsed = time.perf_counter() - t0
    cells = list(_cells(config))
    sample = np.random.default_rng(0).choice(len(cells), 24, replace=False)
    per = len(config.methods)
    repeat_ok = all(
        _run_cell(cells[i], replace(config, workers=1)) == rows[i * per:(i + 1) * per]
        for i in sample
    )
    order = ("approach2", "direct_naive", "direct_mle", "direct_lse_log", "vpnls")
    worst = {m: max_abs(rows, "a_err_rel", m) for m in order}
    worst_b = {m: max_abs(rows, "b_err_rel", m) for m in order}
    failed = {m: sum(r["status"].startswith("failed") for r in rows if r["method"] == m) for m in order}
    record("8", {
        "46,080 rows": len(rows) == 46_080,
        "< 30 min": elapsed < 1800,
        "deterministic cell re-runs": repeat_ok,
        "ordering on max |a error|": all(worst[a] > worst[b] for a, b in zip(order, order[1:])),
        "Approach 2 max >= 100%": worst["approach2"] >= 1.0,
        "VPNLS max <= 60%": worst["vpnls"] <= 0.6,
    }, f"{len(rows)} rows in {elapsed / 60:.1f} min; max |a err| "
       + ", ".join(f"{m} {100 * worst[m]:.0f}%" for m in order)
       + "; max |b err| " + ", ".join(f"{m} {100 * worst_b[m]:.0f}%" for m in order)
       + f"; failures {failed}")


def pooled_variance(rows, method):
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        if r["method"] == method and not math.isnan(r["b_hat"]):
            key = (r["grid"], r["sigma"], r["n_budgets"], r["n_points"])
            groups.setdefault(key, []).append(r["b_hat"])
    return float(np.mean([np.var(v, ddof=1) for v in groups.values() if len(v) > 1]))


@pytest.mark.slow
def test_criterion_09_data_efficiency():
    rows = run_sweep(data_efficiency_sweep(workers=max(1, os.cpu_count() or 1)))
    v_a2, v_vp, v_mle = (pooled_variance(rows, m) for m in ("approach2", "vpnls", "direct_mle"))
    r1, r2 = v_a2 / v_vp, v_vp / v_mle
    record("9", {
        "Var(A2)/Var(VPNLS) in [4, 16]": 4 <= r1 <= 16,
        "Var(VPNLS)/Var(MLE) in [0.5, 2]": 0.5 <= r2 <= 2,
    }, f"Var(A2)/Var(VPNLS) = {r1:.2f}; Var(VPNLS)/Var(MLE) = {r2:.3f} over {len(rows)} rows")


def test_criterion_10_gradient_correctness():
    rng = np.random.default_rng(10)
    p = experiment("chinchilla", "L").points
    data = (p.N, p.D, p.loss)

    def surface_params():
        return np.array([rng.uniform(1, 3), 10 ** rng.uniform(1, 3), 10 ** rng.uniform(1, 3),
                         *rng.uniform(0.1, 0.7, 2)])

    def lse_params():
        x = surface_params()
        return np.array([math.log(x[0]), math.log(x[1]), math.log(x[2]), x[3], x[4]])

    def vp(x):
        f, ga, gb = vp_objective_ols_grad(x[0], x[1], data)
        return f, np.array([ga, gb])

    worst = {
        "vp_objective_ols_grad": max(check_gradient(vp, rng.uniform(0.05, 1.0, 2)) for _ in range(100)),
        "rss_objective_grad": max(check_gradient(lambda x: rss_objective_grad(x, data), surface_params())
                                  for _ in range(100)),
        "lse_log_objective": max(check_gradient(lambda x: lse_log_objective(x, data), lse_params())
                                 for _ in range(100)),
    }
    record("10", {f"{k} <= 1e-6": v <= 1e-6 for k, v in worst.items()},
           ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


TABLE_A1_VPNLS = (1.9051, 4.0005, 1.0509, 0.3511, 0.4587)
TABLE_A1_LSE = (1.8926, 4.0146, 1.0571, 0.3522, 0.4430)


def test_criterion_11_real_data_validation_fit():
    path = real_csv("ISOFLOPFIT_CHINCHILLA_CSV")
    if path is None:
        skip("11", "real-data gate: set ISOFLOPFIT_CHINCHILLA_CSV to the digitized Chinchilla points")
    pts = ingest_csv(path, max_budget=1e21)
    vp = fit_vpnls(pts, VpnlsConfig("nnls_nelder_mead", normalize=True)).extra["normalized_surface"]
    lse = fit_direct(pts, DirectFitConfig("lse_log", normalize=True)).extra["normalized_surface"]
    lin = fit_direct(pts, DirectFitConfig("lse_linear", normalize=True)).extra["normalized_surface"]
    record("11", {
        "217 points": len(pts) == 217,
        "VPNLS row": np.max(np.abs(np.subtract(vp, TABLE_A1_VPNLS))) <= 1e-3,
        "log-loss row": np.max(np.abs(np.subtract(lse, TABLE_A1_LSE))) <= 1e-3,
        "linear loss matches VPNLS": np.max(np.abs(np.subtract(lin, vp))) <= 1e-3,
    }, f"VPNLS {np.round(vp, 4)}, log-loss {np.round(lse, 4)}, linear {np.round(lin, 4)}")


def test_criterion_12_qc_pipeline():
    idem = complete = perm_ok = True
    for seed in range(40):
        pts = add_noise(experiment("chinchilla", ("S", "L", "XL")[seed % 3]), NoiseSpec(0.01 + 0.01 * (seed % 3), seed)).points
        clean, report = run_qc(pts)
        again, rep2 = run_qc(clean)
        idem &= rep2.n_removed == 0 and np.array_equal(again.loss, clean.loss)
        kept = {c for c, s in report.budget_status.items() if s == "kept"}
        complete &= (
            report.point_status.shape == (len(pts),)
            and set(report.point_status) <= set(POINT_STATUSES)
            and set(report.budget_status) == set(pts.budgets.tolist())
            and len(clean) == sum(s == "clean" and c in kept for s, c in zip(report.point_status, pts.budget))
        )
        perm = np.random.default_rng(seed + 1000).permutation(len(pts))
        shuffled, rep3 = run_qc(pts.subset(perm))
        perm_ok &= np.array_equal(rep3.point_status, report.point_status[perm])
        perm_ok &= sorted(zip(shuffled.budget, shuffled.loss)) == sorted(zip(clean.budget, clean.loss))
    record("12", {
        "idempotence": idem, "annotation completeness": complete, "permutation invariance": perm_ok,
    }, "40 noisy synthetic experiments; real-data gates reported as 12-chinchilla and 12-llama")


def real_dcl(pts, C, qc):
    reference = run_method("direct_lse_log", pts, normalize=True).surface
    used = run_qc(pts)[0] if qc else pts
    law = run_method("approach2", used).law
    return law, dcl(reference, law, C)


def test_criterion_12_real_chinchilla_progressive_dcl():
    path = real_csv("ISOFLOPFIT_CHINCHILLA_CSV")
    if path is None:
        skip("12-chinchilla", "real-data gate: set ISOFLOPFIT_CHINCHILLA_CSV")
    pts = ingest_csv(path, max_budget=1e21)
    _, raw = real_dcl(pts, 5.8e23, qc=False)
    _, post = real_dcl(pts, 5.8e23, qc=True)
    record("12-chinchilla", {
        "raw DCL 37.9 +/- 2pp": abs(raw.dcl_pct - 0.379) <= 0.02,
        "post-QC DCL 12.5 +/- 2pp": abs(post.dcl_pct - 0.125) <= 0.02,
    }, f"raw {100 * raw.dcl_pct:.1f}%, post-QC {100 * post.dcl_pct:.1f}%")


def test_criterion_12_real_llama():
    path = real_csv("ISOFLOPFIT_LLAMA_CSV")
    if path is None:
        skip("12-llama", "real-data gate: set ISOFLOPFIT_LLAMA_CSV")
    pts = ingest_csv(path)
    law, report = real_dcl(pts, 3.8e25, qc=False)
    record("12-llama", {
        "b = 0.537 +/- 0.001": abs(law.b - 0.537) <= 1e-3,
        "DCL 6.5 +/- 1pp": abs(report.dcl_pct - 0.065) <= 0.01,
        "dollars about $1.4M": abs(report.dollars - 1.4e6) <= 0.3e6,
    }, f"b {law.b:.4f}, DCL {100 * report.dcl_pct:.2f}%, ${report.dollars:,.0f}")


def test_criterion_13_statistical_tests():
    rng = np.random.default_rng(13)
    checks, parts = {}, []
    rounds = 4000
    for i in range(3):
        groups = [rng.normal(0.0, 1.0, 25), rng.normal(0.35, 1.0, 25), rng.normal(0.0, 1.6, 25)]
        r = residual_tests(groups)
        kw = permutation_p(groups, kw_statistic, rounds, rng)
        lev = permutation_p(groups, levene_statistic, rounds, rng)
        for label, p, q in (("Kruskal-Wallis", r.kruskal_wallis_p, kw), ("Levene", r.levene_p, lev)):
            mc = 4.0 * math.sqrt(max(q * (1 - q), 1e-4) / rounds)
            checks[f"{label} dataset {i}"] = abs(p - q) <= mc + 0.02
            parts.append(f"{label}[{i}] {p:.3f} vs {q:.3f}")
    same = residual_tests([[2.0] * 5, [2.0] * 5, [2.0] * 5])
    checks["identical groups p = 1"] = same.kruskal_wallis_p == 1.0 and same.levene_p == 1.0
    record("13", checks, "; ".join(parts))
