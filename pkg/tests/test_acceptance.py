"""Acceptance gate: every criterion at its stated tolerance, desk scale
(200 Monte Carlo replicates, B = 500). Run with `pytest tests/test_acceptance.py -s`
to see one pass/fail line per criterion."""

import numpy as np
import pytest

import asynclc as a
from asynclc import (
    Bandwidths,
    DgpConfig,
    EstimatorConfig,
    McConfig,
    MultiplierLaw,
    bandwidth_rule,
    bootstrap_replicate,
    fit_curve,
    generate_dataset,
    kernel_weighted_residuals,
    percentile_order_stat,
    q_hat,
    run_monte_carlo,
    subject_terms,
)
from asynclc.kernels import eval_bi, eval_scaled_bi, eval_scaled_uni, eval_uni

from helpers import (
    centering_oracle,
    gamma_oracle,
    manual_centered,
    one_step_oracle,
    tiny_dataset,
    vcm_oracle,
)
from test_estimators import linear_model_dataset
from test_kernels import edge_midcell_grid

REPS = 200
SCB_B = 500


def report(criterion, ok, detail):
    print(f"[criterion {criterion}] {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {criterion}: {detail}"


def rows_by(report_obj, estimator, block, time=None):
    out = [
        r
        for r in report_obj.pointwise
        if r.estimator == estimator and r.block == block and (time is None or r.time == time)
    ]
    return out[0] if time is not None else out


@pytest.fixture(scope="module")
def pointwise_400():
    n = 400
    h6, h5, h45 = bandwidth_rule(n, 0.6), bandwidth_rule(n, 0.5), bandwidth_rule(n, 0.45)
    mc = McConfig(
        replicates=REPS,
        estimators=(
            EstimatorConfig(label="ts-h6", method="two-step-centering", h=h6, h1=h5, h2=h5),
            EstimatorConfig(label="os-h45", method="one-step", h1=h45, h2=h45),
            EstimatorConfig(label="os-h5", method="one-step", h1=h5, h2=h5),
            EstimatorConfig(label="ts-h5", method="two-step-centering", h=h5, h1=h5, h2=h5),
        ),
        eval_times=(0.3, 0.6, 0.9),
        base_seed=2024,
    )
    return run_monte_carlo(mc, DgpConfig(n=n, setting="i", seed=0))


@pytest.fixture(scope="module")
def curves_400():
    n = 400
    h6, h5, h45 = bandwidth_rule(n, 0.6), bandwidth_rule(n, 0.5), bandwidth_rule(n, 0.45)
    mc = McConfig(
        replicates=REPS,
        estimators=(
            EstimatorConfig(label="ts-h6", method="two-step-centering", h=h6, h1=h5, h2=h5,
                            curve_metrics=True, scb_targets=("beta", "gamma")),
            EstimatorConfig(label="os-h45", method="one-step", h1=h45, h2=h45,
                            curve_metrics=True),
        ),
        eval_times=(0.6,),
        scb_b=SCB_B,
        scb_law=MultiplierLaw.STANDARD_NORMAL,  # see decisions ledger: Table-2 provenance
        base_seed=2025,
    )
    return run_monte_carlo(mc, DgpConfig(n=n, setting="i", seed=0))


@pytest.fixture(scope="module")
def two_step_900():
    n = 900
    mc = McConfig(
        replicates=REPS,
        estimators=(
            EstimatorConfig(label="ts-h6", method="two-step-centering",
                            h=bandwidth_rule(n, 0.6),
                            h1=bandwidth_rule(n, 0.5), h2=bandwidth_rule(n, 0.5)),
        ),
        eval_times=(0.6,),
        base_seed=2026,
    )
    return run_monte_carlo(mc, DgpConfig(n=n, setting="i", seed=0))


@pytest.fixture(scope="module")
def one_step_900_setting2():
    n = 900
    h45 = bandwidth_rule(n, 0.45)
    mc = McConfig(
        replicates=REPS,
        estimators=(EstimatorConfig(label="os-h45", method="one-step", h1=h45, h2=h45),),
        eval_times=(0.3,),
        base_seed=2027,
    )
    return run_monte_carlo(mc, DgpConfig(n=n, setting="ii", seed=0))


def test_criterion_1_table1_two_step_pointwise(pointwise_400):
    row = rows_by(pointwise_400, "ts-h6", "beta", 0.6)
    ratio = row.se_mean / row.sd
    ok = (
        abs(row.bias - 0.003) <= 0.025
        and 0.104 <= row.sd <= 0.156
        and 0.85 <= ratio <= 1.10
        and 89.0 <= row.cp_pct <= 96.0
    )
    report(1, ok, f"bias={row.bias:.4f} sd={row.sd:.4f} se/sd={ratio:.3f} cp={row.cp_pct:.1f}")


def test_criterion_2_table1_one_step_pointwise(pointwise_400):
    beta = rows_by(pointwise_400, "os-h45", "beta", 0.6)
    gamma = rows_by(pointwise_400, "os-h45", "gamma", 0.6)
    ok = (
        abs(beta.bias - 0.002) <= 0.025
        and abs(gamma.bias - 0.033) <= 0.03
        and 87.0 <= gamma.cp_pct <= 95.0
    )
    report(2, ok, f"beta bias={beta.bias:.4f} gamma bias={gamma.bias:.4f} gamma cp={gamma.cp_pct:.1f}")


def test_criterion_3_two_step_more_efficient(pointwise_400):
    wins = 0
    pairs = []
    for t in (0.3, 0.6, 0.9):
        sd_ts = rows_by(pointwise_400, "ts-h5", "beta", t).sd
        sd_os = rows_by(pointwise_400, "os-h5", "beta", t).sd
        wins += sd_ts < sd_os
        pairs.append(f"t={t}: {sd_ts:.4f} vs {sd_os:.4f}")
    report(3, wins >= 2, f"two-step beta SD smaller at {wins}/3 points ({'; '.join(pairs)})")


def test_criterion_4_table2_simultaneous_coverage(curves_400):
    curves = {(r.estimator, r.block): r for r in curves_400.curves}
    ts_beta = curves[("ts-h6", "beta")]
    ts_gamma = curves[("ts-h6", "gamma")]
    os_beta = curves[("os-h45", "beta")]
    ok = (
        91.0 <= ts_beta.scb_pct <= 98.0
        and 89.0 <= ts_gamma.scb_pct <= 97.0
        and os_beta.ci_sim_pct < 35.0
        and 0.8 * 0.134 <= ts_beta.rase_mean <= 1.2 * 0.134
    )
    report(
        4,
        ok,
        f"two-step SCB beta={ts_beta.scb_pct:.1f} gamma={ts_gamma.scb_pct:.1f}; "
        f"one-step beta CI={os_beta.ci_sim_pct:.1f}; two-step beta RASE={ts_beta.rase_mean:.4f}",
    )


def test_criterion_5_table_s2_spot_check(one_step_900_setting2):
    row = rows_by(one_step_900_setting2, "os-h45", "beta", 0.3)
    ok = abs(row.bias - 0.002) <= 0.02 and 91.0 <= row.cp_pct <= 97.0
    report(5, ok, f"bias={row.bias:.4f} cp={row.cp_pct:.1f}")


def test_criterion_6_convergence_rate(pointwise_400, two_step_900):
    sd_400 = rows_by(pointwise_400, "ts-h6", "beta", 0.6).sd
    sd_900 = rows_by(two_step_900, "ts-h6", "beta", 0.6).sd
    ratio = sd_900 / sd_400
    report(6, 0.70 <= ratio <= 0.95, f"sd(900)/sd(400) = {sd_900:.4f}/{sd_400:.4f} = {ratio:.3f}")


def test_invariant_se_calibration(pointwise_400):
    # mean SE / SD within [0.8, 1.2] at every evaluation time for 200-rep runs
    worst = (None, 1.0)
    for row in pointwise_400.pointwise:
        ratio = row.se_mean / row.sd
        if abs(ratio - 1.0) > abs(worst[1] - 1.0):
            worst = (f"{row.estimator}/{row.block}@{row.time:g}", ratio)
        assert 0.8 <= ratio <= 1.2, f"{row.estimator} {row.block} t={row.time}: se/sd={ratio:.3f}"
    print(f"[invariant] SE calibration PASS - worst se/sd {worst[1]:.3f} at {worst[0]}")


def test_invariant_bias_consistency(pointwise_400, two_step_900):
    # bias at n=900 <= bias at n=400 + 2 combined Monte Carlo SEs
    small = rows_by(pointwise_400, "ts-h6", "beta", 0.6)
    large = rows_by(two_step_900, "ts-h6", "beta", 0.6)
    slack = 2.0 * np.hypot(small.sd / np.sqrt(small.n_used), large.sd / np.sqrt(large.n_used))
    ok = large.bias <= small.bias + slack
    print(f"[invariant] bias consistency {'PASS' if ok else 'FAIL'} - "
          f"{large.bias:.4f} <= {small.bias:.4f} + {slack:.4f}")
    assert ok


def test_criterion_7_oracle_equivalence():
    wide = 2.0
    rng = np.random.default_rng(7007)
    checked = {"one-step": 0, "centering": 0, "vcm": 0, "second-step": 0}
    beta_fn = lambda ts: np.column_stack([np.sin(ts) + 0.5])
    for _ in range(20):
        ds = tiny_dataset(rng)
        t = float(rng.uniform(0.3, 0.7))
        est = a.fit_one_step(ds, t, wide, wide)
        np.testing.assert_allclose(est.solution, one_step_oracle(ds, t, wide, wide),
                                   atol=1e-8, rtol=1e-8)
        checked["one-step"] += 1
        centered = a.center(ds, wide)
        est = a.fit_centering(centered, t, wide)
        np.testing.assert_allclose(est.solution, centering_oracle(centered, t, wide),
                                   atol=1e-8, rtol=1e-8)
        checked["centering"] += 1
        est = a.fit_vcm(ds, t, wide)
        np.testing.assert_allclose(est.solution, vcm_oracle(ds, t, wide), atol=1e-8, rtol=1e-8)
        checked["vcm"] += 1
        if ds.p == 1:
            est = a.fit_gamma_second_step(ds, beta_fn, t, wide, wide)
            np.testing.assert_allclose(est.solution, gamma_oracle(ds, beta_fn, t, wide, wide),
                                       atol=1e-8, rtol=1e-8)
            checked["second-step"] += 1
    while checked["second-step"] < 20:
        ds = tiny_dataset(rng, p=1)
        t = float(rng.uniform(0.3, 0.7))
        est = a.fit_gamma_second_step(ds, beta_fn, t, wide, wide)
        np.testing.assert_allclose(est.solution, gamma_oracle(ds, beta_fn, t, wide, wide),
                                   atol=1e-8, rtol=1e-8)
        checked["second-step"] += 1
    report(7, all(v >= 20 for v in checked.values()),
           "all four local fits match the independent weighted-LS oracle on 20 instances: "
           + ", ".join(f"{k}={v}" for k, v in checked.items()))


def test_criterion_8_exact_recovery():
    wide = 2.0
    rng = np.random.default_rng(8008)
    worst = 0.0
    # one-step: noiseless linear response, inert asynchronous covariate
    coef = np.array([1.5, -2.0])
    ds = linear_model_dataset(rng, n=4, p=2, q=1, coef=coef)
    est = a.fit_one_step(ds, 0.5, wide, wide)
    worst = max(worst, np.abs(est.block("beta") - coef).max(), np.abs(est.block("gamma")).max())
    # centering: exactly linear centered response
    base = tiny_dataset(rng, n=3, p=2, q=1)
    centered = manual_centered(base, [s.sync_covariates @ coef for s in base.subjects],
                               [s.sync_covariates for s in base.subjects])
    worst = max(worst, np.abs(a.fit_centering(centered, 0.5, wide).coef - coef).max())
    # second step: constant gamma, time-constant Z, true beta supplied
    gamma_c = 0.8
    beta_fn = lambda ts: np.column_stack([2.0 * ts + 1.0])
    subjects = []
    for i in range(4):
        t = np.sort(rng.uniform(0, 1, 4))
        x = rng.normal(size=(4, 1))
        z_const = rng.normal()
        y = x[:, 0] * (2.0 * t + 1.0) + z_const * gamma_c
        subjects.append(a.SubjectRecord(str(i), t, y, x, np.sort(rng.uniform(0, 1, 3)),
                                        np.full((3, 1), z_const)))
    ds2 = a.LongitudinalDataset(tuple(subjects), p=1, q=1)
    worst = max(worst, abs(a.fit_gamma_second_step(ds2, beta_fn, 0.5, wide, wide).coef[0] - gamma_c))
    # constant coefficients: exact proportional centered response
    base2 = tiny_dataset(rng, n=3, p=1, q=1)
    centered2 = manual_centered(base2, [1.75 * s.sync_covariates[:, 0] for s in base2.subjects],
                                [s.sync_covariates for s in base2.subjects])
    worst = max(worst, abs(a.fit_constant_coefficients(centered2, h=wide).beta[0] - 1.75))
    report(8, worst <= 1e-8, f"max recovery error across zero-residual fits = {worst:.2e}")


def test_criterion_9_wild_bootstrap_identity():
    ds = generate_dataset(DgpConfig(n=60, setting="i", seed=11), np.random.default_rng(11))
    curve = fit_curve(ds, "one-step", Bandwidths(h1=0.25, h2=0.25),
                      grid=np.linspace(0.2, 0.8, 13))
    idx = np.flatnonzero(curve.ok)
    terms, expected = [], []
    for g in idx:
        t = float(curve.grid[g])
        bundle = kernel_weighted_residuals(ds, curve.first_stage[g], t, 0.25, 0.25)
        terms.append(subject_terms(bundle, "gamma"))
        expected.append(q_hat(ds, bundle, t, "gamma"))
    process = bootstrap_replicate(terms, np.ones(ds.n))
    bit_exact = np.array_equal(process, np.stack(expected))
    sups = np.random.default_rng(9).exponential(size=SCB_B)
    monotone = percentile_order_stat(sups, 0.01) >= percentile_order_stat(sups, 0.05)
    report(9, bit_exact and monotone,
           f"u=1 reproduces the band process bit-exactly at {len(idx)} grid points; "
           f"c_alpha nonincreasing in alpha: {monotone}")


def test_criterion_10_kernel_quadrature():
    families = ["epanechnikov", "uniform"]
    uni_grid = edge_midcell_grid(1.0, 20000)
    bi_grid = edge_midcell_grid(1.0, 2000)
    uni_err = max(
        abs(np.trapezoid(eval_uni(f, uni_grid), uni_grid) - 1.0) for f in families
    )
    bi_err = 0.0
    for f in families:
        vals = eval_bi(f, bi_grid[:, None], bi_grid[None, :])
        bi_err = max(bi_err, abs(np.trapezoid(np.trapezoid(vals, bi_grid, axis=1), bi_grid) - 1.0))
    sym = all(
        np.array_equal(eval_uni(f, u), eval_uni(f, -u))
        for f in families
        for u in [np.linspace(-1.5, 1.5, 301)]
    )
    moment = max(abs(np.trapezoid(uni_grid * eval_uni(f, uni_grid), uni_grid)) for f in families)
    ok = uni_err < 1e-6 and bi_err < 1e-5 and sym and moment < 1e-10
    report(10, ok, f"uni err={uni_err:.2e} bi err={bi_err:.2e} symmetric={sym} "
                   f"first moment={moment:.2e}")
