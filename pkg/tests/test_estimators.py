import math

import numpy as np
import pytest

from harnack_lab.bounds import GapPair, bound_entropy_with_tail, lemma_rhs
from harnack_lab.coefficients import builtin_system, with_scaled_sigma
from harnack_lab.coupling import GammaSchedule
from harnack_lab.estimators import (MCEstimate, check_log_harnack,
                                    check_power_harnack, estimate_PT_f,
                                    estimate_entropy_Q,
                                    estimate_exp_functional,
                                    estimate_martingale_mean, make_verdict,
                                    merged_fraction,
                                    sample_stationary_segments)
from harnack_lab.estimators import TestFunction as ObsFn
from harnack_lab.estimators import test_function as catalog_fn
from harnack_lab.segment_paths import GridSpec, constant_segment


def linear(a=-1.0, c=0.5, s0=1.0):
    return builtin_system("linear_additive", {"a": a, "c": c, "s0": s0})


def sine(a=-1.0, c=0.2, s0=0.1):
    return builtin_system("sine_multiplicative", {"a": a, "c": c, "s0": s0})


def setup(m=100, T=2.0):
    grid = GridSpec(1.0, T, m)
    xi = constant_segment(1.0, 1.0, m)
    eta = constant_segment(0.0, 1.0, m)
    return grid, xi, eta


def sched_for(co, t0=1.0, theta=1.0):
    return GammaSchedule(theta=theta, k4=co.constants.k4, t0=t0)


ONE = ObsFn(name="one", fn=lambda segs: np.ones(segs.shape[0]),
                   lower=1.0, upper=1.0)


# -------------------------------------------------------------- functions

def test_function_catalog_quad_cap():
    f = catalog_fn("quad_cap", 100.0)
    segs = np.zeros((3, 5, 1))
    segs[0, -1, 0] = 2.0
    segs[1, -1, 0] = -30.0
    np.testing.assert_allclose(f(segs), [5.0, 101.0, 1.0])
    assert f.lower == 1.0 and f.upper == 101.0


def test_function_catalog_exp_cap():
    f = catalog_fn("exp_cap", 3.0)
    segs = np.zeros((2, 4, 1))
    segs[0, 1, 0] = 2.0
    segs[1, 2, 0] = -9.0
    np.testing.assert_allclose(f(segs), [math.exp(2.0), math.exp(3.0)])
    with pytest.raises(ValueError):
        catalog_fn("exp_cap", 1e4)
    with pytest.raises(ValueError):
        catalog_fn("quad_cap", 0.0)
    with pytest.raises(ValueError):
        catalog_fn("mystery")


def test_function_range_enforced():
    bad = ObsFn(name="escapes", fn=lambda segs: np.full(segs.shape[0], 7.0),
                       lower=1.0, upper=2.0)
    with pytest.raises(ValueError, match="range"):
        bad(np.zeros((2, 3, 1)))
    nonfinite = ObsFn(name="nan", lower=0.0, upper=1.0,
                             fn=lambda segs: np.full(segs.shape[0], np.nan))
    with pytest.raises(FloatingPointError):
        nonfinite(np.zeros((2, 3, 1)))


# -------------------------------------------------------------- P_T f

def test_pt_f_constant_function():
    co = linear()
    grid, xi, _ = setup(m=20, T=1.0)
    est = estimate_PT_f(co, xi, ONE, grid, n=64, seed=0)
    assert est.mean == 1.0
    assert est.std_error == 0.0
    assert est.n == 64


def test_pt_f_ou_second_moment():
    co = builtin_system("ou_nodelay", {"a": 1.0, "s0": 1.0})
    grid = GridSpec(1.0, 1.0, 200)
    xi = constant_segment(1.0, 1.0, 200)
    f = ObsFn(name="endpoint_sq",
                     fn=lambda segs: np.minimum((segs[:, -1, :] ** 2).sum(axis=1), 1e6),
                     lower=0.0, upper=1e6)
    est = estimate_PT_f(co, xi, f, grid, n=100000, seed=7)
    want = math.exp(-2.0) + (1.0 - math.exp(-2.0)) / 2.0
    assert abs(est.mean - want) < 4 * est.std_error + 3e-3  # small h bias allowance
    assert est.std_error < 0.01


def test_pt_f_deterministic_ode():
    co = with_scaled_sigma(linear(a=-1.0, c=0.0), 0.0)
    grid = GridSpec(1.0, 1.0, 1000)
    xi = constant_segment(1.0, 1.0, 1000)
    f = ObsFn(name="endpoint", fn=lambda segs: segs[:, -1, 0],
                     lower=-10.0, upper=10.0)
    est = estimate_PT_f(co, xi, f, grid, n=2, seed=0)
    assert est.mean == pytest.approx(math.exp(-1.0), abs=1e-3)
    assert est.std_error == 0.0


def test_pt_f_se_scales_with_sqrt_n():
    co = linear()
    grid, xi, _ = setup(m=50, T=1.0)
    f = catalog_fn("quad_cap", 100.0)
    a = estimate_PT_f(co, xi, f, grid, n=2000, seed=3)
    b = estimate_PT_f(co, xi, f, grid, n=8000, seed=3)
    assert a.std_error / b.std_error == pytest.approx(2.0, rel=0.2)


def test_pt_f_validation():
    co = linear()
    grid, xi, _ = setup(m=20, T=1.0)
    with pytest.raises(ValueError):
        estimate_PT_f(co, xi, ONE, grid, n=1, seed=0)
    with pytest.raises(ValueError):
        estimate_PT_f(co, constant_segment(1.0, 1.0, 19), ONE, grid, n=4, seed=0)


# -------------------------------------------------------------- entropy

def test_entropy_zero_for_equal_starts():
    co = sine()
    grid, xi, _ = setup(m=40)
    est = estimate_entropy_Q(co, xi, xi, sched_for(co), grid, n=32, seed=0)
    assert est.mean == 0.0
    assert est.std_error == 0.0
    assert est.failures == 0


def test_entropy_below_closed_form_bound():
    co = linear()
    grid, xi, eta = setup(m=100)
    est = estimate_entropy_Q(co, xi, eta, sched_for(co), grid, n=1000, seed=5)
    bound = bound_entropy_with_tail(co.constants, 1.0, 1.0,
                                    GapPair.from_segments(xi, eta))
    assert est.mean + 3 * est.std_error <= bound


def test_entropy_se_halves_when_n_quadruples():
    co = sine()
    grid, xi, eta = setup(m=50)
    a = estimate_entropy_Q(co, xi, eta, sched_for(co), grid, n=1000, seed=9)
    b = estimate_entropy_Q(co, xi, eta, sched_for(co), grid, n=4000, seed=9)
    assert a.std_error > 0
    assert a.std_error / b.std_error == pytest.approx(2.0, rel=0.2)


def test_entropy_respects_t_upper():
    co = linear()
    grid, xi, eta = setup(m=100)
    full = estimate_entropy_Q(co, xi, eta, sched_for(co), grid, n=8, seed=1)
    part = estimate_entropy_Q(co, xi, eta, sched_for(co), grid, n=8, seed=1,
                              t_upper=0.5)
    assert 0 < part.mean < full.mean
    with pytest.raises(ValueError):
        estimate_entropy_Q(co, xi, eta, sched_for(co), grid, n=8, seed=1,
                           t_upper=0.123456)


# -------------------------------------------------------------- exp moments

def test_exp_functional_trivial_cases():
    co = sine()
    grid, xi, eta = setup(m=40)
    z = estimate_exp_functional(co, xi, eta, sched_for(co), grid, lam=0.0,
                                n=16, seed=0)
    assert z.mean == 1.0 and z.std_error == 0.0
    same = estimate_exp_functional(co, xi, xi, sched_for(co), grid, lam=2.0,
                                   n=16, seed=0)
    assert same.mean == 1.0 and same.std_error == 0.0


def test_exp_functional_seg_gap_vs_lemma_on_linear():
    # K2 = 0 collapses the quadratic term; the bound is exp(2 s lam |gap|^2)
    co = linear()
    grid, xi, eta = setup(m=100)
    lam = 0.125
    est = estimate_exp_functional(co, xi, eta, sched_for(co), grid, lam=lam,
                                  n=64, seed=2, integrand="seg_gap_sq",
                                  t_upper=1.0)
    rhs = lemma_rhs("seg_gap_integral", co.constants,
                    GapPair.from_segments(xi, eta), lam=lam, s=1.0)
    assert est.mean + 3 * est.std_error <= rhs.value


def test_exp_functional_gap_over_gamma_needs_pre_deadline_cap():
    co = linear()
    grid, xi, eta = setup(m=50)
    est = estimate_exp_functional(co, xi, eta, sched_for(co), grid, lam=0.01,
                                  n=8, seed=0, integrand="gap_over_gamma_sq",
                                  t_upper=1.0)
    assert math.isfinite(est.mean) and est.mean >= 1.0
    with pytest.raises(ValueError):
        estimate_exp_functional(co, xi, eta, sched_for(co), grid, lam=0.01,
                                n=8, seed=0, integrand="gap_over_gamma_sq",
                                t_upper=1.5)
    with pytest.raises(ValueError):
        estimate_exp_functional(co, xi, eta, sched_for(co), grid, lam=1.0,
                                n=8, seed=0, integrand="bogus")


def test_exp_functional_overflow_reports_path():
    co = linear()
    grid, xi, eta = setup(m=50)
    with pytest.raises(OverflowError, match="path"):
        estimate_exp_functional(co, xi, eta, sched_for(co), grid, lam=1000.0,
                                n=8, seed=0)


def test_exp_functional_negative_lam_rejected():
    co = linear()
    grid, xi, eta = setup(m=50)
    with pytest.raises(ValueError):
        estimate_exp_functional(co, xi, eta, sched_for(co), grid, lam=-0.5,
                                n=8, seed=0)


# -------------------------------------------------------------- martingale

@pytest.mark.parametrize("name,params", [
    ("linear_additive", {"a": -1.0, "c": 0.5, "s0": 1.0}),
    ("sine_multiplicative", {"a": -1.0, "c": 0.2, "s0": 0.1}),
    ("ou_nodelay", {"a": 1.0, "s0": 1.0}),
])
def test_weight_mean_is_one(name, params):
    co = builtin_system(name, params)
    grid, xi, eta = setup(m=100)
    est = estimate_martingale_mean(co, xi, eta, sched_for(co), grid,
                                   n=20000, seed=17)
    assert abs(est.mean - 1.0) <= 4 * est.std_error
    assert est.failures == 0
    assert merged_fraction(est) == 1.0
    assert "max_log_weight" in est.diagnostics


def test_weight_mean_deterministic_across_threads():
    co = sine()
    grid, xi, eta = setup(m=50)
    a = estimate_martingale_mean(co, xi, eta, sched_for(co), grid, n=20000,
                                 seed=3, threads=1)
    b = estimate_martingale_mean(co, xi, eta, sched_for(co), grid, n=20000,
                                 seed=3, threads=8)
    assert a.mean == b.mean
    assert a.std_error == b.std_error


def test_thread_env_fallback(monkeypatch):
    co = linear()
    grid, xi, eta = setup(m=40)
    base = estimate_entropy_Q(co, xi, eta, sched_for(co), grid, n=9000, seed=4)
    monkeypatch.setenv("HARNACK_LAB_THREADS", "4")
    env4 = estimate_entropy_Q(co, xi, eta, sched_for(co), grid, n=9000, seed=4)
    assert base.mean == env4.mean
    monkeypatch.setenv("HARNACK_LAB_THREADS", "zero point five")
    with pytest.raises(ValueError):
        estimate_entropy_Q(co, xi, eta, sched_for(co), grid, n=9000, seed=4)


# -------------------------------------------------------------- verdicts

def mk(mean, se, n=100, seed=0, failures=0):
    return MCEstimate(mean=mean, std_error=se, n=n, seed=seed,
                      diagnostics={"failures": failures})


def test_verdict_rule_bands():
    assert make_verdict("c", mk(1.0, 0.1), mk(1.2, 0.0), 1.2).verdict == "holds"
    assert make_verdict("c", mk(1.25, 0.1), mk(1.2, 0.0), 1.2).verdict == "holds"
    # between 3 and 6 SE of violation: inconclusive
    r = make_verdict("c", mk(1.6, 0.1), mk(1.2, 0.0), 1.2)
    assert r.verdict == "inconclusive"
    assert make_verdict("c", mk(2.0, 0.1), mk(1.2, 0.0), 1.2).verdict == "violated"


def test_verdict_custom_multipliers():
    r = make_verdict("c", mk(1.5, 0.1), mk(1.2, 0.0), 1.2, k_tol=4.0, k_viol=5.0)
    assert r.verdict == "holds"
    r2 = make_verdict("c", mk(1.8, 0.1), mk(1.2, 0.0), 1.2, k_tol=4.0, k_viol=5.0)
    assert r2.verdict == "violated"


def test_verdict_zero_se_degenerate():
    assert make_verdict("c", mk(1.0, 0.0), mk(2.0, 0.0), 2.0).margin_se == math.inf
    assert make_verdict("c", mk(2.0, 0.0), mk(1.0, 0.0), 1.0).margin_se == -math.inf
    assert make_verdict("c", mk(1.0, 0.0), mk(1.0, 0.0), 1.0).margin_se == 0.0
    assert make_verdict("c", mk(1.0, 0.0), mk(1.0, 0.0), 1.0).verdict == "holds"


def test_verdict_nan_margin_inconclusive():
    r = make_verdict("c", mk(math.nan, 0.1), mk(1.0, 0.0), 1.0)
    assert r.verdict == "inconclusive"


def test_verdict_failure_fraction_forces_inconclusive():
    r = make_verdict("c", mk(0.5, 0.1), mk(2.0, 0.0), 2.0,
                     failure_fraction=0.002)
    assert r.verdict == "inconclusive"
    ok = make_verdict("c", mk(0.5, 0.1), mk(2.0, 0.0), 2.0,
                      failure_fraction=0.0005)
    assert ok.verdict == "holds"


def test_verdict_two_sided_folds_margin():
    hi = make_verdict("c", mk(0.5, 0.1), mk(1.0, 0.0), 1.0, two_sided=True)
    assert hi.margin_se == pytest.approx(-5.0)
    assert hi.verdict == "inconclusive"
    lo = make_verdict("c", mk(1.5, 0.1), mk(1.0, 0.0), 1.0, two_sided=True)
    assert lo.margin_se == pytest.approx(-5.0)
    near = make_verdict("c", mk(1.01, 0.1), mk(1.0, 0.0), 1.0, two_sided=True)
    assert near.verdict == "holds"


# -------------------------------------------------------------- checks

def test_log_harnack_jensen_control():
    co = linear()
    grid, xi, _ = setup(m=50)
    f = catalog_fn("quad_cap", 100.0)
    rep = check_log_harnack(co, xi, xi, f, 2.0, grid, n=4000, seed=2)
    assert rep.verdict == "holds"
    assert rep.bound == 0.0
    assert rep.margin_se > 0


def test_log_harnack_distinct_starts_holds():
    co = linear()
    grid, xi, eta = setup(m=100)
    f = catalog_fn("quad_cap", 100.0)
    rep = check_log_harnack(co, xi, eta, f, 2.0, grid, n=4000, seed=2)
    assert rep.verdict == "holds"
    assert rep.bound > 0
    assert rep.meta["s_star"] > 0


def test_log_harnack_s_choice_is_honored():
    co = linear()
    grid, xi, eta = setup(m=100)
    f = catalog_fn("quad_cap", 100.0)
    free = check_log_harnack(co, xi, eta, f, 2.0, grid, n=500, seed=2)
    fixed = check_log_harnack(co, xi, eta, f, 2.0, grid, n=500, seed=2,
                              s_choice=0.25)
    assert fixed.bound >= free.bound - 1e-12
    assert fixed.meta["s_star"] == pytest.approx(0.25)


def test_log_harnack_needs_room_past_delay():
    co = linear()
    grid, xi, eta = setup(m=50, T=1.0)
    f = catalog_fn("quad_cap", 100.0)
    with pytest.raises(ValueError, match="r0"):
        check_log_harnack(co, xi, eta, f, 1.0, grid, n=16, seed=0)


def test_log_harnack_requires_f_at_least_one():
    co = linear()
    grid, xi, eta = setup(m=50)
    f = ObsFn(name="small", fn=lambda segs: np.full(segs.shape[0], 0.5),
                     lower=0.5, upper=0.5)
    with pytest.raises(ValueError, match=">= 1"):
        check_log_harnack(co, xi, eta, f, 2.0, grid, n=16, seed=0)


def test_power_harnack_trivial_f():
    co = sine()
    grid, xi, eta = setup(m=50)
    rep = check_power_harnack(co, xi, eta, ONE, 16.0, 2.0, grid, n=64, seed=0)
    assert rep.verdict == "holds"
    assert rep.margin_se == math.inf


def test_power_harnack_threshold_enforced():
    co = sine()
    grid, xi, eta = setup(m=50)
    f = catalog_fn("quad_cap", 100.0)
    with pytest.raises(ValueError, match="9"):
        check_power_harnack(co, xi, eta, f, 9.0, 2.0, grid, n=16, seed=0)


# -------------------------------------------------------------- stationary

def test_stationary_moments_loose():
    co = builtin_system("ou_nodelay", {"a": 1.0, "s0": 1.0})
    grid = GridSpec(1.0, 2.0, 100)
    s = sample_stationary_segments(co, grid, n=2000, burn_in=10.0, seed=0)
    assert s.endpoint_var[0] == pytest.approx(0.5, rel=0.15)
    assert s.lag_r0_autocov[0] == pytest.approx(0.5 / math.e, rel=0.3)
    assert s.n == 2000
    assert len(s.segments) == 2000
    assert s.segments[0].m == grid.m


def test_stationary_deterministic_contraction():
    co = with_scaled_sigma(builtin_system("ou_nodelay", {"a": 1.0, "s0": 1.0}), 0.0)
    grid = GridSpec(1.0, 2.0, 50)
    s = sample_stationary_segments(co, grid, n=64, burn_in=10.0, seed=0)
    for seg in s.segments[:5]:
        np.testing.assert_allclose(seg.values, 0.0, atol=1e-300)
    assert s.endpoint_var[0] == 0.0


def test_stationary_rejects_delay_systems():
    co = linear()
    grid = GridSpec(1.0, 2.0, 50)
    with pytest.raises(ValueError, match="delay"):
        sample_stationary_segments(co, grid, n=16, seed=0)


def test_stationary_reproducible():
    co = builtin_system("ou_nodelay", {"a": 1.0, "s0": 1.0})
    grid = GridSpec(1.0, 2.0, 40)
    a = sample_stationary_segments(co, grid, n=300, seed=8)
    b = sample_stationary_segments(co, grid, n=300, seed=8)
    assert a.endpoint_var[0] == b.endpoint_var[0]
    assert a.segments[7] == b.segments[7]
