"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
Criteria that cannot hold as literally stated run literally and are marked
strict expected failures, next to the check that does hold.
"""
import math
import time

import numpy as np
import pytest

from helpers import funnel_1d, report
from consolidated_control import catalog
from consolidated_control.bounds import (FiniteTimeBoundParams, chi_switch, finite_time_bound,
                                         iota_switch)
from consolidated_control.constraints import alpha, alpha_bar
from consolidated_control.expressions import compile_time_function, parse_params
from consolidated_control.oracle import (GridSpec, alpha_star_grid, alpha_star_series,
                                         critical_point_scan, fd_validate,
                                         non_maximum_critical_points, violation_report)
from consolidated_control.scenario_io import apply_patch, build_scenario, trace_csv_text
from consolidated_control.sim import run_closed_loop

EXAMPLES = ("example_1", "example_2", "example_3")


def timed_run(doc):
    t0 = time.perf_counter()
    trace = run_closed_loop(build_scenario(doc))
    return trace, time.perf_counter() - t0


@pytest.fixture(scope="module")
def shipped():
    """Every shipped scenario run once at its declared settings."""
    return {name: timed_run(catalog.scenario_document(name)) for name in catalog.SCENARIOS}


def oracle_grid(name):
    o = catalog.scenario_document(name)["oracle"]
    return GridSpec(o["box"], o["resolution"], o["polish_steps"])


@pytest.fixture(scope="module")
def oracle_b(shipped):
    """alpha* on every recorded time of both Scenario B runs."""
    out = {}
    for name in ("scenario_b_case_a", "scenario_b_case_b"):
        cons = catalog.catalog_set(name).consolidation()
        tr = shipped[name][0]
        a_star, _, abar_star, _ = alpha_star_series(cons, tr.times, oracle_grid(name))
        out[name] = (a_star, abar_star)
    return out


def funnel_errors(name, trace):
    """Tracking errors and funnel half-widths of Scenario A from its parameters."""
    params = parse_params(catalog.scenario_document(name)["params"])
    xd = [compile_time_function(k, params) for k in ("xd1", "xd2")]
    rho = compile_time_function("rho", params)
    t = trace.times
    err = np.column_stack([trace["x1_1"] - [xd[0](s) for s in t],
                           trace["x1_2"] - [xd[1](s) for s in t]])
    return err, np.array([rho(s) for s in t])


def check_scenario_a_outside(trace, seconds, budget):
    t = trace.times
    late = t >= 3.0
    err, rho = funnel_errors("scenario_a_outside", trace)
    parts = {
        "completed": not trace.aborted and t[-1] == pytest.approx(25.0),
        "e_alpha>0": bool(np.all(trace["e_alpha"] > 0)),
        "alpha>0 for t>=3": bool(np.all(trace["alpha"][late] > 0)),
        "|e_j|<rho for t>=3": bool(np.all(np.abs(err[late]) < rho[late, None])),
        f"runtime<{budget:g}s": seconds < budget,
    }
    return parts


# -- 1, 2: derivative kernel and sandwich -------------------------------------

def test_criterion_1_derivative_kernel():
    t0 = time.perf_counter()
    worst = {"grad": 0.0, "dt": 0.0, "hess": 0.0}
    ok = True
    for name in EXAMPLES:
        cs = catalog.catalog_set(name)
        rep = fd_validate(cs.consolidation(), cs.box, cs.t_range, samples=1000,
                          check_channels=False)
        ok &= rep.passed
        worst = {k: max(worst[k], rep.max_rel[k]) for k in worst}
    seconds = time.perf_counter() - t0
    ok &= seconds < 60.0
    report(1, ok, f"max rel grad {worst['grad']:.1e}, dt {worst['dt']:.1e}, "
                  f"hess {worst['hess']:.1e}; {seconds:.1f}s")
    assert ok


def test_criterion_2_sandwich():
    worst = -math.inf
    for name in EXAMPLES:
        cs = catalog.catalog_set(name)
        cons = cs.consolidation()
        slack = math.log(cons.set.size) / cons.nu
        rng = np.random.default_rng(1)
        lo, hi = np.array(cs.box).T
        for _ in range(1000):
            t = rng.uniform(*cs.t_range)
            x = rng.uniform(lo, hi)
            a, ab = alpha(cons, t, x), alpha_bar(cons.set, t, x)
            # alpha <= alpha_bar <= alpha + ln(m + p) / nu
            worst = max(worst, a - ab, ab - a - slack)
    ok = worst <= 1e-12
    report(2, ok, f"largest excess {worst:.2e}")
    assert ok


# -- 3, 4, 5: Scenario A and intermediate funnels ------------------------------

@pytest.mark.xfail(strict=True, reason="RK4 at h=1e-3 is unstable for the barrier stiffness")
def test_criterion_3_literal_step():
    doc = apply_patch(catalog.scenario_document("scenario_a_outside"),
                      {"step": 1e-3, "stride": 10})
    trace, seconds = timed_run(doc)
    parts = check_scenario_a_outside(trace, seconds, 30.0)
    ok = all(parts.values())
    detail = ", ".join(k for k, v in parts.items() if not v)
    if trace.aborted:
        detail += f"; aborted at t={trace.events[0][0]:.3f}"
    report("3 (h=1e-3)", ok, f"failed: {detail}" if not ok else f"{seconds:.1f}s")
    assert ok


def test_criterion_3_shipped_step(shipped):
    trace, seconds = shipped["scenario_a_outside"]
    parts = check_scenario_a_outside(trace, seconds, math.inf)
    ok = all(parts.values())
    report("3 (shipped h=2e-4)", ok,
           f"min e_alpha {trace['e_alpha'].min():.3g}, min alpha after 3s "
           f"{trace['alpha'][trace.times >= 3].min():.3g}; runtime {seconds:.1f}s "
           f"(not held to 30s)")
    assert ok


def test_criterion_4_scenario_a_inside(shipped):
    trace, _ = shipped["scenario_a_inside"]
    ok = not trace.aborted and bool(np.all(trace["alpha"] > 0))
    report(4, ok, f"min alpha {trace['alpha'].min():.4g} over [0, {trace.times[-1]:g}]")
    assert ok


def test_criterion_5_intermediate_funnels(shipped):
    worst, ok = 0.0, True
    for name, (trace, _) in shipped.items():
        ok &= not trace.aborted
        worst = max(worst, float(np.abs(trace.group("e_hat_")).max()))
    ok &= worst < 1.0
    report(5, ok, f"max |e_hat| {worst:.4f} over {len(shipped)} runs")
    assert ok


# -- 6, 7, 8: Scenario B ------------------------------------------------------

def test_criterion_6_least_violation(shipped, oracle_b):
    name = "scenario_b_case_a"
    trace, _ = shipped[name]
    cons = catalog.catalog_set(name).consolidation()
    rep = violation_report(trace, cons, oracle_grid(name), mu=0.2)
    assert np.array_equal(rep.alpha_star, oracle_b[name][0])
    overlap = any(a <= 14.0 and b >= 8.0 for a, b in rep.windows)
    final = trace.times >= trace.times[-1] - 3.0
    returned = bool(np.all(trace["rho_alpha"][final] == trace["varrho"][final]))
    ok = (not trace.aborted) and overlap and bool(rep.gap_ok) and returned
    wins = ", ".join(f"[{a:.2f}, {b:.2f}]" for a, b in rep.windows)
    report(6, ok, f"windows {wins}; gap {rep.max_gap:.4f} <= {rep.bound:.4f}; "
                  f"rho_alpha = varrho on final 3s: {returned}")
    assert ok


def test_criterion_7_estimator_tuning(shipped, oracle_b):
    med = {}
    for name in ("scenario_b_case_a", "scenario_b_case_b"):
        trace, _ = shipped[name]
        sel = (trace.times >= 2.0) & (trace.times <= 20.0)
        med[name] = float(np.median(np.abs(oracle_b[name][0] - trace["alpha_hat"])[sel]))
    ok = med["scenario_b_case_a"] < med["scenario_b_case_b"]
    report(7, ok, f"median |alpha* - alpha_hat|: tuned {med['scenario_b_case_a']:.4g}, "
                  f"sluggish {med['scenario_b_case_b']:.4g}")
    assert ok


def test_criterion_8_underestimation(shipped, oracle_b):
    worst = -math.inf
    for name, (a_star, _) in oracle_b.items():
        trace, _ = shipped[name]
        worst = max(worst, float(np.max(trace["alpha_hat"] - a_star)))
    static = [n for n, (tr, _) in shipped.items() if not tr.has("alpha_hat")]
    ok = worst <= 1e-3
    report(8, ok, f"max alpha_hat - alpha* {worst:.2e} on adaptive runs; "
                  f"no estimate in {len(static)} static runs")
    assert ok


# -- 9: bound functions ---------------------------------------------------------

P = FiniteTimeBoundParams(T=3.0, beta=0.3, rho_inf=0.5, rho0=-1.3)


def test_criterion_9_endpoints_and_switches():
    h = 1e-9
    endpoints = (finite_time_bound(P, 0.0)[0] == P.rho0
                 and all(finite_time_bound(P, t)[0] == P.rho_inf for t in (3.0, 3.5, 100.0)))
    zs = np.linspace(-1.0, 1.0, 2001)
    in_range = all(0.0 <= f(z, 0.3) <= 1.0 for f in (chi_switch, iota_switch) for z in zs)
    knot_gap = 0.0
    for f in (chi_switch, iota_switch):
        for k in (0.0, 0.3):
            left = (f(k, 0.3) - f(k - h, 0.3)) / h
            right = (f(k + h, 0.3) - f(k, 0.3)) / h
            knot_gap = max(knot_gap, abs(left - right))
    ok = endpoints and in_range and knot_gap <= 1e-6
    report("9 (endpoints, switches)", ok,
           f"endpoints exact: {endpoints}; switches in [0,1]: {in_range}; "
           f"knot slope jump {knot_gap:.1e}")
    assert ok


@pytest.mark.xfail(strict=True, reason="left slope at T decays like (T-t)^(beta/(1-beta))")
def test_criterion_9_smooth_at_appointed_time():
    h = 1e-9
    left = (finite_time_bound(P, P.T)[0] - finite_time_bound(P, P.T - h)[0]) / h
    right = (finite_time_bound(P, P.T + h)[0] - finite_time_bound(P, P.T)[0]) / h
    ok = abs(left - right) <= 1e-6
    report("9 (C1 at T)", ok, f"slope jump {abs(left - right):.2e} at beta={P.beta}")
    assert ok


# -- 10, 11: oracle and pathology detection -----------------------------------

def test_criterion_10_oracle_sanity():
    nu = 10.0
    res = alpha_star_grid(funnel_1d(2.0, nu), 0.0, GridSpec([(-3.0, 3.0)]))
    err = abs(res.alpha_star - (2.0 - math.log(2.0) / nu))
    monotone = True
    for name in EXAMPLES + ("annulus",):
        cs = catalog.catalog_set(name)
        cons = cs.consolidation()
        grid, prev = GridSpec(cs.box, resolution=26), -math.inf
        for _ in range(4):
            cur = alpha_star_grid(cons, cs.t_range[1], grid).grid_max
            monotone &= cur >= prev
            prev, grid = cur, grid.refined()
    ok = err <= 1e-4 and monotone
    report(10, ok, f"1-D funnel error {err:.1e}; refinement monotone: {monotone}")
    assert ok


def test_criterion_11_pathology():
    found = {}
    for name in ("annulus", "example_2"):
        cs = catalog.catalog_set(name)
        pts = critical_point_scan(cs.consolidation(), 0.0, GridSpec(cs.box, resolution=101))
        found[name] = non_maximum_critical_points(pts)
    at_origin = [p for p in found["annulus"] if np.linalg.norm(p.point) < 1e-6]
    ok = len(at_origin) == 1 and at_origin[0].kind == "minimum" and not found["example_2"]
    report(11, ok, f"annulus: {len(found['annulus'])} non-maximum point(s), "
                   f"origin {'found' if at_origin else 'missing'}; "
                   f"example 2: {len(found['example_2'])}")
    assert ok


# -- 12: determinism ----------------------------------------------------------

def test_criterion_12_determinism(shipped):
    name = "scenario_b_case_a"
    again, _ = timed_run(catalog.scenario_document(name))
    ok = trace_csv_text(again) == trace_csv_text(shipped[name][0])
    report(12, ok, f"{name} re-run byte-identical: {ok}")
    assert ok
