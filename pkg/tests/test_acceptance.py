"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``ACCEPTANCE <n> PASS|FAIL`` line with the
measured numbers, then asserts the criterion at its stated tolerance.
"""

import json
import math
import time

import numpy as np
import pytest

from chanceplan.reachability import validate_tube
from chanceplan.risk import RiskConstraint, integrate_relaxed, regions_from_tube, relax_triangle
from chanceplan.scenarios import (KINDS, _random_footprint, default_library, random_case, random_case_model,
                                  run_gradient_check, run_highway_suite, run_left_turn_sweep,
                                  run_tightness_benchmark)
from chanceplan.uncertainty import Gaussian, ObstacleField
from chanceplan.vehicle import DesiredTrajectory, VehicleParams, VehicleState, random_disturbance, simulate
from chanceplan.zonotope import Zonotope2, build_cover

from oracles import quadratic_bound_integral
from test_vehicle import crossing_reference

pytestmark = pytest.mark.slow

PARAMS = VehicleParams()
EPS_SWEEP = (0.01, 0.05, 0.1, 0.2, 0.5)


@pytest.fixture(scope="module")
def library():
    return default_library(PARAMS)


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail}", flush=True)
        return ok
    return emit


def binomial_margin(eps, n):
    return 3 * math.sqrt(eps * (1 - eps) / n)


def test_closed_form_matches_quadrature(library, report):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        tb, j, z0, p = random_case(library, rng)
        cj, aj, gj = regions_from_tube(tb, z0)[j - 1]
        gobs = _random_footprint(rng)
        cov = build_cover(Zonotope2(cj, np.hstack([gj, gobs])), 24)
        t = cov.triangles[int(rng.integers(len(cov)))]
        m = random_case_model("gaussian", rng, Zonotope2(cj + aj @ p, np.hstack([gj, gobs])))
        rel = relax_triangle(t, m, aj, tb.p_lo, tb.p_hi, split=4)
        cf = integrate_relaxed(t, rel, m, aj, p)
        ref = quadratic_bound_integral(t, m, rel.h_upper, aj @ p)
        worst = max(worst, abs(cf - ref) / abs(ref))
    wall = time.perf_counter() - t0
    ok = worst <= 1e-9 and wall < 30
    report(1, ok, f"max relative error {worst:.2e} (<= 1e-9) over 1000 cases in {wall:.1f} s (< 30 s)")
    assert ok


def test_gradient_matches_finite_differences(library, report):
    t0 = time.perf_counter()
    rep = run_gradient_check(100, KINDS, 24, seed=0, h=1e-6, library=library)
    wall = time.perf_counter() - t0
    errs = {r["kind"]: r["max_rel_error"] for r in rep.summary}
    ok = max(errs.values()) <= 1e-5 and wall < 60
    report(2, ok, ", ".join(f"{k} {v:.1e}" for k, v in errs.items()) + f" (<= 1e-5) in {wall:.1f} s (< 60 s)")
    assert ok


@pytest.fixture(scope="module")
def tightness(library):
    t0 = time.perf_counter()
    rep = run_tightness_benchmark(500, KINDS, 24, seed=0, library=library, mc_samples=1_000_000)
    return rep, time.perf_counter() - t0


def test_tightness(tightness, report):
    rep, wall = tightness
    s = {r["kind"]: r for r in rep.summary}
    g = s["gaussian"]
    ok = (g["mean_error"] <= 0.02 and g["max_error"] <= 0.08 and
          all(r["conservative_pct"] == 100.0 for r in rep.summary) and
          s["beta"]["mean_error"] <= 0.02 and s["mixture"]["mean_error"] <= 0.02 and wall < 900)
    detail = (f"gaussian mean {g['mean_error']:.4f} max {g['max_error']:.4f}, beta mean {s['beta']['mean_error']:.4f}, "
              f"mixture mean {s['mixture']['mean_error']:.4f}, conservative "
              + "/".join(f"{r['conservative_pct']:.0f}%" for r in rep.summary) + f", {wall:.0f} s (< 900 s)")
    report(3, ok, detail)
    assert ok


def test_cantelli_gap(tightness, report):
    rep, _ = tightness
    g = next(r for r in rep.summary if r["kind"] == "gaussian")
    ratio = g["cantelli_mean_error"] / g["mean_error"]
    ok = ratio >= 5 and g["cantelli_valid_pct"] == 100.0
    report(4, ok, f"Cantelli mean error {g['cantelli_mean_error']:.4f} = {ratio:.1f}x closed form (>= 5x), "
                  f"valid in {g['cantelli_valid_pct']:.0f}% of cases")
    assert ok


def test_cover_soundness(report):
    rng = np.random.default_rng(7)
    missed, rising = 0, 0
    for _ in range(100):
        z = Zonotope2(rng.uniform(-5, 5, 2), rng.uniform(-3, 3, (2, int(rng.integers(1, 7)))))
        pts = z.sample(rng, 10_000)
        g = Gaussian(z.center + rng.uniform(-2, 2, 2), np.diag(rng.uniform(0.5, 3, 2) ** 2))
        totals = []
        for k in (12, 24, 48):
            cov = build_cover(z, k)
            missed += int((~cov.contains(pts)).sum())
            rc = RiskConstraint([(z.center, np.zeros((2, 2)), z.generators)],
                                ObstacleField({(1, 1): g}, np.zeros((2, 0)), 1), [0, 0], [0, 0], k)
            totals.append(rc.evaluate([0, 0]).total)
        rising += sum(b > a + 1e-12 for a, b in zip(totals, totals[1:]))
    ok = missed == 0 and rising == 0
    report(5, ok, f"{missed} of 3e6 sampled points outside covers, {rising} total increases with k")
    assert ok


def test_tube_soundness(library, report):
    t0 = time.perf_counter()
    failures, deflated = [], []
    for t in library.tubes:
        rep = validate_tube(t, PARAMS, 1000, seed=101)
        if rep.fraction != 1.0:
            failures.append((t.name, rep.fraction))
        deflated.append(validate_tube(t.deflated(0.9), PARAMS, 200, seed=102).fraction)
    ok = not failures and max(deflated) < 1.0
    report(6, ok, f"{len(library.tubes) - len(failures)}/{len(library.tubes)} tubes at containment 1.0 over 1000 "
                  f"held-out trajectories, deflated control max {max(deflated):.4f} (< 1.0), "
                  f"{time.perf_counter() - t0:.0f} s" + (f"; failing: {failures}" if failures else ""))
    assert ok


def test_hybrid_dynamics(report):
    rng = np.random.default_rng(3)
    worst_stop = 0.0
    for family, p, u0 in (("speed_change", (12.0, 0.0), 14.0), ("direction_change", (22.0, -0.6), 21.0),
                          ("lane_change", (17.0, 3.7), 17.0), ("left_turn", (6.0, 0.5), 0.0)):
        for d in (None, random_disturbance(rng)):
            traj = DesiredTrajectory(family, p, u0=u0)
            tr = simulate(traj, VehicleState.at_speed(u0, PARAMS), PARAMS, disturbance=d)
            worst_stop = max(worst_stop, abs(tr.states[-1, 3]))
    z0 = VehicleState.at_speed(10.0, PARAMS)
    traj = DesiredTrajectory("speed_change", (10.0, 0.0), u0=10.0)
    ev = simulate(traj, z0, PARAMS).events
    guard = abs(ev[0] - crossing_reference(traj, z0)) if len(ev) == 1 else math.inf
    eq = DesiredTrajectory("speed_change", (18.0, 0.0), u0=18.0)
    tr = simulate(eq, VehicleState.at_speed(18.0, PARAMS), PARAMS, t_end=eq.t_m)
    track = float(np.max(np.abs(tr.states[:, 3] - 18.0)))
    ok = worst_stop <= 1e-3 and guard <= 1e-6 and track <= 1e-8
    report(7, ok, f"final speed {worst_stop:.1e} m/s (<= 1e-3), guard time error {guard:.1e} s (<= 1e-6), "
                  f"equilibrium tracking error {track:.1e} (<= 1e-8)")
    assert ok


def test_left_turn_sweep(library, report):
    t0 = time.perf_counter()
    rep = run_left_turn_sweep(EPS_SWEEP, n_scenarios=20, seed=0, library=library)
    wall = time.perf_counter() - t0
    attg = [r["attg_s"] for r in rep.summary]
    crash = [r["crash_pct"] / 100 for r in rep.summary]
    n = rep.summary[0]["trials"]
    monotone = all(b <= a for a, b in zip(attg, attg[1:]))
    crash_ok = all(c <= e + binomial_margin(e, n) for c, e in zip(crash, EPS_SWEEP))
    audit_ok = all(r["audit_violations"] == 0 for r in rep.summary)
    ok = monotone and crash_ok and audit_ok and wall < 1800
    report(8, ok, "ATTG " + " / ".join(f"{a:.3f}" for a in attg) + " s (non-increasing), crash "
                  + " / ".join(f"{100 * c:.0f}%" for c in crash) + f", audit violations "
                  f"{sum(r['audit_violations'] for r in rep.summary)}, {wall:.0f} s (< 1800 s)")
    assert ok


def test_highway_ordering(library, report):
    rep = run_highway_suite(20, 3, 0.05, seed=0, library=library)
    s = {r["mode"]: r for r in rep.summary}
    st, de = s["stochastic"], s["deterministic"]
    n = st["trials"]
    ok = (st["success_pct"] > de["success_pct"] and de["crash_pct"] == 0.0 and
          st["crash_pct"] / 100 <= 0.05)
    report(9, ok, f"success stochastic {st['success_pct']:.1f}% vs deterministic {de['success_pct']:.1f}% "
                  f"over {n} trials each, crashes {st['crash_pct']:.1f}% / {de['crash_pct']:.1f}%")
    assert ok


def test_thread_count_independence(library, report):
    def views(workers):
        out = {}
        out["tightness"] = run_tightness_benchmark(10, KINDS, 24, seed=4, library=library, mc_samples=100_000,
                                                   workers=workers).deterministic_view()
        out["left_turn"] = run_left_turn_sweep((0.05, 0.2), n_scenarios=3, seed=4, library=library,
                                               workers=workers).deterministic_view()
        out["highway"] = run_highway_suite(3, 1, 0.05, seed=4, library=library,
                                           workers=workers).deterministic_view()
        out["grad_check"] = run_gradient_check(5, KINDS, 24, seed=4, library=library).deterministic_view()
        return json.dumps(out, sort_keys=True)

    a, b, c = views(1), views(2), views(1)
    ok = a == b == c
    report(10, ok, f"benchmark and episode outputs identical for 1 and 2 workers and on repeat ({len(a)} bytes)")
    assert ok
