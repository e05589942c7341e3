"""Command line entry point: ``chanceplan <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .planner import EpisodeConfig, PlanProblem, solve_opt_e
from .reachability import TubeLibrary, build_library, validate_tube
from .scenarios import (KINDS, HighwayConfig, LeftTurnConfig, Scenario, build_obstacle_field, default_library,
                        make_highway, make_left_turn, run_gradient_check, run_highway_suite, run_left_turn_sweep,
                        run_tightness_benchmark, scenario_candidates, highway_waypoint)
from .uncertainty import load_text
from .vehicle import VehicleParams


def _config(args) -> dict:
    return load_text(args.config) if args.config else {}


def _pick(args, cfg: dict, section: str, name: str, default):
    """Flag value, else config value (section first, then top level), else default."""
    v = getattr(args, name, None)
    if v is not None:
        return v
    sec = cfg.get(section) or {}
    if name in sec:
        return sec[name]
    return cfg.get(name, default)


def _params(cfg) -> VehicleParams:
    return VehicleParams.from_dict(cfg.get("vehicle") or {})


def _library(args, cfg, params) -> TubeLibrary:
    d = getattr(args, "tubes", None) or cfg.get("tubes")
    return default_library(params, cache_dir=d)


def _episode(args, cfg) -> EpisodeConfig:
    ep = EpisodeConfig.from_dict(cfg.get("episode") or {})
    grid_k = _pick(args, cfg, "episode", "grid_k", ep.grid_k)
    return replace(ep, grid_k=int(grid_k))


def _out(args) -> Path:
    d = Path(args.out or ".")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _print_rows(rows):
    for r in rows:
        print(", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in r.items()))


# ------------------------------------------------------------------ commands

def cmd_risk_bench(args, cfg):
    params = _params(cfg)
    lib = _library(args, cfg, params)
    kinds = args.kinds or _pick(args, cfg, "benchmark", "kinds", list(KINDS))
    rep = run_tightness_benchmark(int(_pick(args, cfg, "benchmark", "n", 500)), tuple(kinds),
                                  int(_pick(args, cfg, "benchmark", "grid_k", 24)),
                                  int(_pick(args, cfg, "benchmark", "seed", 0)), lib,
                                  int(_pick(args, cfg, "benchmark", "mc_samples", 1_000_000)),
                                  int(_pick(args, cfg, "benchmark", "hess_split", 4)),
                                  int(_pick(args, cfg, "benchmark", "workers", 1)))
    out = _out(args)
    rep.write(out)
    _snapshot_case(out / "relaxation.svg", lib, int(_pick(args, cfg, "benchmark", "seed", 0)),
                   int(_pick(args, cfg, "benchmark", "grid_k", 24)))
    _print_rows(rep.summary)


def _snapshot_case(path, lib, seed, k):
    from .plotting import plot_relaxation
    from .risk import regions_from_tube
    from .scenarios import _random_footprint, random_case, random_case_model
    from .zonotope import Zonotope2, build_cover
    rng = np.random.default_rng([seed, 0, 0])
    tb, j, z0, p = random_case(lib, rng)
    gobs = _random_footprint(rng)
    cj, aj, gj = regions_from_tube(tb, z0)[j - 1]
    region = Zonotope2(cj + aj @ p, np.hstack([gj, gobs]))
    m = random_case_model("gaussian", rng, region)
    plot_relaxation(path, region, build_cover(region, k), [m], f"{tb.name}, interval {j}")


def cmd_grad_check(args, cfg):
    params = _params(cfg)
    lib = _library(args, cfg, params)
    kinds = args.kinds or _pick(args, cfg, "grad_check", "kinds", list(KINDS))
    rep = run_gradient_check(int(_pick(args, cfg, "grad_check", "n", 100)), tuple(kinds),
                             int(_pick(args, cfg, "grad_check", "grid_k", 24)),
                             int(_pick(args, cfg, "grad_check", "seed", 0)),
                             float(_pick(args, cfg, "grad_check", "h", 1e-6)), lib)
    rep.write(_out(args))
    _print_rows(rep.summary)


def _load_scenario(args, cfg) -> Scenario:
    if args.scenario:
        return Scenario.load(args.scenario)
    seed = int(_pick(args, cfg, "plan", "seed", 0))
    kind = _pick(args, cfg, "plan", "kind", "highway")
    if kind == "left_turn":
        return make_left_turn(seed, LeftTurnConfig.from_dict(cfg.get("left_turn", {}).get("layout", {})))
    return make_highway(seed, HighwayConfig.from_dict(cfg.get("highway", {}).get("layout", {})))


def cmd_plan(args, cfg):
    from .plotting import plot_plan
    params = _params(cfg)
    lib = _library(args, cfg, params)
    s = _load_scenario(args, cfg)
    ep = _episode(args, cfg)
    eps = float(_pick(args, cfg, "episode", "epsilon", ep.epsilon))
    tubes = scenario_candidates(s, lib)(0.0, s.ego)
    n = max(t.n_intervals for t in lib.tubes)
    wp = np.asarray(s.waypoint, float) if s.waypoint is not None else highway_waypoint(s)(0.0, s.ego)
    prob = PlanProblem(s.ego, wp, eps, tubes, build_obstacle_field(s, 0.0, n), ep.t_plan, ep.grid_k,
                       args.mode or ep.mode, ep.hess_split, ep.max_evals, strict_time=not args.no_time_limit)
    out = solve_opt_e(prob)
    d = _out(args)
    res = {"status": out.status, "tube": out.tube.name if out.tube else None,
           "p": None if out.p is None else out.p.tolist(), "certified_risk": out.certified_risk,
           "cost": out.cost, "evaluations": out.evaluations, "wall_time": out.wall_time, "tried": out.tried}
    (d / "plan.json").write_text(json.dumps(res, indent=1))
    if out.feasible:
        fld = build_obstacle_field(s, 0.0, out.tube.n_intervals)
        plot_plan(d / "plan.svg", out.tube, s.ego, out.p, fld, lanes=s.lanes)
    print(json.dumps({k: v for k, v in res.items() if k != "tried"}))


def cmd_highway(args, cfg):
    params = _params(cfg)
    lib = _library(args, cfg, params)
    sec = cfg.get("highway") or {}
    ep = _episode(args, cfg)
    rep = run_highway_suite(int(_pick(args, cfg, "highway", "n_scenarios", 20)),
                            int(_pick(args, cfg, "highway", "trials", 3)),
                            float(_pick(args, cfg, "highway", "eps", 0.05)),
                            int(_pick(args, cfg, "highway", "seed", 0)),
                            tuple(sec.get("modes", ("stochastic", "deterministic"))), lib, params, ep,
                            HighwayConfig.from_dict(sec.get("layout", {})),
                            int(_pick(args, cfg, "highway", "workers", 1)))
    rep.write(_out(args))
    _print_rows(rep.summary)


def cmd_left_turn(args, cfg):
    params = _params(cfg)
    lib = _library(args, cfg, params)
    sec = cfg.get("left_turn") or {}
    ep = replace(_episode(args, cfg), wait_when_stopped=True)
    eps = args.eps_list or sec.get("eps", [0.01, 0.05, 0.1, 0.2, 0.5])
    if args.eps is not None:
        eps = [args.eps]
    rep = run_left_turn_sweep(tuple(float(e) for e in eps),
                              int(_pick(args, cfg, "left_turn", "n_scenarios", 20)),
                              int(_pick(args, cfg, "left_turn", "trials", 1)),
                              int(_pick(args, cfg, "left_turn", "seed", 0)), lib, params, ep,
                              LeftTurnConfig.from_dict(sec.get("layout", {})),
                              int(_pick(args, cfg, "left_turn", "workers", 1)))
    rep.write(_out(args))
    _print_rows(rep.summary)


def cmd_tube_build(args, cfg):
    params = _params(cfg)
    sec = cfg.get("tube_build") or {}
    d = _out(args)
    t0 = time.perf_counter()
    lib = build_library(params, n_samples=int(_pick(args, cfg, "tube_build", "samples", 200)),
                        seed=int(_pick(args, cfg, "tube_build", "seed", 0)), cache_dir=d,
                        dt_interval=float(sec.get("dt_interval", 0.1)))
    print(f"{len(lib.tubes)} tubes in {d} ({time.perf_counter() - t0:.1f} s)")


def cmd_tube_validate(args, cfg):
    params = _params(cfg)
    lib = _library(args, cfg, params)
    trials = int(_pick(args, cfg, "tube_validate", "trials", 1000))
    seed = int(_pick(args, cfg, "tube_validate", "seed", 1))
    rows = []
    for t in lib.tubes:
        rep = validate_tube(t, params, trials, seed)
        neg = validate_tube(t.deflated(0.9), params, min(trials, 200), seed)
        rows.append({"tube": t.name, "fraction": rep.fraction, "failures": rep.failures, "pairs": rep.pairs,
                     "worst_excess": rep.worst_excess, "deflated_fraction": neg.fraction})
        print(f"{t.name}: {rep.fraction:.6f} (deflated {neg.fraction:.4f})", flush=True)
    p = _out(args) / "tube_validation.csv"
    with open(p, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


COMMANDS = {"risk-bench": cmd_risk_bench, "grad-check": cmd_grad_check, "plan": cmd_plan,
            "highway": cmd_highway, "left-turn": cmd_left_turn, "tube-build": cmd_tube_build,
            "tube-validate": cmd_tube_validate}


def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chanceplan", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--eps", type=float, default=None, help="risk threshold")
        sp.add_argument("--grid-k", dest="grid_k", type=int, default=None, help="cover grid size per axis")
        sp.add_argument("--config", default=None, help="YAML or JSON config file")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--tubes", default=None, help="tube cache directory")
        if name in ("risk-bench", "grad-check"):
            sp.add_argument("--n", type=int, default=None, help="cases per kind")
            sp.add_argument("--kinds", nargs="+", choices=KINDS, default=None)
        if name == "risk-bench":
            sp.add_argument("--mc-samples", dest="mc_samples", type=int, default=None)
        if name == "plan":
            sp.add_argument("--scenario", default=None, help="scenario JSON file")
            sp.add_argument("--kind", choices=("highway", "left_turn"), default=None)
            sp.add_argument("--mode", choices=("stochastic", "deterministic"), default=None)
            sp.add_argument("--no-time-limit", action="store_true")
        if name in ("highway", "left-turn"):
            sp.add_argument("--n-scenarios", dest="n_scenarios", type=int, default=None)
            sp.add_argument("--trials", type=int, default=None)
            sp.add_argument("--workers", type=int, default=None)
        if name == "left-turn":
            sp.add_argument("--eps-list", dest="eps_list", type=float, nargs="+", default=None)
        if name == "tube-build":
            sp.add_argument("--samples", type=int, default=None)
        if name == "tube-validate":
            sp.add_argument("--trials", type=int, default=None)
    return ap


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    cfg = _config(args)
    if getattr(args, "eps", None) is not None:
        cfg.setdefault("episode", {})["epsilon"] = args.eps
        cfg.setdefault("highway", {})["eps"] = args.eps
    if args.grid_k is not None:
        for sec in ("benchmark", "grad_check", "episode"):
            cfg.setdefault(sec, {})["grid_k"] = args.grid_k
    COMMANDS[args.command](args, cfg)
    return 0


if __name__ == "__main__":
    sys.exit(main())
