"""Risk-constrained trajectory parameter selection and receding-horizon driving.

A plan picks a reach tube (one trajectory family over one cell of initial
speeds) and a parameter ``p`` in its box.  The cost is the squared distance
between the desired trajectory's position at the end of the driving
maneuver and a waypoint.  The constraint is the closed-form risk bound
certified at ``p``; in deterministic mode it is replaced by a hard
separation test against 5-sigma boxes.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .baselines import five_sigma_box, mc_risk
from .reachability import ReachTube, TubeLibrary, tube_to_world
from .risk import RiskConstraint, RiskReport, regions_from_tube
from .uncertainty import Gaussian, ObstacleField
from .vehicle import LOW, VehicleParams, VehicleState, desired, simulate

MODES = ("stochastic", "deterministic")
STATUSES = ("feasible", "infeasible", "timeout")


# ------------------------------------------------------------------ cost

def desired_endpoint(tube: ReachTube, p, z0: VehicleState, n: int = 16) -> np.ndarray:
    """World position of the desired trajectory at ``t_m`` (Simpson's rule)."""
    traj = tube.trajectory(p, z0.u, z0.h).to_array()
    t_m = tube.t_m
    ts = np.linspace(0.0, t_m, 2 * n + 1)
    vel = np.empty((len(ts), 2))
    for k, t in enumerate(ts):
        # the left end of a maneuver is evaluated just inside it
        u, _, _, _, h = desired(traj, min(t, t_m - 1e-12))
        vel[k] = u * math.cos(h), u * math.sin(h)
    w = np.ones(len(ts))
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return np.array([z0.x, z0.y]) + (t_m / (6 * n)) * (w @ vel)


def _waypoint(wp, tube: ReachTube) -> np.ndarray:
    return np.asarray(wp(tube.t_m) if callable(wp) else wp, dtype=float)


def plan_cost(tube: ReachTube, p, z0: VehicleState, waypoint) -> float:
    d = desired_endpoint(tube, p, z0) - _waypoint(waypoint, tube)
    return float(d @ d)


def _cost_and_grad(tube, p, z0, wp, h=1e-6):
    c = plan_cost(tube, p, z0, wp)
    g = np.zeros(len(p))
    for k in range(len(p)):
        if tube.p_hi[k] <= tube.p_lo[k]:
            continue
        e = np.zeros(len(p))
        e[k] = h
        g[k] = (plan_cost(tube, p + e, z0, wp) - plan_cost(tube, p - e, z0, wp)) / (2 * h)
    return c, g


# ------------------------------------------------------------------ deterministic constraint

@dataclass
class SeparationConstraint:
    """Hard avoidance of per-pair boxes, exposed like a risk constraint.

    For tube region ``<c_j + A_j p, G_j>`` and obstacle set ``<b, B>`` the
    sets are disjoint iff ``c_j + A_j p - b`` lies outside
    ``<0, [G_j, B]>``.  The reported total is the summed shortfall of the
    signed separation below ``margin``; zero means every pair is separated.
    """

    regions: list
    boxes: dict
    p_lo: np.ndarray
    p_hi: np.ndarray
    margin: float = 1e-3
    pairs: list = field(default_factory=list, init=False)

    def __post_init__(self):
        from .risk import param_box_offsets
        from .zonotope import Zonotope2
        self.p_lo = np.asarray(self.p_lo, float)
        self.p_hi = np.asarray(self.p_hi, float)
        for key in sorted(self.boxes):
            _, j = key
            c, a_j, g_j = self.regions[j - 1]
            a_j = np.asarray(a_j, float)
            box = self.boxes[key]
            d0 = np.asarray(c, float) - box.center
            z = Zonotope2(np.zeros(2), np.hstack([np.asarray(g_j, float), box.generators]))
            lo, hi = z.bbox()
            olo, ohi = param_box_offsets(a_j, self.p_lo, self.p_hi)
            # skip pairs separated along an axis for every p in the box
            if np.any(d0 + olo > hi + self.margin) or np.any(d0 + ohi < lo - self.margin):
                continue
            n_z, h_z = z.halfspaces()
            self.pairs.append((key, d0, a_j, n_z, h_z))

    def evaluate(self, p) -> RiskReport:
        t0 = time.perf_counter()
        p = np.asarray(p, float)
        total, grad, per_pair = 0.0, np.zeros(len(p)), {}
        for key, d0, a_j, n_z, h_z in self.pairs:
            s = n_z @ (d0 + a_j @ p) - h_z
            k = int(np.argmax(s))
            short = self.margin - s[k]
            if short > 0:
                total += short
                grad -= n_z[k] @ a_j
                per_pair[key] = short
        return RiskReport(total, per_pair, grad, 0, time.perf_counter() - t0)


def five_sigma_boxes(field_: ObstacleField) -> dict:
    """Per-pair 5-sigma boxes buffered by the obstacle footprint."""
    from .zonotope import Zonotope2
    out = {}
    for key, m in field_.pdfs.items():
        if not isinstance(m, Gaussian):
            raise TypeError("deterministic mode needs Gaussian obstacle models")
        b = five_sigma_box(m)
        out[key] = Zonotope2(b.center, np.hstack([b.generators, field_.gobs]))
    return out


# ------------------------------------------------------------------ problem and outcome

@dataclass
class PlanProblem:
    """One planning query.

    ``field`` is indexed from the plan's start (interval 1 begins at
    ``z0``'s time) and must cover the longest candidate tube.  ``waypoint``
    is a world point or a callable of the maneuver time ``t_m``.
    """

    z0: VehicleState
    waypoint: object
    epsilon: float
    tubes: list
    field: ObstacleField
    t_plan: float = 3.0
    grid_k: int = 24
    mode: str = "stochastic"
    hess_split: int = 4
    max_evals: int = 150
    evals_per_start: int = 6
    strict_time: bool = True
    penalty: float = 1e3
    target: float = 0.98

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


@dataclass
class PlanOutcome:
    status: str
    p: np.ndarray | None = None
    tube: ReachTube | None = None
    certified_risk: float | None = None
    cost: float | None = None
    iterations: int = 0
    evaluations: int = 0
    wall_time: float = 0.0
    report: RiskReport | None = None
    tried: list = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"


class _Budget(Exception):
    pass


def _constraint(prob: PlanProblem, tube: ReachTube):
    regions = regions_from_tube(tube, prob.z0)
    fld = prob.field.restricted(tube.n_intervals)
    if prob.mode == "deterministic":
        return SeparationConstraint(regions, five_sigma_boxes(fld), tube.p_lo, tube.p_hi)
    return RiskConstraint(regions, fld, tube.p_lo, tube.p_hi, prob.grid_k,
                          hess_split=prob.hess_split, enclosure="point")


def _unconstrained(tube, prob):
    """Cost minimiser over the tube's box (no risk term)."""
    lo, hi = tube.p_lo, tube.p_hi
    best = None
    for x0 in (0.5 * (lo + hi), lo, hi):
        r = minimize(lambda q: _cost_and_grad(tube, q, prob.z0, prob.waypoint), x0, jac=True,
                     method="L-BFGS-B", bounds=list(zip(lo, hi)), options={"maxiter": 50})
        if best is None or r.fun < best[0]:
            best = (float(r.fun), np.clip(r.x, lo, hi))
    return best


def _starts(tube: ReachTube) -> list:
    lo, hi = tube.p_lo, tube.p_hi
    active = np.flatnonzero(hi > lo)
    pts = [0.5 * (lo + hi)]
    for bits in range(2 ** len(active)):
        q = lo.copy()
        for b, k in enumerate(active):
            if bits >> b & 1:
                q[k] = hi[k]
        pts.append(q)
    # corners by bit pattern, center first
    uniq = []
    for q in pts:
        if not any(np.array_equal(q, u) for u in uniq):
            uniq.append(q)
    return uniq


def solve_opt_e(prob: PlanProblem) -> PlanOutcome:
    """Pick the best-cost certified parameter over all candidate tubes.

    Tubes are visited in increasing order of their unconstrained minimum
    cost; a tube whose unconstrained minimum cannot beat the best accepted
    cost is skipped.  Inside a tube the cost minimiser is tried first, then
    a penalised quasi-Newton search from the center and corners of ``P``.
    Every evaluated ``p`` with certified risk ``<= epsilon`` is a candidate.
    """
    t0 = time.perf_counter()
    state = {"evals": 0, "iters": 0}
    # the separation test is a hard constraint: any shortfall rejects
    eps = prob.epsilon if prob.mode == "stochastic" else 0.0
    best = None          # (cost, p, risk, tube, report)
    tried = []
    order = []
    for k, tube in enumerate(prob.tubes):
        if tube.in_cell(prob.z0):
            c_min, p_c = _unconstrained(tube, prob)
            order.append((c_min, k, tube, p_c))
    order.sort(key=lambda e: (e[0], e[1]))
    expired = False

    def over_budget():
        return (state["evals"] >= prob.max_evals
                or (prob.strict_time and time.perf_counter() - t0 > prob.t_plan))

    for c_min, _, tube, p_c in order:
        if best is not None and c_min >= best[0]:
            break
        if over_budget():
            expired = True
            break
        con = _constraint(prob, tube)
        accepted = []

        def certify(p):
            if over_budget():
                raise _Budget
            state["evals"] += 1
            rep = con.evaluate(p)
            c, gc = _cost_and_grad(tube, p, prob.z0, prob.waypoint)
            if rep.total <= eps:
                accepted.append((c, p.copy(), rep.total, rep))
            return rep, c, gc

        scale = max(1.0, c_min)
        ref = max(prob.epsilon, 1e-3)

        def objective(p):
            p = np.clip(p, tube.p_lo, tube.p_hi)
            rep, c, gc = certify(p)
            excess = max(0.0, rep.total - prob.target * eps)
            val = c / scale + prob.penalty * (excess / ref) ** 2
            g = gc / scale + (2 * prob.penalty * excess / ref ** 2) * rep.gradient
            return val, g

        try:
            certify(p_c)
            if not accepted:
                for x0 in _starts(tube):
                    r = minimize(objective, x0, jac=True, method="L-BFGS-B",
                                 bounds=list(zip(tube.p_lo, tube.p_hi)),
                                 options={"maxfun": prob.evals_per_start, "maxiter": prob.evals_per_start})
                    state["iters"] += int(r.nit)
        except _Budget:
            expired = True
        if accepted:
            c, p, risk, rep = min(accepted, key=lambda a: (a[0], tuple(a[1])))
            if best is None or c < best[0]:
                best = (c, p, risk, tube, rep)
        tried.append({"tube": tube.name, "min_cost": c_min, "accepted": len(accepted)})
        if expired:
            break
    wall = time.perf_counter() - t0
    if best is not None:
        c, p, risk, tube, rep = best
        return PlanOutcome("feasible", p, tube, risk, c, state["iters"], state["evals"], wall, rep, tried)
    status = "timeout" if expired else "infeasible"
    return PlanOutcome(status, iterations=state["iters"], evaluations=state["evals"], wall_time=wall, tried=tried)


# ------------------------------------------------------------------ audit

def audit_plan(outcome: PlanOutcome, z0: VehicleState, field_: ObstacleField, n: int,
               seed: int, min_pair: float = 1e-6) -> tuple[float, float]:
    """Monte Carlo risk of a certified plan over the pairs that matter.

    Pairs whose certified share is below ``min_pair`` are skipped; they
    count as zero, so the audit never exceeds what a full audit would give
    by more than noise.
    """
    world = tube_to_world(outcome.tube, z0)
    fld = field_.restricted(outcome.tube.n_intervals)
    from .zonotope import Zonotope2
    total, var = 0.0, 0.0
    seeds = np.random.SeedSequence(seed).spawn(max(1, len(fld.pairs())))
    for k, key in enumerate(fld.pairs()):
        if outcome.report is not None and outcome.report.per_pair.get(key, 0.0) < min_pair:
            continue
        z, a = world[key[1] - 1]
        region = Zonotope2(z.center + a @ outcome.p, np.hstack([z.generators, fld.gobs]))
        est = mc_risk(region, fld.pdfs[key], n, seed=int(seeds[k].generate_state(1)[0]))
        total += est.value
        var += est.std_error ** 2
    return total, math.sqrt(var)


# ------------------------------------------------------------------ receding horizon

@dataclass
class EpisodeConfig:
    epsilon: float = 0.05
    t_plan: float = 3.0
    grid_k: int = 24
    hess_split: int = 4
    mode: str = "stochastic"
    max_evals: int = 150
    strict_time: bool = False
    t_max: float = 40.0
    wait_when_stopped: bool = False
    audit_samples: int = 20_000
    trace_stride: int = 10
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeConfig":
        names = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class IterationRecord:
    t: float
    status: str
    tube: str | None
    p: list | None
    certified_risk: float | None
    audit_risk: float | None
    audit_se: float | None
    cost: float | None
    evaluations: int
    solve_time: float
    x: float
    y: float
    u: float


@dataclass
class EpisodeLog:
    iterations: list
    t: np.ndarray
    states: np.ndarray
    modes: np.ndarray
    outcome: str
    time_to_goal: float | None = None
    crash_time: float | None = None

    def summary(self) -> dict:
        feas = [r for r in self.iterations if r.status == "feasible"]
        return {"outcome": self.outcome, "time_to_goal": self.time_to_goal, "crash_time": self.crash_time,
                "iterations": len(self.iterations), "feasible": len(feas),
                "max_certified_risk": max((r.certified_risk for r in feas), default=0.0)}

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for r in self.iterations:
                fh.write(json.dumps(asdict(r)) + "\n")
            fh.write(json.dumps({"summary": self.summary()}) + "\n")

    def deterministic_view(self) -> dict:
        """Everything except wall-clock timings."""
        its = [{k: v for k, v in asdict(r).items() if k != "solve_time"} for r in self.iterations]
        return {"iterations": its, "trace": self.states.tolist(), "summary": self.summary()}


def _state_at(trace, k) -> VehicleState:
    x, y, h, u, v, r = trace.states[k]
    return VehicleState(x, y, h, u, v, r, mode=int(trace.modes[k]))


def run_receding_horizon(z0: VehicleState, library: TubeLibrary, params: VehicleParams,
                         field_source: Callable, waypoint_fn: Callable, goal_fn: Callable,
                         config: EpisodeConfig, collision_fn: Callable | None = None,
                         candidates_fn: Callable | None = None) -> EpisodeLog:
    """Plan, execute and re-plan until the goal, a stop, a crash or ``t_max``.

    ``field_source(t0, n)`` returns the obstacle field for intervals
    starting at ``t0``; ``waypoint_fn(t0, state)`` returns the waypoint
    argument for a plan starting at ``t0``; ``goal_fn(states)`` flags goal
    states; ``collision_fn(t, states)`` returns the first crash time or
    None; ``candidates_fn(t0, state)`` narrows the tubes tried (default:
    every tube whose cell holds the state).  A plan's driving part is executed up to its ``t_m``, where the
    next plan (computed from the predicted state) takes over; when no plan
    is found the current plan's braking part runs to a stop.
    """
    n_max = max(t.n_intervals for t in library.tubes)
    dt_trace = config.trace_stride * 1e-3
    pieces_t, pieces_s, pieces_m = [], [], []
    records = []
    t, state = 0.0, z0
    rng_seq = np.random.SeedSequence(config.seed)

    def attempt(t0, s):
        fld = field_source(t0, n_max)
        tubes = library.candidates(s) if candidates_fn is None else candidates_fn(t0, s)
        prob = PlanProblem(s, waypoint_fn(t0, s), config.epsilon, tubes, fld,
                           config.t_plan, config.grid_k, config.mode, config.hess_split,
                           config.max_evals, strict_time=config.strict_time)
        out = solve_opt_e(prob)
        a_r = a_se = None
        if out.feasible and config.mode == "stochastic" and config.audit_samples > 0:
            a_r, a_se = audit_plan(out, s, fld, config.audit_samples,
                                   int(rng_seq.spawn(1)[0].generate_state(1)[0]))
        records.append(IterationRecord(
            round(t0, 9), out.status, out.tube.name if out.tube else None,
            None if out.p is None else [float(v) for v in out.p], out.certified_risk, a_r, a_se,
            out.cost, out.evaluations, out.wall_time, float(s.x), float(s.y), float(s.u)))
        return out

    def add_piece(t0, ts, states, modes):
        first = 1 if pieces_t else 0
        pieces_t.append(t0 + ts[first:])
        pieces_s.append(states[first:])
        pieces_m.append(modes[first:])

    outcome = None
    out = attempt(t, state)
    if not out.feasible and not (config.wait_when_stopped and state.u <= 1e-9):
        outcome = "other"
    while outcome is None:
        if not out.feasible:
            # stopped and allowed to wait: hold position for one planning period
            n_hold = int(round(config.t_plan / dt_trace)) + 1
            hold = np.tile(np.r_[state.x, state.y, state.h, 0.0, 0.0, 0.0], (n_hold, 1))
            add_piece(t, np.arange(n_hold) * dt_trace, hold, np.full(n_hold, LOW))
            t = round(t + config.t_plan, 9)
            if t >= config.t_max:
                outcome = "safe_stop"
                break
            out = attempt(t, state)
            continue
        traj = out.tube.trajectory(out.p, state.u, state.h)
        trace = simulate(traj, state, params, stride=config.trace_stride)
        k_m = int(round(out.tube.t_m / dt_trace))
        nxt = None
        out_of_time = t + out.tube.t_m >= config.t_max
        if not out_of_time and not np.any(goal_fn(trace.states[:k_m + 1])):
            s_m = _state_at(trace, k_m)
            nxt = attempt(round(t + out.tube.t_m, 9), s_m)
        if nxt is not None and nxt.feasible:
            add_piece(t, trace.t[:k_m + 1], trace.states[:k_m + 1], trace.modes[:k_m + 1])
            t, state, out = round(t + out.tube.t_m, 9), s_m, nxt
            continue
        # no successor: run the braking part to the end of the plan
        add_piece(t, trace.t, trace.states, trace.modes)
        t = round(t + traj.t_f, 9)
        state = _state_at(trace, len(trace.t) - 1)
        if np.any(goal_fn(trace.states)):
            break
        if out_of_time:
            outcome = "other"
            break
        if config.wait_when_stopped and t < config.t_max:
            out = attempt(t, state)
            continue
        outcome = "safe_stop"
    ts = np.concatenate(pieces_t) if pieces_t else np.zeros(1)
    ss = np.concatenate(pieces_s) if pieces_s else np.array([z0.to_array()[:6]])
    ms = np.concatenate(pieces_m) if pieces_m else np.array([int(z0.mode)])
    hit = np.flatnonzero(goal_fn(ss))
    t_goal = float(ts[hit[0]]) if len(hit) else None
    crash = collision_fn(ts, ss) if collision_fn is not None else None
    if crash is not None and (t_goal is None or crash <= t_goal):
        outcome = "crash"
    elif t_goal is not None:
        outcome = "success"
    elif outcome is None:
        outcome = "safe_stop"
    return EpisodeLog(records, ts, ss, ms, outcome, t_goal, crash)
