"""Scenario generation, obstacle densities, true traffic and experiment drivers.

Two road layouts are supported: a straight multi-lane highway along +x and
an unprotected left turn across two oncoming lanes.  Obstacles drive at
constant speed along their lane centre; the planner sees per-interval
Gaussian densities and the crash check uses one random draw per interval,
joined piecewise linearly.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import cantelli_risk, mc_risk
from .planner import EpisodeConfig, EpisodeLog, run_receding_horizon
from .reachability import TubeLibrary
from .risk import RiskConstraint, regions_from_tube
from .uncertainty import BivariateBeta, Gaussian, GaussianMixture, ObstacleField
from .vehicle import HIGH, LOW, VehicleParams, VehicleState
from .zonotope import Zonotope2, rot

LANE_WIDTH = 3.7
DT_INTERVAL = 0.1
CRASH_DT = 0.01
OUTCOMES = ("success", "crash", "safe_stop", "other")
PACKAGED_TUBES = Path(__file__).parent / "data" / "tubes"


# ------------------------------------------------------------------ geometry

@dataclass(frozen=True)
class Lane:
    """Straight lane: traffic runs along ``axis`` at lateral ``offset``."""

    axis: str          # "x": horizontal lane at y = offset, "y": vertical lane at x = offset
    offset: float
    heading: float

    def lateral(self, x, y) -> float:
        return (y if self.axis == "x" else x) - self.offset

    def aligned(self, h) -> bool:
        return abs(math.sin(h - self.heading)) < 1e-9 and math.cos(h - self.heading) > 0


@dataclass(frozen=True)
class Obstacle:
    x: float
    y: float
    h: float
    u: float = 0.0

    def position(self, t):
        t = np.asarray(t, dtype=float)
        return np.stack([self.x + self.u * t * math.cos(self.h),
                         self.y + self.u * t * math.sin(self.h)], axis=-1)


def footprint_generators(headings, length: float, width: float) -> np.ndarray:
    """Smallest shared zonotope footprint for obstacles at the given headings.

    One heading class (mod pi) gives the rotated rectangle.  Headings along
    both axes give the convex hull of the two rectangles, an octagon with
    four generators.  Any other mix falls back to the enclosing square of
    the footprint's circumcircle.
    """
    hl, hw = 0.5 * length, 0.5 * width
    classes = set()
    for h in headings:
        c = h % math.pi
        classes.add(0.0 if math.pi - c < 1e-9 else round(c, 9))
    classes = sorted(classes) or [0.0]
    if len(classes) == 1:
        return rot(classes[0]) @ np.diag([hl, hw])
    if classes == [0.0, round(math.pi / 2, 9)]:
        d = 0.5 * (hl - hw)
        return np.array([[hw, 0.0, d, d], [0.0, hw, d, -d]])
    r = math.hypot(hl, hw)
    return np.diag([r, r])


# ------------------------------------------------------------------ scenario

@dataclass
class Scenario:
    """A road layout, its obstacles and the ego start.

    ``goal`` is a world box ``(x_lo, x_hi, y_lo, y_hi)``; ``waypoint`` is a
    fixed target point or None (the highway picks one per plan).
    ``sigma_scale`` multiplies every obstacle standard deviation; zero makes
    true traffic follow the means exactly.
    """

    kind: str
    lanes: list
    obstacles: list
    ego: VehicleState
    goal: tuple
    waypoint: tuple | None = None
    length: float = 4.8
    width: float = 2.0
    lane_width: float = LANE_WIDTH
    dt_interval: float = DT_INTERVAL
    sigma_scale: float = 1.0
    u_goal: float = 20.0
    seed: int = 0

    def __post_init__(self):
        self.lanes = [Lane(**l) if isinstance(l, dict) else l for l in self.lanes]
        self.obstacles = [Obstacle(**o) if isinstance(o, dict) else o for o in self.obstacles]
        if isinstance(self.ego, dict):
            self.ego = VehicleState(**self.ego)
        self.goal = tuple(float(g) for g in self.goal)
        if self.waypoint is not None:
            self.waypoint = tuple(float(w) for w in self.waypoint)
        for k, o in enumerate(self.obstacles):
            if self.lane_of(o) is None:
                raise ValueError(f"obstacle {k + 1} is not inside a lane at t = 0")

    def lane_of(self, o: Obstacle):
        for lane in self.lanes:
            if lane.aligned(o.h) and abs(lane.lateral(o.x, o.y)) + 0.5 * self.width <= 0.5 * self.lane_width + 1e-9:
                return lane
        return None

    @property
    def gobs(self) -> np.ndarray:
        return footprint_generators([o.h for o in self.obstacles], self.length, self.width)

    def in_goal(self, states) -> np.ndarray:
        s = np.atleast_2d(states)
        x_lo, x_hi, y_lo, y_hi = self.goal
        return (s[:, 0] >= x_lo) & (s[:, 0] <= x_hi) & (s[:, 1] >= y_lo) & (s[:, 1] <= y_hi)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ego"] = {k: float(v) if k != "mode" else int(v) for k, v in asdict(self.ego).items()}
        d["goal"] = [g if math.isfinite(g) else (1e300 if g > 0 else -1e300) for g in self.goal]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        d["goal"] = [math.inf if g >= 1e300 else (-math.inf if g <= -1e300 else g) for g in d["goal"]]
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()))


def obstacle_sigmas(s: Scenario, o: Obstacle) -> tuple[float, float]:
    """Longitudinal and lateral standard deviations of one obstacle.

    Three sigma spans ``length + u dt`` along the lane and the free lane
    width ``lane_width - width`` across it.
    """
    if s.width >= s.lane_width:
        raise ValueError("obstacle wider than lane")
    return (s.length + o.u * s.dt_interval) / 6.0, (s.lane_width - s.width) / 6.0


def obstacle_model(s: Scenario, o: Obstacle, g: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance for global interval ``g`` (0-based)."""
    mu = o.position((g + 0.5) * s.dt_interval)
    s_long, s_lat = obstacle_sigmas(s, o)
    r = rot(o.h)
    cov = r @ np.diag([s_long ** 2, s_lat ** 2]) @ r.T * s.sigma_scale ** 2
    return mu, cov


def _interval_index(s: Scenario, t0: float) -> int:
    g0 = t0 / s.dt_interval
    if abs(g0 - round(g0)) > 1e-6:
        raise ValueError("plans must start on the interval grid")
    return int(round(g0))


def build_obstacle_field(s: Scenario, t0: float = 0.0, n_intervals: int = 1) -> ObstacleField:
    """Per (obstacle, interval) Gaussians for a plan starting at ``t0``.

    Interval ``j`` of the plan is global interval ``t0 / dt + j - 1``.
    """
    if s.sigma_scale <= 0:
        raise ValueError("a zero-variance scenario has no densities")
    g0 = _interval_index(s, t0)
    pdfs = {}
    for i, o in enumerate(s.obstacles, start=1):
        for j in range(1, n_intervals + 1):
            mu, cov = obstacle_model(s, o, g0 + j - 1)
            pdfs[(i, j)] = Gaussian(mu, cov)
    return ObstacleField(pdfs, s.gobs, n_intervals)


# ------------------------------------------------------------------ true traffic

@dataclass
class TrueTraffic:
    """Sampled obstacle centres at interval midpoints."""

    t: np.ndarray            # (G,) interval midpoints
    positions: np.ndarray    # (n_obs, G, 2)
    headings: np.ndarray     # (n_obs,)

    def at(self, ts) -> np.ndarray:
        """Piecewise-linear positions at times ``ts``: shape (n_obs, len(ts), 2)."""
        ts = np.asarray(ts, dtype=float)
        out = np.empty((len(self.positions), len(ts), 2))
        for i, pos in enumerate(self.positions):
            out[i, :, 0] = np.interp(ts, self.t, pos[:, 0])
            out[i, :, 1] = np.interp(ts, self.t, pos[:, 1])
        return out


def sample_true_trajectories(s: Scenario, seed: int, t_end: float = 60.0) -> TrueTraffic:
    """One draw per obstacle and interval from its density."""
    n_g = int(math.ceil(t_end / s.dt_interval)) + 1
    rng = np.random.default_rng(seed)
    ts = (np.arange(n_g) + 0.5) * s.dt_interval
    pos = np.empty((len(s.obstacles), n_g, 2))
    for i, o in enumerate(s.obstacles):
        for g in range(n_g):
            mu, cov = obstacle_model(s, o, g)
            z = rng.standard_normal(2)
            if s.sigma_scale > 0:
                pos[i, g] = mu + np.linalg.cholesky(cov) @ z
            else:
                pos[i, g] = mu
    return TrueTraffic(ts, pos, np.array([o.h for o in s.obstacles]))


def rectangles_overlap(ca, ha, cb, hb, half_a, half_b) -> np.ndarray:
    """Separating-axis test for pairs of oriented rectangles (broadcasting)."""
    ca, cb = np.asarray(ca, float), np.asarray(cb, float)
    ha, hb = np.asarray(ha, float), np.asarray(hb, float)
    d = cb - ca
    axes = [(np.cos(ha), np.sin(ha)), (-np.sin(ha), np.cos(ha)),
            (np.cos(hb), np.sin(hb)), (-np.sin(hb), np.cos(hb))]
    ua = [axes[0], axes[1]]
    ub = [axes[2], axes[3]]
    sep = np.zeros(np.broadcast(d[..., 0], ha, hb).shape, dtype=bool)
    for nx, ny in axes:
        ra = sum(h * np.abs(nx * ex + ny * ey) for h, (ex, ey) in zip(half_a, ua))
        rb = sum(h * np.abs(nx * ex + ny * ey) for h, (ex, ey) in zip(half_b, ub))
        sep |= np.abs(d[..., 0] * nx + d[..., 1] * ny) > ra + rb
    return ~sep


def first_collision(ts, states, traffic: TrueTraffic, s: Scenario, params: VehicleParams,
                    dt: float = CRASH_DT):
    """Earliest time the ego footprint touches a sampled obstacle, or None."""
    ts = np.asarray(ts, dtype=float)
    if len(traffic.positions) == 0 or len(ts) == 0:
        return None
    grid = np.arange(ts[0], ts[-1] + 0.5 * dt, dt)
    ex = np.interp(grid, ts, states[:, 0])
    ey = np.interp(grid, ts, states[:, 1])
    eh = np.interp(grid, ts, states[:, 2])
    obs = traffic.at(grid)
    hit = rectangles_overlap(np.stack([ex, ey], -1)[None], eh[None], obs, traffic.headings[:, None],
                             (0.5 * params.length, 0.5 * params.width), (0.5 * s.length, 0.5 * s.width))
    k = np.flatnonzero(hit.any(axis=0))
    return float(grid[k[0]]) if len(k) else None


# ------------------------------------------------------------------ layouts

@dataclass
class HighwayConfig:
    n_lanes: int = 3
    road_length: float = 300.0
    n_static: tuple = (2, 3)
    n_dynamic: tuple = (2, 8)
    ego_speed: tuple = (16.0, 20.0)
    lane_speed: tuple = (10.0, 16.0)
    start_clear: float = 40.0
    static_x: tuple = (60.0, 260.0)
    static_gap: float = 40.0
    dynamic_gap: float = 15.0
    u_goal: float = 20.0

    @classmethod
    def from_dict(cls, d: dict) -> "HighwayConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()
                      if k in cls.__dataclass_fields__})


@dataclass
class LeftTurnConfig:
    n_static: tuple = (4, 6)
    n_dynamic: tuple = (1, 4)
    dynamic_speed: tuple = (12.0, 17.0)
    dynamic_y: tuple = (10.0, 110.0)
    dynamic_gap: float = 20.0
    static_x: tuple = (22.0, 60.0)
    static_gap: float = 8.0
    ego_y: float = -8.0
    goal_x: float = -9.25
    waypoint: tuple = (-14.0, 1.85)

    @classmethod
    def from_dict(cls, d: dict) -> "LeftTurnConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()
                      if k in cls.__dataclass_fields__})


def _place(rng, lo, hi, taken, gap, tries=200):
    for _ in range(tries):
        x = float(rng.uniform(lo, hi))
        if all(abs(x - t) >= gap for t in taken):
            return x
    return None


def make_highway(seed: int, cfg: HighwayConfig | None = None) -> Scenario:
    cfg = cfg or HighwayConfig()
    rng = np.random.default_rng(seed)
    lanes = [Lane("x", k * LANE_WIDTH, 0.0) for k in range(cfg.n_lanes)]
    ego_lane = int(rng.integers(cfg.n_lanes))
    u0 = float(rng.uniform(*cfg.ego_speed))
    ego = VehicleState(0.0, lanes[ego_lane].offset, 0.0, u0, mode=HIGH)
    obstacles = []
    statics = []
    # statics are spaced along the road so no two block the same stretch
    for _ in range(int(rng.integers(cfg.n_static[0], cfg.n_static[1] + 1))):
        x = _place(rng, *cfg.static_x, [x for x, _ in statics], cfg.static_gap)
        if x is not None:
            statics.append((x, int(rng.integers(cfg.n_lanes))))
    for x, k in statics:
        obstacles.append(Obstacle(x, lanes[k].offset, 0.0, 0.0))
    speeds = rng.uniform(*cfg.lane_speed, size=cfg.n_lanes)
    taken = {k: [] for k in range(cfg.n_lanes)}
    for _ in range(int(rng.integers(cfg.n_dynamic[0], cfg.n_dynamic[1] + 1))):
        k = int(rng.integers(cfg.n_lanes))
        # moving cars start ahead of every static car in their lane so they never meet
        lo = max([cfg.start_clear] + [x + cfg.dynamic_gap for x, kk in statics if kk == k])
        if lo >= cfg.road_length:
            continue
        x = _place(rng, lo, cfg.road_length, taken[k], cfg.dynamic_gap)
        if x is not None:
            taken[k].append(x)
            obstacles.append(Obstacle(x, lanes[k].offset, 0.0, float(speeds[k])))
    goal = (cfg.road_length, math.inf, -math.inf, math.inf)
    return Scenario("highway", lanes, obstacles, ego, goal, None, u_goal=cfg.u_goal, seed=seed)


def make_left_turn(seed: int, cfg: LeftTurnConfig | None = None) -> Scenario:
    cfg = cfg or LeftTurnConfig()
    rng = np.random.default_rng(seed)
    a, b = 0.5 * LANE_WIDTH, 1.5 * LANE_WIDTH
    lanes = [Lane("y", a, math.pi / 2), Lane("y", b, math.pi / 2),
             Lane("y", -a, -math.pi / 2), Lane("y", -b, -math.pi / 2),
             Lane("x", a, math.pi), Lane("x", b, math.pi),
             Lane("x", -a, 0.0), Lane("x", -b, 0.0)]
    ego = VehicleState(a, cfg.ego_y, math.pi / 2, 0.0, mode=LOW)
    obstacles = []
    taken = {}
    for _ in range(int(rng.integers(cfg.n_static[0], cfg.n_static[1] + 1))):
        lane = lanes[4 + int(rng.integers(4))]
        for _ in range(50):
            x = float(rng.uniform(*cfg.static_x)) * (1 if rng.uniform() < 0.5 else -1)
            # keep the far end of the turn clear
            if lane.offset == a and -30.0 < x < 0.0:
                continue
            if all(abs(x - t) >= cfg.static_gap for t in taken.setdefault(lane.offset, [])):
                taken[lane.offset].append(x)
                obstacles.append(Obstacle(x, lane.offset, lane.heading, 0.0))
                break
    speeds = {-a: float(rng.uniform(*cfg.dynamic_speed)), -b: float(rng.uniform(*cfg.dynamic_speed))}
    ys = {-a: [], -b: []}
    for _ in range(int(rng.integers(cfg.n_dynamic[0], cfg.n_dynamic[1] + 1))):
        x = -a if rng.uniform() < 0.5 else -b
        y = _place(rng, *cfg.dynamic_y, ys[x], cfg.dynamic_gap)
        if y is not None:
            ys[x].append(y)
            obstacles.append(Obstacle(x, y, -math.pi / 2, speeds[x]))
    goal = (-math.inf, cfg.goal_x, 0.0, math.inf)
    return Scenario("left_turn", lanes, obstacles, ego, goal, tuple(cfg.waypoint), seed=seed)


# ------------------------------------------------------------------ episode glue

def highway_waypoint(s: Scenario, lookahead: float = 150.0, switch_gain: float = 10.0, horizon: float = 6.0,
                     a_brk: float = 5.0, t_drive: float = 6.0, margin: float = 25.0):
    """Waypoint chooser for the highway.

    The free distance of a lane is the smallest ``dx + u * horizon`` over
    cars in it that are not far behind, so slow or parked cars count as
    closer than moving ones.  The ego stays in lane unless an adjacent
    lane is clearly freer.  The target speed is the largest one that can
    still drive ``t_drive`` seconds and brake at ``a_brk`` short of the
    nearest car ahead in the target lane, less ``margin``.
    """
    offsets = [l.offset for l in s.lanes]

    def ahead(t0, st, k, look):
        g = math.inf
        for o in s.obstacles:
            if abs(o.y - offsets[k]) > 1e-6:
                continue
            dx = float(o.position(t0)[0]) - st.x
            if dx > -15.0:
                g = min(g, dx + o.u * look)
        return g

    def fn(t0, st):
        cur = int(np.argmin([abs(st.y - c) for c in offsets]))
        gaps = {k: ahead(t0, st, k, horizon) for k in (cur - 1, cur, cur + 1) if 0 <= k < len(offsets)}
        target = cur
        if gaps[cur] < lookahead:
            best = max(sorted(gaps), key=lambda k: gaps[k])
            if gaps[best] > gaps[cur] + switch_gain:
                target = best
        free = ahead(t0, st, target, t_drive) - margin
        # u t_drive + u^2 / (2 a_brk) = free
        u_stop = -a_brk * t_drive + math.sqrt((a_brk * t_drive) ** 2 + 2 * a_brk * max(free, 0.0))
        x0, y_t, u = st.x, offsets[target], min(s.u_goal, u_stop)
        return lambda t_m: np.array([x0 + u * t_m, y_t])

    return fn


def scenario_candidates(s: Scenario, library: TubeLibrary):
    """Tube filter: left turns only at the junction, no lane change off the road."""
    if s.kind == "left_turn":
        return lambda t0, st: library.candidates(st, families=("left_turn",))
    offsets = [l.offset for l in s.lanes]

    def fn(t0, st):
        cur = int(np.argmin([abs(st.y - c) for c in offsets]))
        out = []
        for t in library.candidates(st):
            if t.family == "left_turn":
                continue
            if t.family == "lane_change":
                side = 1 if t.p_lo[1] > 0 else -1
                if not 0 <= cur + side < len(offsets):
                    continue
            out.append(t)
        return out

    return fn


@dataclass
class EpisodeResult:
    scenario: int
    trial: int
    epsilon: float
    mode: str
    outcome: str
    time_to_goal: float | None
    crash_time: float | None
    plans: int
    feasible_plans: int
    max_certified_risk: float
    max_audit_excess: float
    audit_violations: int
    solve_wall_mean: float
    solve_wall_max: float


def run_episode(s: Scenario, library: TubeLibrary, params: VehicleParams, config: EpisodeConfig,
                traffic_seed: int) -> EpisodeLog:
    traffic = sample_true_trajectories(s, traffic_seed, t_end=config.t_max + 20.0)
    if s.kind == "left_turn":
        wp = lambda t0, st: np.asarray(s.waypoint, float)
    else:
        wp = highway_waypoint(s)
    return run_receding_horizon(
        s.ego, library, params,
        field_source=lambda t0, n: build_obstacle_field(s, t0, n),
        waypoint_fn=wp, goal_fn=s.in_goal, config=config,
        collision_fn=lambda ts, ss: first_collision(ts, ss, traffic, s, params),
        candidates_fn=scenario_candidates(s, library))


def _summarise(log: EpisodeLog, k: int, trial: int, config: EpisodeConfig) -> EpisodeResult:
    feas = [r for r in log.iterations if r.status == "feasible"]
    excess = [r.audit_risk - 3 * r.audit_se - r.certified_risk for r in feas if r.audit_risk is not None]
    walls = [r.solve_time for r in log.iterations] or [0.0]
    return EpisodeResult(k, trial, config.epsilon, config.mode, log.outcome, log.time_to_goal, log.crash_time,
                         len(log.iterations), len(feas), max((r.certified_risk for r in feas), default=0.0),
                         max(excess, default=-math.inf), sum(e > 0 for e in excess),
                         float(np.mean(walls)), float(np.max(walls)))


# ------------------------------------------------------------------ reports

@dataclass
class ExperimentReport:
    """Per-trial rows plus summary table rows.

    Columns whose name contains ``wall`` are timings; they are left out of
    :meth:`deterministic_view`.
    """

    name: str
    rows: list
    summary: list = field(default_factory=list)
    risk_errors: dict = field(default_factory=dict)

    def outcome_counts(self, **match) -> dict:
        sel = [r for r in self.rows if all(r.get(k) == v for k, v in match.items())]
        return {o: sum(r["outcome"] == o for r in sel) for o in OUTCOMES}

    def deterministic_view(self) -> dict:
        strip = lambda rows: [{k: v for k, v in r.items() if "wall" not in k} for r in rows]
        return {"rows": strip(self.rows), "summary": strip(self.summary), "risk_errors": self.risk_errors}

    def write(self, out_dir) -> list:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        paths = []
        for suffix, rows in (("cases" if self.rows and "case" in self.rows[0] else "trials", self.rows),
                             ("summary", self.summary)):
            if not rows:
                continue
            p = d / f"{self.name}_{suffix}.csv"
            with open(p, "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=list(rows[0]))
                w.writeheader()
                w.writerows(rows)
            paths.append(p)
        return paths


def _run_trials(jobs, fn, workers: int):
    """Map ``fn`` over ``jobs`` keeping input order."""
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


def _seq_seed(*parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _fractions(rows) -> dict:
    n = len(rows)
    return {o: (sum(r["outcome"] == o for r in rows) / n if n else 0.0) for o in OUTCOMES}


def run_left_turn_sweep(eps_list=(0.01, 0.05, 0.1, 0.2, 0.5), n_scenarios: int = 20, trials: int = 1,
                        seed: int = 0, library: TubeLibrary | None = None, params: VehicleParams | None = None,
                        config: EpisodeConfig | None = None, layout: LeftTurnConfig | None = None,
                        workers: int = 1) -> ExperimentReport:
    """Left turns at each risk threshold on the same scenarios and traffic draws."""
    params = params or VehicleParams()
    library = library or default_library(params)
    base = config or EpisodeConfig(t_max=40.0, wait_when_stopped=True)
    scen = [make_left_turn(_seq_seed(seed, k), layout) for k in range(n_scenarios)]
    jobs = [(e, k, tr) for e in eps_list for k in range(n_scenarios) for tr in range(trials)]

    def one(job):
        e, k, tr = job
        cfg = replace(base, epsilon=float(e), seed=_seq_seed(seed, k, tr, 1))
        log = run_episode(scen[k], library, params, cfg, _seq_seed(seed, k, tr, 2))
        return asdict(_summarise(log, k, tr, cfg))

    rows = _run_trials(jobs, one, workers)
    summary = []
    for e in eps_list:
        sel = [r for r in rows if r["epsilon"] == float(e)]
        fr = _fractions(sel)
        ttg = [r["time_to_goal"] for r in sel if r["outcome"] == "success"]
        summary.append({"epsilon": float(e), "success_pct": 100 * fr["success"], "crash_pct": 100 * fr["crash"],
                        "safe_stop_pct": 100 * fr["safe_stop"], "other_pct": 100 * fr["other"],
                        "attg_s": float(np.mean(ttg)) if ttg else math.nan,
                        "mttg_s": float(np.max(ttg)) if ttg else math.nan, "trials": len(sel),
                        "audit_violations": sum(r["audit_violations"] for r in sel),
                        "solve_wall_mean": float(np.mean([r["solve_wall_mean"] for r in sel])) if sel else 0.0,
                        "solve_wall_max": max((r["solve_wall_max"] for r in sel), default=0.0)})
    return ExperimentReport("left_turn", rows, summary)


def run_highway_suite(n_scenarios: int = 20, trials: int = 3, eps: float = 0.05, seed: int = 0,
                      modes=("stochastic", "deterministic"), library: TubeLibrary | None = None,
                      params: VehicleParams | None = None, config: EpisodeConfig | None = None,
                      layout: HighwayConfig | None = None, workers: int = 1) -> ExperimentReport:
    """Highway episodes in each planning mode on matched scenarios and traffic."""
    params = params or VehicleParams()
    library = library or default_library(params)
    base = config or EpisodeConfig(t_max=40.0)
    scen = [make_highway(_seq_seed(seed, k), layout) for k in range(n_scenarios)]
    jobs = [(m, k, tr) for m in modes for k in range(n_scenarios) for tr in range(trials)]

    def one(job):
        m, k, tr = job
        cfg = replace(base, epsilon=float(eps), mode=m, seed=_seq_seed(seed, k, tr, 1))
        log = run_episode(scen[k], library, params, cfg, _seq_seed(seed, k, tr, 2))
        return asdict(_summarise(log, k, tr, cfg))

    rows = _run_trials(jobs, one, workers)
    summary = []
    for m in modes:
        sel = [r for r in rows if r["mode"] == m]
        fr = _fractions(sel)
        ttg = [r["time_to_goal"] for r in sel if r["outcome"] == "success"]
        summary.append({"mode": m, "epsilon": float(eps), "success_pct": 100 * fr["success"],
                        "crash_pct": 100 * fr["crash"], "safe_stop_pct": 100 * fr["safe_stop"],
                        "other_pct": 100 * fr["other"],
                        "other_action_pct": 100 * (fr["safe_stop"] + fr["other"]),
                        "attg_s": float(np.mean(ttg)) if ttg else math.nan, "trials": len(sel),
                        "audit_violations": sum(r["audit_violations"] for r in sel),
                        "solve_wall_mean": float(np.mean([r["solve_wall_mean"] for r in sel])) if sel else 0.0,
                        "solve_wall_max": max((r["solve_wall_max"] for r in sel), default=0.0)})
    return ExperimentReport("highway", rows, summary)


# ------------------------------------------------------------------ tightness benchmark

KINDS = ("gaussian", "beta", "mixture")


def _random_footprint(rng) -> np.ndarray:
    return rot(int(rng.integers(4)) * math.pi / 2 + rng.uniform(-0.05, 0.05)) @ np.diag([2.4, 1.0])


def _random_gaussian(rng, center, half, spread=1.5, sd=(1.0, 3.0)) -> Gaussian:
    mu = center + rng.uniform(-1, 1, 2) * half * spread
    s = rng.uniform(*sd, size=2)
    r = rot(rng.uniform(0, math.pi))
    return Gaussian(mu, r @ np.diag(s ** 2) @ r.T)


def random_case_model(kind: str, rng, region: Zonotope2):
    """Obstacle density near ``region``: per-axis spread of roughly 1 to 3 m."""
    lo, hi = region.bbox()
    center, half = region.center, 0.5 * (hi - lo)
    if kind == "gaussian":
        return _random_gaussian(rng, center, half)
    if kind == "beta":
        # shape 4 marginals have standard deviation scale / 6
        scale = rng.uniform(6.0, 18.0, size=2)
        mid = center + rng.uniform(-1, 1, 2) * half * 1.5
        return BivariateBeta((4, 4, 4, 4), float(rng.uniform(-2.0, 2.0)), mid - 0.5 * scale, scale)
    if kind == "mixture":
        n = int(rng.integers(2, 4))
        comps = tuple(_random_gaussian(rng, center, half) for _ in range(n))
        return GaussianMixture(rng.dirichlet(np.ones(n)), comps)
    raise ValueError(f"unknown kind {kind!r}; expected one of {KINDS}")


def random_case(library: TubeLibrary, rng):
    """A random (tube, interval, start state, parameter) tuple."""
    tb = library.tubes[int(rng.integers(len(library.tubes)))]
    j = int(rng.integers(1, tb.n_intervals + 1))
    h0 = (math.pi / 2 if tb.family == "left_turn" else 0.0) + rng.uniform(-0.05, 0.05)
    z0 = VehicleState(0.0, 0.0, h0, rng.uniform(*tb.u_cell), rng.uniform(-tb.v_max, tb.v_max),
                      rng.uniform(-tb.r_max, tb.r_max))
    p = tb.p_lo + rng.uniform(size=len(tb.p_lo)) * (tb.p_hi - tb.p_lo)
    return tb, j, z0, p


def run_tightness_benchmark(n: int = 500, kinds=KINDS, k: int = 24, seed: int = 0,
                            library: TubeLibrary | None = None, mc_samples: int = 1_000_000,
                            hess_split: int = 4, workers: int = 1) -> ExperimentReport:
    """Closed-form bound, its lower variant, Monte Carlo and Cantelli per random case."""
    library = library or default_library(VehicleParams())

    def one(job):
        kind, c = job
        rng = np.random.default_rng([seed, KINDS.index(kind), c])
        tb, j, z0, p = random_case(library, rng)
        gobs = _random_footprint(rng)
        regs = regions_from_tube(tb, z0)
        cj, aj, gj = regs[j - 1]
        region = Zonotope2(cj + aj @ p, np.hstack([gj, gobs]))
        m = random_case_model(kind, rng, region)
        fld = ObstacleField({(1, j): m}, gobs, tb.n_intervals)
        t0 = time.perf_counter()
        rc = RiskConstraint(regs, fld, p, p, k, hess_split=hess_split)
        rep = rc.evaluate(p, lower=True)
        t1 = time.perf_counter()
        mc = mc_risk(region, m, mc_samples, seed=_seq_seed(seed, KINDS.index(kind), c, 7))
        t2 = time.perf_counter()
        cant = cantelli_risk(region, m.mean(), m.cov())
        t3 = time.perf_counter()
        return {"case": c, "kind": kind, "tube": tb.name, "interval": j,
                "closed_form": rep.total, "lower": rep.lower_total, "mc": mc.value, "mc_se": mc.std_error,
                "cantelli": cant, "error": rep.total - mc.value, "cantelli_error": cant - mc.value,
                "conservative": bool(rep.total >= mc.value - 3 * mc.std_error),
                "cantelli_valid": bool(cant >= mc.value - 3 * mc.std_error),
                "triangles": rep.triangle_count, "wall_closed_form": t1 - t0, "wall_mc": t2 - t1,
                "wall_cantelli": t3 - t2}

    jobs = [(kind, c) for kind in kinds for c in range(n)]
    rows = _run_trials(jobs, one, workers)
    summary, errs = [], {}
    for kind in kinds:
        sel = [r for r in rows if r["kind"] == kind]
        e = np.array([r["error"] for r in sel])
        ce = np.array([r["cantelli_error"] for r in sel])
        errs[kind] = {"mean": float(e.mean()), "max": float(e.max()), "cantelli_mean": float(ce.mean())}
        summary.append({"kind": kind, "cases": len(sel), "mean_error": float(e.mean()), "max_error": float(e.max()),
                        "cantelli_mean_error": float(ce.mean()), "cantelli_max_error": float(ce.max()),
                        "conservative_pct": 100 * np.mean([r["conservative"] for r in sel]),
                        "cantelli_valid_pct": 100 * np.mean([r["cantelli_valid"] for r in sel]),
                        "mean_lower_gap": float(np.mean([r["closed_form"] - r["lower"] for r in sel])),
                        "wall_closed_form_mean": float(np.mean([r["wall_closed_form"] for r in sel])),
                        "wall_mc_mean": float(np.mean([r["wall_mc"] for r in sel]))})
    return ExperimentReport("tightness", rows, summary, errs)


def run_gradient_check(n: int = 100, kinds=KINDS, k: int = 24, seed: int = 0, h: float = 1e-6,
                       library: TubeLibrary | None = None, hess_split: int = 4) -> ExperimentReport:
    """Analytic risk gradient against central differences of the same relaxation.

    Hessian enclosures are taken over the tube's whole parameter box, so the
    relaxation is one smooth function of ``p`` and the gradient is exact.
    """
    library = library or default_library(VehicleParams())
    rows = []
    for kind in kinds:
        for c in range(n):
            rng = np.random.default_rng([seed, KINDS.index(kind), c, 11])
            tb, j, z0, p = random_case(library, rng)
            # keep central differences inside the box
            act = tb.p_hi > tb.p_lo
            p = np.where(act, np.clip(p, tb.p_lo + 2 * h, tb.p_hi - 2 * h), p)
            gobs = _random_footprint(rng)
            regs = regions_from_tube(tb, z0)
            cj, aj, gj = regs[j - 1]
            region = Zonotope2(cj + aj @ p, np.hstack([gj, gobs]))
            m = random_case_model(kind, rng, region)
            rc = RiskConstraint(regs, ObstacleField({(1, j): m}, gobs, tb.n_intervals), tb.p_lo, tb.p_hi, k,
                                hess_split=hess_split)
            g = rc.evaluate(p).gradient
            fd = np.zeros_like(g)
            for q in range(len(p)):
                if tb.p_hi[q] <= tb.p_lo[q]:
                    continue
                e = np.zeros_like(p)
                e[q] = h
                fd[q] = (rc.evaluate(p + e).total - rc.evaluate(p - e).total) / (2 * h)
            scale = float(np.max(np.abs(fd)))
            rel = float(np.max(np.abs(g - fd))) / scale if scale > 0 else float(np.max(np.abs(g)))
            rows.append({"case": c, "kind": kind, "tube": tb.name, "interval": j,
                         "grad": g.tolist(), "fd": fd.tolist(), "rel_error": rel})
    summary = [{"kind": kind, "cases": sum(r["kind"] == kind for r in rows),
                "max_rel_error": max(r["rel_error"] for r in rows if r["kind"] == kind)} for kind in kinds]
    return ExperimentReport("grad_check", rows, summary)


# ------------------------------------------------------------------ tube library

def default_library(params: VehicleParams, cache_dir=None, n_samples: int = 200, seed: int = 0) -> TubeLibrary:
    """The default tube library.

    ``cache_dir`` (or the ``CHANCEPLAN_TUBES`` environment variable) names
    a directory that is filled on first use.  Without either, the library
    shipped with the package is loaded.
    """
    import os
    from .reachability import build_library
    cache_dir = cache_dir or os.environ.get("CHANCEPLAN_TUBES")
    if cache_dir is None:
        return TubeLibrary.load(PACKAGED_TUBES)
    return build_library(params, n_samples=n_samples, seed=seed, cache_dir=cache_dir)
