"""Parameterised reach tubes built from sampled closed-loop simulations.

A tube stores, for every time interval ``j``, a zonotope
``<c_j(u0) + A_j p, G_j>`` in the body frame of the initial state.  The
center is affine in the initial speed ``u0`` and in the trajectory
parameter ``p``.  Tubes are fitted to simulated footprints, inflated and
checked empirically against fresh simulations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .vehicle import (DT, HIGH, LOW, MANEUVER_TIME, DesiredTrajectory, VehicleParams,
                      VehicleState, footprint_vertices, random_disturbance, simulate_batch,
                      zero_disturbance)
from .zonotope import Zonotope2, rot

SCHEMA_VERSION = 1
SUB_STEPS = 10          # footprint samples per interval (plus the closing endpoint)


@dataclass
class ReachTube:
    family: str
    u_cell: tuple                 # (u_lo, u_hi) initial speed cell
    v_max: float                  # |v0| bound of the cell
    r_max: float                  # |r0| bound of the cell
    p_lo: np.ndarray
    p_hi: np.ndarray
    dt_interval: float
    t_f: float
    u_ref: float
    c0: np.ndarray                # (J, 2)
    c_u: np.ndarray               # (J, 2) sensitivity of the center to u0
    a: np.ndarray                 # (J, 2, n_p)
    g: np.ndarray                 # (J, 2, l)
    a_brk: float = 5.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("p_lo", "p_hi", "c0", "c_u", "a", "g"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        self.u_cell = tuple(float(v) for v in self.u_cell)

    @property
    def n_intervals(self) -> int:
        return self.c0.shape[0]

    @property
    def t_m(self) -> float:
        return MANEUVER_TIME[self.family]

    @property
    def name(self) -> str:
        side = "" if self.family != "lane_change" else ("_left" if self.p_hi[1] > 0 else "_right")
        return (f"{self.family}{side}_u{self.u_cell[0]:g}-{self.u_cell[1]:g}"
                f"_pu{self.p_lo[0]:g}-{self.p_hi[0]:g}")

    def center_body(self, u0: float) -> np.ndarray:
        return self.c0 + self.c_u * (u0 - self.u_ref)

    def in_cell(self, state: VehicleState, tol: float = 1e-6) -> bool:
        return (self.u_cell[0] - tol <= state.u <= self.u_cell[1] + tol
                and abs(state.v) <= self.v_max + tol and abs(state.r) <= self.r_max + tol)

    def trajectory(self, p, u0: float, h0: float = 0.0) -> DesiredTrajectory:
        return DesiredTrajectory(self.family, tuple(p), u0=u0, h0=h0, a_brk=self.a_brk, t_f=self.t_f)

    def body_zonotopes(self, u0: float, p) -> list:
        c = self.center_body(u0) + self.a @ np.asarray(p, float)
        return [Zonotope2(c[j], self.g[j]) for j in range(self.n_intervals)]

    def sub_boxes(self, widths) -> list:
        """Partition of the parameter box into a grid of boxes no wider than ``widths``."""
        edges = []
        for lo, hi, w in zip(self.p_lo, self.p_hi, widths):
            n = max(1, int(math.ceil((hi - lo) / w - 1e-9)))
            edges.append(np.linspace(lo, hi, n + 1))
        boxes = []
        for idx in np.ndindex(*[len(e) - 1 for e in edges]):
            lo = np.array([e[i] for e, i in zip(edges, idx)])
            hi = np.array([e[i + 1] for e, i in zip(edges, idx)])
            boxes.append((lo, hi))
        return boxes

    def deflated(self, factor: float) -> "ReachTube":
        """Copy with generators scaled by ``factor`` (negative controls)."""
        return ReachTube(self.family, self.u_cell, self.v_max, self.r_max, self.p_lo, self.p_hi,
                         self.dt_interval, self.t_f, self.u_ref, self.c0, self.c_u, self.a,
                         self.g * factor, self.a_brk, dict(self.meta))

    # -------------------------------------------------------------- IO
    def to_dict(self) -> dict:
        return {"version": SCHEMA_VERSION, "family": self.family, "u_cell": list(self.u_cell),
                "v_max": self.v_max, "r_max": self.r_max, "p_lo": self.p_lo.tolist(),
                "p_hi": self.p_hi.tolist(), "dt_interval": self.dt_interval, "t_f": self.t_f,
                "u_ref": self.u_ref, "a_brk": self.a_brk, "c0": self.c0.tolist(),
                "c_u": self.c_u.tolist(), "A": self.a.tolist(), "G": self.g.tolist(),
                "meta": self.meta}

    @classmethod
    def from_dict(cls, d: dict) -> "ReachTube":
        if d.get("version") != SCHEMA_VERSION:
            raise ValueError("unsupported tube file version")
        return cls(d["family"], tuple(d["u_cell"]), d["v_max"], d["r_max"], d["p_lo"], d["p_hi"],
                   d["dt_interval"], d["t_f"], d["u_ref"], d["c0"], d["c_u"], d["A"], d["G"],
                   d.get("a_brk", 5.0), d.get("meta", {}))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "ReachTube":
        return cls.from_dict(json.loads(Path(path).read_text()))


def tube_to_world(tube: ReachTube, z0: VehicleState) -> list:
    """World-frame ``(zonotope at p = 0, A_j)`` pairs for initial state ``z0``."""
    if not tube.in_cell(z0):
        raise ValueError(f"initial state outside the cell of tube {tube.name}")
    r = rot(z0.h)
    c = tube.center_body(z0.u) @ r.T + np.array([z0.x, z0.y])
    return [(Zonotope2(c[j], r @ tube.g[j]), r @ tube.a[j]) for j in range(tube.n_intervals)]


# ------------------------------------------------------------------ sampling

@dataclass
class SampleSet:
    u0: np.ndarray
    v0: np.ndarray
    r0: np.ndarray
    p: np.ndarray
    dists: np.ndarray


def _draw_samples(rng, n, u_cell, v_max, r_max, p_lo, p_hi, disturb: bool, grid=None) -> SampleSet:
    u0 = rng.uniform(u_cell[0], u_cell[1], n)
    p = p_lo + rng.uniform(size=(n, len(p_lo))) * (p_hi - p_lo)
    if grid is not None:
        k = len(grid[0])
        u0[:k], p[:k] = grid
    v0 = rng.uniform(-v_max, v_max, n)
    r0 = rng.uniform(-r_max, r_max, n)
    dists = np.stack([random_disturbance(rng) if disturb else zero_disturbance() for _ in range(n)])
    return SampleSet(u0, v0, r0, p, dists)


def _corner_grid(u_cell, p_lo, p_hi, n_u=3, n_pts=4):
    us = np.unique(np.linspace(u_cell[0], u_cell[1], n_u))
    axes = [np.unique(np.linspace(lo, hi, n_pts)) for lo, hi in zip(p_lo, p_hi)]
    mesh = np.meshgrid(us, *axes, indexing="ij")
    flat = np.stack([m.ravel() for m in mesh], axis=1)
    return flat[:, 0], flat[:, 1:]


def run_samples(family, t_f, a_brk, samples: SampleSet, params: VehicleParams,
                stride: int, batch: int = 64) -> np.ndarray:
    """Body-frame closed-loop states (n, n_rec, 9) for the sample set."""
    n = len(samples.u0)
    n_steps = int(round(t_f / DT))
    n_rec = n_steps // stride + 1
    out = np.zeros((n, n_rec, 9))
    prm = params.to_array()
    for s in range(0, n, batch):
        e = min(n, s + batch)
        s0 = np.zeros((e - s, 8))
        s0[:, 3] = samples.u0[s:e]
        s0[:, 4] = samples.v0[s:e]
        s0[:, 5] = samples.r0[s:e]
        modes = np.where(samples.u0[s:e] > params.u_c, HIGH, LOW).astype(np.int64)
        trajs = np.stack([DesiredTrajectory(family, tuple(samples.p[i]), u0=samples.u0[i],
                                            a_brk=a_brk, t_f=t_f).to_array() for i in range(s, e)])
        simulate_batch(s0, modes, prm, trajs, samples.dists[s:e], n_steps, DT, stride, out[s:e])
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite state in tube sampling")
    return out


def horizon_for(family: str, p_hi, a_brk: float, dt_interval: float) -> float:
    t = MANEUVER_TIME[family] + max(float(p_hi[0]), 0.0) / a_brk + 1.0
    return math.ceil(t / dt_interval - 1e-9) * dt_interval


def build_tube(family: str, u_cell, p_lo, p_hi, params: VehicleParams, n_samples: int = 200,
               bloat: float = 0.15, seed: int = 0, v_max: float = 0.3, r_max: float = 0.1,
               dt_interval: float = 0.1, disturb: bool = True, a_brk: float | None = None) -> ReachTube:
    """Fit a reach tube to simulated footprints.

    Per interval the footprint corners at ``SUB_STEPS + 1`` times are
    collected.  Each sample's box center (in a heading-aligned frame) is
    regressed on ``[1, u0 - u_ref, p]``; the residual spread of all corners
    gives the generators, inflated by ``bloat`` plus three times the largest
    regression residual.
    """
    a_brk = params.a_brk if a_brk is None else a_brk
    p_lo = np.asarray(p_lo, float)
    p_hi = np.asarray(p_hi, float)
    if u_cell[1] <= params.u_c:
        v_max = r_max = 0.0
    rng = np.random.default_rng(seed)
    grid = _corner_grid(u_cell, p_lo, p_hi)
    n = max(n_samples, len(grid[0]))
    if n < 4 * len(p_lo):
        raise ValueError("need at least 4 samples per parameter dimension")
    samples = _draw_samples(rng, n, u_cell, v_max, r_max, p_lo, p_hi, disturb, grid)
    t_f = horizon_for(family, p_hi, a_brk, dt_interval)
    stride = int(round(dt_interval / DT / SUB_STEPS))
    states = run_samples(family, t_f, a_brk, samples, params, stride)
    n_int = int(round(t_f / dt_interval))
    verts = footprint_vertices(states[:, :, :3].reshape(-1, 3), params).reshape(n, -1, 4, 2)
    u_ref = 0.5 * (u_cell[0] + u_cell[1])
    n_p = len(p_lo)
    active = p_hi > p_lo
    feats = np.column_stack([np.ones(n), samples.u0 - u_ref, samples.p[:, active]])
    use_u = u_cell[1] > u_cell[0]
    if not use_u:
        feats[:, 1] = 0.0
    c0 = np.zeros((n_int, 2))
    c_u = np.zeros((n_int, 2))
    a = np.zeros((n_int, 2, n_p))
    g = np.zeros((n_int, 2, 2))
    fit_res = np.zeros(n_int)
    for j in range(n_int):
        pts = verts[:, j * SUB_STEPS:(j + 1) * SUB_STEPS + 1].reshape(n, -1, 2)
        hs = states[:, j * SUB_STEPS:(j + 1) * SUB_STEPS + 1, 2]
        theta = math.atan2(np.sin(hs).mean(), np.cos(hs).mean())
        r = rot(theta)
        loc = pts @ r                                   # heading-aligned coordinates
        mid = 0.5 * (loc.min(axis=1) + loc.max(axis=1)) @ r.T
        coef, *_ = np.linalg.lstsq(feats, mid, rcond=None)
        mask = np.abs(feats).sum(axis=0) > 0
        coef[~mask] = 0.0
        pred = feats @ coef
        fit_res[j] = np.max(np.linalg.norm(mid - pred, axis=1))
        res = (pts - pred[:, None, :]) @ r
        lo, hi = res.reshape(-1, 2).min(axis=0), res.reshape(-1, 2).max(axis=0)
        shift = r @ (0.5 * (lo + hi))
        half = 0.5 * (hi - lo) + bloat + 3.0 * fit_res[j]
        c0[j] = coef[0] + shift
        c_u[j] = coef[1]
        a[j][:, active] = coef[2:].T
        g[j] = r @ np.diag(half)
    meta = {"n_samples": int(n), "seed": int(seed), "bloat": bloat, "max_fit_residual": float(fit_res.max()),
            "disturbance": bool(disturb)}
    return ReachTube(family, tuple(u_cell), v_max, r_max, p_lo, p_hi, dt_interval, t_f, u_ref,
                     c0, c_u, a, g, a_brk, meta)


# ------------------------------------------------------------------ validation

@njit(cache=True)
def _containment(states, centers, normals, offsets, n_faces, length, width, dt, dt_int, tol):
    """Per-interval flags: all sampled footprints of the interval inside its zonotope."""
    n_int = centers.shape[0]
    ok = np.ones(n_int, dtype=np.bool_)
    excess = np.zeros(n_int)
    hl, hw = 0.5 * length, 0.5 * width
    per = int(round(dt_int / dt))
    for k in range(states.shape[0]):
        x, y, h = states[k, 0], states[k, 1], states[k, 2]
        c, s = math.cos(h), math.sin(h)
        j_hi = k // per
        j_lo = j_hi - 1 if (k % per == 0 and k > 0) else j_hi
        for j in range(j_lo, j_hi + 1):
            if j >= n_int:
                continue
            for a in (-1.0, 1.0):
                for b in (-1.0, 1.0):
                    px = x + c * a * hl - s * b * hw - centers[j, 0]
                    py = y + s * a * hl + c * b * hw - centers[j, 1]
                    for f in range(n_faces[j]):
                        d = abs(normals[j, f, 0] * px + normals[j, f, 1] * py) - offsets[j, f]
                        if d > tol:
                            ok[j] = False
                            if d > excess[j]:
                                excess[j] = d
    return ok, excess


@dataclass
class ContainmentReport:
    fraction: float
    pairs: int
    failures: int
    worst_excess: float
    per_interval_failures: np.ndarray

    @property
    def passed(self) -> bool:
        return self.failures == 0


def _faces(tube: ReachTube):
    n_int = tube.n_intervals
    fs = [Zonotope2(np.zeros(2), tube.g[j]).halfspaces() for j in range(n_int)]
    m = max(len(f[1]) for f in fs)
    normals = np.zeros((n_int, m, 2))
    offsets = np.zeros((n_int, m))
    counts = np.zeros(n_int, dtype=np.int64)
    for j, (nrm, off) in enumerate(fs):
        normals[j, :len(off)] = nrm
        offsets[j, :len(off)] = off
        counts[j] = len(off)
    return normals, offsets, counts


def validate_tube(tube: ReachTube, params: VehicleParams, n_trials: int = 1000, seed: int = 1,
                  disturb: bool | None = None, batch: int = 50, samples: SampleSet | None = None) -> ContainmentReport:
    """Fraction of (trajectory, interval) pairs whose footprints stay inside the tube.

    Every integration step is checked (a step on an interval boundary is
    checked against both neighbouring intervals).
    """
    disturb = tube.meta.get("disturbance", True) if disturb is None else disturb
    rng = np.random.default_rng(seed)
    if samples is None:
        samples = _draw_samples(rng, n_trials, tube.u_cell, tube.v_max, tube.r_max,
                                tube.p_lo, tube.p_hi, disturb)
    n = len(samples.u0)
    normals, offsets, counts = _faces(tube)
    fail = np.zeros(tube.n_intervals, dtype=int)
    worst = 0.0
    for s in range(0, n, batch):
        e = min(n, s + batch)
        sub = SampleSet(samples.u0[s:e], samples.v0[s:e], samples.r0[s:e], samples.p[s:e], samples.dists[s:e])
        states = run_samples(tube.family, tube.t_f, tube.a_brk, sub, params, 1)
        for i in range(e - s):
            centers = tube.center_body(sub.u0[i]) + tube.a @ sub.p[i]
            ok, exc = _containment(states[i], centers, normals, offsets, counts, params.length,
                                   params.width, DT, tube.dt_interval, 1e-9)
            fail += ~ok
            worst = max(worst, float(exc.max()))
    pairs = n * tube.n_intervals
    return ContainmentReport(1.0 - fail.sum() / pairs, pairs, int(fail.sum()), worst, fail)


# ------------------------------------------------------------------ library

@dataclass
class TubeSpec:
    family: str
    u_cell: tuple
    p_lo: tuple
    p_hi: tuple


def default_specs(u_edges=(10, 12, 14, 16, 18, 20, 22, 24), u_range=(10.0, 24.0)) -> list:
    """Tube layout for highway driving plus left turns from rest."""
    specs = []
    lo_u, hi_u = u_range
    for a, b in zip(u_edges[:-1], u_edges[1:]):
        # braking distance is quadratic in p_u, so the speed range is split in two
        mid = 0.5 * (a + b)
        specs.append(TubeSpec("speed_change", (a, b), (max(lo_u, a - 2), 0.0), (mid, 0.0)))
        specs.append(TubeSpec("speed_change", (a, b), (mid, 0.0), (min(hi_u, b + 2), 0.0)))
        specs.append(TubeSpec("direction_change", (a, b), (max(lo_u, a - 1), -0.8), (min(hi_u, b + 1), 0.8)))
        specs.append(TubeSpec("lane_change", (a, b), (max(lo_u, a - 1), 3.5), (min(hi_u, b + 1), 3.9)))
        specs.append(TubeSpec("lane_change", (a, b), (max(lo_u, a - 1), -3.9), (min(hi_u, b + 1), -3.5)))
    # the left-turn speed profile jumps at p_u = 5.5, so cells stay on one side
    specs.append(TubeSpec("left_turn", (0.0, 0.0), (4.5, 0.49), (5.5, 0.56)))
    specs.append(TubeSpec("left_turn", (0.0, 0.0), (5.6, 0.49), (6.6, 0.56)))
    return specs


@dataclass
class TubeLibrary:
    tubes: list

    def candidates(self, z0: VehicleState, families=None) -> list:
        return [t for t in self.tubes if t.in_cell(z0) and (families is None or t.family in families)]

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for t in self.tubes:
            t.save(d / f"{t.name}.json")

    @classmethod
    def load(cls, directory) -> "TubeLibrary":
        files = sorted(Path(directory).glob("*.json"))
        return cls([ReachTube.load(f) for f in files])


def build_library(params: VehicleParams, specs=None, n_samples: int = 200, seed: int = 0,
                  cache_dir=None, **kw) -> TubeLibrary:
    """Build every tube in ``specs``, reusing cached files when present."""
    specs = default_specs() if specs is None else specs
    tubes = []
    for k, s in enumerate(specs):
        tube = build_tube(s.family, s.u_cell, s.p_lo, s.p_hi, params, n_samples=n_samples,
                          seed=seed + k, **kw) if cache_dir is None else None
        if cache_dir is not None:
            probe = ReachTube(s.family, s.u_cell, 0, 0, s.p_lo, s.p_hi, 1, 1, 0,
                              np.zeros((1, 2)), np.zeros((1, 2)), np.zeros((1, 2, 2)), np.zeros((1, 2, 2)))
            f = Path(cache_dir) / f"{probe.name}.json"
            if f.exists():
                tube = ReachTube.load(f)
            else:
                tube = build_tube(s.family, s.u_cell, s.p_lo, s.p_hi, params, n_samples=n_samples,
                                  seed=seed + k, **kw)
                Path(cache_dir).mkdir(parents=True, exist_ok=True)
                tube.save(f)
        tubes.append(tube)
    return TubeLibrary(tubes)
