"""Closed-loop hybrid vehicle model and parameterised desired trajectories.

The high-speed model has states ``x, y, h, u, v, r``; below the critical
speed ``u_c`` a steady-state cornering model replaces the lateral states
with algebraic outputs.  A robust tracking controller closes the loop.
Integration is fixed-step RK4 with steps split at the desired
trajectory's breakpoints and guard crossings localised by bisection.

Internally a state is a length 8 array
``[x, y, h, u, v, r, int e_u^2, int (e_r^2 + e_h^2)]``; the last two are
the controller's integral accumulators.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from .zonotope import Zonotope2, rot

HIGH, LOW = 0, 1
SPEED_CHANGE, DIRECTION_CHANGE, LANE_CHANGE, LEFT_TURN = 0, 1, 2, 3
FAMILY_CODES = {"speed_change": SPEED_CHANGE, "direction_change": DIRECTION_CHANGE,
                "lane_change": LANE_CHANGE, "left_turn": LEFT_TURN}
FAMILY_NAMES = {v: k for k, v in FAMILY_CODES.items()}
MANEUVER_TIME = {"speed_change": 3.0, "direction_change": 3.0, "lane_change": 6.0, "left_turn": 4.0}
DT = 1e-3
EVENT_TOL = 1e-9
N_SINES = 3


@dataclass(frozen=True)
class VehicleParams:
    """Vehicle and controller constants.

    Defaults describe a generic mid-size front-wheel-drive car; they are
    illustrative values, not measured data.
    """

    m: float = 1500.0
    izz: float = 2500.0
    lf: float = 1.4
    lr: float = 1.4
    caf: float = 90000.0
    car: float = 100000.0
    length: float = 4.8
    width: float = 2.0
    u_c: float = 3.0
    m_u: float = 0.1
    m_v: float = 0.05
    m_r: float = 0.02
    k_u: float = 3.0
    k_h: float = 9.0
    k_r: float = 6.0
    kappa1_u: float = 1.0
    kappa2_u: float = 1.0
    phi1_u: float = 0.5
    phi2_u: float = 0.5
    kappa1_r: float = 1.0
    kappa2_r: float = 1.0
    phi1_r: float = 0.5
    phi2_r: float = 0.5
    delta_max: float = 0.7
    a_brk: float = 5.0
    a_hold: float = 1.0

    def __post_init__(self):
        for name in ("m", "izz", "lf", "lr", "caf", "car", "length", "width", "u_c"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name, val in asdict(self).items():
            if val < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def l(self) -> float:
        return self.lf + self.lr

    @property
    def c_us(self) -> float:
        return self.m / self.l * (self.lr / self.caf - self.lf / self.car)

    def to_array(self) -> np.ndarray:
        return np.array([self.m, self.izz, self.lf, self.lr, self.caf, self.car, self.u_c,
                         self.m_u, self.m_v, self.m_r, self.k_u, self.k_h, self.k_r,
                         self.kappa1_u, self.kappa2_u, self.phi1_u, self.phi2_u,
                         self.kappa1_r, self.kappa2_r, self.phi1_r, self.phi2_r,
                         self.delta_max, self.a_hold])

    @classmethod
    def from_dict(cls, d: dict) -> "VehicleParams":
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    h: float = 0.0
    u: float = 0.0
    v: float = 0.0
    r: float = 0.0
    mode: int = HIGH

    def __post_init__(self):
        vals = (self.x, self.y, self.h, self.u, self.v, self.r)
        if not all(math.isfinite(float(a)) for a in vals):
            raise ValueError("non-finite vehicle state")

    @classmethod
    def at_speed(cls, u, params: VehicleParams, **kw) -> "VehicleState":
        return cls(u=u, mode=HIGH if u > params.u_c else LOW, **kw)

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.h, self.u, self.v, self.r, 0.0, 0.0])


@dataclass(frozen=True)
class DesiredTrajectory:
    """One member of a trajectory family.

    ``u0`` is the speed at which the driving maneuver starts (the speed
    ramps from it) and ``h0`` the initial heading.
    """

    family: str
    p: tuple
    u0: float = 0.0
    h0: float = 0.0
    a_brk: float = 5.0
    t_m: float | None = None
    t_f: float | None = None

    def __post_init__(self):
        if self.family not in FAMILY_CODES:
            raise ValueError(f"unknown family {self.family!r}")
        object.__setattr__(self, "p", tuple(float(v) for v in self.p))
        if self.t_m is None:
            object.__setattr__(self, "t_m", MANEUVER_TIME[self.family])
        if self.t_f is None:
            object.__setattr__(self, "t_f", self.t_stop + 1.0)

    @property
    def t_nb(self) -> float:
        return self.t_m

    @property
    def t_stop(self) -> float:
        return self.t_m + max(self.p[0], 0.0) / self.a_brk

    def to_array(self) -> np.ndarray:
        return np.array([FAMILY_CODES[self.family], self.p[0], self.p[1], self.u0,
                         self.t_m, self.a_brk, self.h0])


# ------------------------------------------------------------------ kernels

@njit(cache=True)
def _speed_ramp(p_u, u0, t_m, t):
    tr = 0.5 * t_m
    if t < tr:
        return u0 + (p_u - u0) * t / tr, (p_u - u0) / tr
    return p_u, 0.0


@njit(cache=True)
def desired(traj, t):
    """Desired (u, du, r, dr, h) at time ``t`` (right-continuous)."""
    fam = int(traj[0])
    p_u, p_y, u0, t_m, a_brk, h0 = traj[1], traj[2], traj[3], traj[4], traj[5], traj[6]
    pi = math.pi
    if t >= t_m:
        u = p_u - a_brk * (t - t_m)
        du = -a_brk
        if u <= 0.0:
            u = 0.0
            du = 0.0
        if fam == DIRECTION_CHANGE:
            h = 2.0 * p_y / (max(u0, 1.0) * t_m)
        elif fam == LEFT_TURN:
            h = 0.75 * p_y * t_m
        else:
            h = 0.0
        return u, du, 0.0, 0.0, h0 + h
    if fam == LEFT_TURN:
        if t < 0.25 * t_m and 11.0 / 8.0 * t_m < p_u:
            u, du = 5.5 * t, 5.5
        else:
            u, du = p_u, 0.0
        w = 4.0 * pi / t_m
        if t < 0.25 * t_m:
            r = 0.5 * p_y * (1.0 - math.cos(w * t))
            dr = 0.5 * p_y * w * math.sin(w * t)
            h = 0.5 * p_y * (t - math.sin(w * t) / w)
        elif t < 0.75 * t_m:
            r, dr = p_y, 0.0
            h = p_y * t_m / 8.0 + p_y * (t - 0.25 * t_m)
        else:
            r = 0.5 * p_y * (1.0 - math.cos(w * t))
            dr = 0.5 * p_y * w * math.sin(w * t)
            h = 0.625 * p_y * t_m + 0.5 * p_y * ((t - 0.75 * t_m) - math.sin(w * t) / w)
        return u, du, r, dr, h0 + h
    u, du = _speed_ramp(p_u, u0, t_m, t)
    if fam == SPEED_CHANGE:
        return u, du, 0.0, 0.0, h0
    ub = max(u0, 1.0)
    if fam == DIRECTION_CHANGE:
        amp = 2.0 * p_y / (ub * t_m)
        w = pi / t_m
        h = 0.5 * amp * (1.0 - math.cos(w * t))
        r = 0.5 * amp * w * math.sin(w * t)
        dr = 0.5 * amp * w * w * math.cos(w * t)
        return u, du, r, dr, h0 + h
    # lane change: heading returns to its initial value at t_m
    amp = 2.0 * p_y / (ub * t_m)
    w = 2.0 * pi / t_m
    h = 0.5 * amp * (1.0 - math.cos(w * t))
    r = 0.5 * amp * w * math.sin(w * t)
    dr = 0.5 * amp * w * w * math.cos(w * t)
    return u, du, r, dr, h0 + h


@njit(cache=True)
def next_breakpoint(traj, t):
    """First breakpoint of the desired trajectory strictly after ``t``."""
    fam = int(traj[0])
    t_m, p_u, a_brk = traj[4], traj[1], traj[5]
    t_stop = t_m + max(p_u, 0.0) / a_brk
    pts = (0.25 * t_m, 0.5 * t_m, 0.75 * t_m, t_m, t_stop)
    best = 1e300
    for k in range(5):
        if fam != LEFT_TURN and (k == 0 or k == 2):
            continue
        if pts[k] > t + 1e-12 and pts[k] < best:
            best = pts[k]
    return best


@njit(cache=True)
def _dist(dist, ch, t):
    s = 0.0
    for k in range(dist.shape[2]):
        s += dist[ch, 0, k] * math.sin(dist[ch, 1, k] * t + dist[ch, 2, k])
    return s


@njit(cache=True)
def low_outputs(s, t, prm, traj):
    """Steady-state cornering yaw rate and lateral speed."""
    m, lf, lr, car, k_h, dmax = prm[0], prm[2], prm[3], prm[5], prm[11], prm[21]
    l = lf + lr
    c_us = m / l * (lr / prm[4] - lf / car)
    u = s[3]
    if u <= 1e-9:
        return 0.0, 0.0
    ud, dud, rd, drd, hd = desired(traj, t)
    r_cmd = rd - k_h * (s[2] - hd)
    delta = r_cmd * (l + c_us * u * u) / u
    if delta > dmax:
        delta = dmax
    elif delta < -dmax:
        delta = -dmax
    r_lo = delta * u / (l + c_us * u * u)
    v_lo = lr * r_lo - m * lf / (car * l) * u * u * r_lo
    return v_lo, r_lo


@njit(cache=True)
def rhs(s, mode, t, prm, traj, dist, out):
    m, izz, lf, lr, car = prm[0], prm[1], prm[2], prm[3], prm[5]
    m_u, m_r = prm[7], prm[9]
    k_u, k_h, k_r = prm[10], prm[11], prm[12]
    ud, dud, rd, drd, hd = desired(traj, t)
    h, u = s[2], s[3]
    e_u = u - ud
    kap_u = prm[13] + prm[14] * s[6]
    phi_u = prm[15] + prm[16] * s[6]
    tau_u = -(kap_u * m_u + phi_u) * e_u
    du = tau_u + m_u * _dist(dist, 0, t) + dud - k_u * e_u
    t_stop = traj[4] + max(traj[1], 0.0) / traj[5]
    if mode == LOW:
        if t >= t_stop:
            # standstill brake hold once the desired trajectory has stopped
            du = -prm[22] if u > 0.0 else 0.0
        v, r = low_outputs(s, t, prm, traj)
        out[0] = u * math.cos(h) - v * math.sin(h)
        out[1] = u * math.sin(h) + v * math.cos(h)
        out[2] = r
        out[3] = du
        out[4] = 0.0
        out[5] = 0.0
        out[6] = e_u * e_u
        out[7] = (r - rd) ** 2 + (h - hd) ** 2
        return
    v, r = s[4], s[5]
    e_rv = r - rd
    e_h = h - hd
    e_r = k_r * e_rv + k_h * e_h
    kap_r = prm[17] + prm[18] * s[7]
    phi_r = prm[19] + prm[20] * s[7]
    tau_r = -(kap_r * m_r + phi_r) * e_r
    f_yr = -car * (v - lr * r) / u
    f_yf = izz / lf * (-k_r * e_rv + drd - k_h * e_h + tau_r) + lr / lf * f_yr
    out[0] = u * math.cos(h) - v * math.sin(h)
    out[1] = u * math.sin(h) + v * math.cos(h)
    out[2] = r
    out[3] = du
    out[4] = (f_yf + f_yr) / m - u * r + prm[8] * _dist(dist, 1, t)
    out[5] = tau_r + m_r * _dist(dist, 2, t) + drd - k_r * e_rv - k_h * e_h
    out[6] = e_u * e_u
    out[7] = e_rv * e_rv + e_h * e_h


@njit(cache=True)
def rk4(s, mode, t, h, prm, traj, dist):
    k1 = np.empty(8)
    k2 = np.empty(8)
    k3 = np.empty(8)
    k4 = np.empty(8)
    tmp = np.empty(8)
    rhs(s, mode, t, prm, traj, dist, k1)
    for i in range(8):
        tmp[i] = s[i] + 0.5 * h * k1[i]
    rhs(tmp, mode, t + 0.5 * h, prm, traj, dist, k2)
    for i in range(8):
        tmp[i] = s[i] + 0.5 * h * k2[i]
    rhs(tmp, mode, t + 0.5 * h, prm, traj, dist, k3)
    for i in range(8):
        tmp[i] = s[i] + h * k3[i]
    # the step may end on a breakpoint: use the left limit there
    rhs(tmp, mode, np.nextafter(t + h, t), prm, traj, dist, k4)
    out = np.empty(8)
    for i in range(8):
        out[i] = s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    if mode == LOW:
        if out[3] < 0.0:
            out[3] = 0.0
        v, r = low_outputs(out, t + h, prm, traj)
        out[4] = v
        out[5] = r
    return out


@njit(cache=True)
def _crossed(mode, u, u_c):
    if mode == HIGH:
        return u <= u_c
    return u > u_c


@njit(cache=True)
def _advance(s, mode, t, h, prm, traj, dist, events, n_ev):
    """Integrate over [t, t + h] handling guard crossings."""
    u_c = prm[6]
    ta = t
    t_end = t + h
    while t_end - ta > 1e-14:
        tb = min(t_end, next_breakpoint(traj, ta))
        step = tb - ta
        cand = rk4(s, mode, ta, step, prm, traj, dist)
        if _crossed(mode, cand[3], u_c) and not _crossed(mode, s[3], u_c):
            lo, hi = 0.0, step
            while hi - lo > EVENT_TOL:
                mid = 0.5 * (lo + hi)
                if _crossed(mode, rk4(s, mode, ta, mid, prm, traj, dist)[3], u_c):
                    hi = mid
                else:
                    lo = mid
            s = rk4(s, mode, ta, hi, prm, traj, dist)
            ta = ta + hi
            if mode == HIGH:
                mode = LOW
                v, r = low_outputs(s, ta, prm, traj)
                s[4] = v
                s[5] = r
            else:
                # lateral states start from the steady-state outputs already stored
                mode = HIGH
            if n_ev < events.shape[0]:
                events[n_ev] = ta
            n_ev += 1
        else:
            s = cand
            ta = tb
    return s, mode, n_ev


@njit(cache=True)
def simulate_kernel(s0, mode0, prm, traj, dist, n_steps, dt, stride, out, events):
    """Integrate ``n_steps`` steps; store every ``stride``-th state in ``out``.

    ``out`` rows are ``[x, y, h, u, v, r, acc_u, acc_r, mode]``.  Returns the
    number of guard events (their times go to ``events``).
    """
    s = s0.copy()
    mode = mode0
    if mode == LOW:
        v, r = low_outputs(s, 0.0, prm, traj)
        s[4] = v
        s[5] = r
    n_ev = 0
    row = 0
    for i in range(8):
        out[0, i] = s[i]
    out[0, 8] = mode
    row = 1
    for k in range(n_steps):
        s, mode, n_ev = _advance(s, mode, k * dt, dt, prm, traj, dist, events, n_ev)
        if (k + 1) % stride == 0:
            for i in range(8):
                out[row, i] = s[i]
            out[row, 8] = mode
            row += 1
    return n_ev


@njit(cache=True)
def simulate_batch(s0s, modes, prm, trajs, dists, n_steps, dt, stride, out):
    events = np.empty(16)
    for b in range(s0s.shape[0]):
        simulate_kernel(s0s[b], modes[b], prm, trajs[b], dists[b], n_steps, dt, stride, out[b], events)


# ------------------------------------------------------------------ wrappers

def zero_disturbance() -> np.ndarray:
    return np.zeros((3, 3, N_SINES))


def random_disturbance(rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """Sum of sines per channel whose amplitudes sum to ``scale`` (times the channel bound)."""
    d = np.zeros((3, 3, N_SINES))
    amp = rng.dirichlet(np.ones(N_SINES), size=3) * scale
    d[:, 0] = amp * rng.choice([-1.0, 1.0], size=(3, N_SINES))
    d[:, 1] = 2 * np.pi * rng.uniform(0.1, 2.0, size=(3, N_SINES))
    d[:, 2] = rng.uniform(0, 2 * np.pi, size=(3, N_SINES))
    return d


@dataclass
class Trace:
    t: np.ndarray
    states: np.ndarray          # (n, 6) x, y, h, u, v, r
    modes: np.ndarray
    events: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def to_csv(self, path) -> None:
        data = np.column_stack([self.t, self.states, self.modes])
        np.savetxt(path, data, delimiter=",", header="t,x,y,h,u,v,r,mode", comments="")


def _state_array(z0) -> tuple[np.ndarray, int]:
    if isinstance(z0, VehicleState):
        return z0.to_array(), int(z0.mode)
    a = np.zeros(8)
    a[:6] = np.asarray(z0, dtype=float)[:6]
    return a, HIGH


def simulate(traj: DesiredTrajectory, z0, params: VehicleParams, dt: float = DT,
             t_end: float | None = None, disturbance=None, stride: int = 1) -> Trace:
    """Closed-loop trace over [0, t_end] (default ``traj.t_f``)."""
    t_end = traj.t_f if t_end is None else t_end
    n_steps = int(round(t_end / dt))
    n_rec = n_steps // stride + 1
    s0, mode = _state_array(z0)
    if mode == HIGH and s0[3] <= params.u_c:
        mode = LOW
    dist = zero_disturbance() if disturbance is None else np.asarray(disturbance, float)
    out = np.zeros((n_rec, 9))
    events = np.zeros(64)
    n_ev = simulate_kernel(s0, mode, params.to_array(), traj.to_array(), dist, n_steps, dt, stride, out, events)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite state during simulation")
    t = np.arange(n_rec) * stride * dt
    return Trace(t, out[:, :6].copy(), out[:, 8].astype(int), events[:min(n_ev, 64)].copy())


def step(state: VehicleState, params: VehicleParams, traj: DesiredTrajectory, dt: float,
         t: float = 0.0, acc=(0.0, 0.0), disturbance=None) -> tuple[VehicleState, tuple]:
    """Advance one step of length ``dt`` from time ``t``.

    ``acc`` carries the controller's integral accumulators; the updated pair
    is returned alongside the new state.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    s, mode = _state_array(state)
    mode = int(state.mode) if isinstance(state, VehicleState) else mode
    s[6], s[7] = acc
    dist = zero_disturbance() if disturbance is None else np.asarray(disturbance, float)
    events = np.zeros(4)
    s, mode, _ = _advance(s, mode, t, dt, params.to_array(), traj.to_array(), dist, events, 0)
    if not np.all(np.isfinite(s)):
        raise FloatingPointError("non-finite state")
    return VehicleState(*s[:6], mode=int(mode)), (float(s[6]), float(s[7]))


def eval_desired(traj: DesiredTrajectory, t: float) -> dict:
    """Desired speed, yaw rate and heading with their time derivatives."""
    t = min(float(t), traj.t_f)
    u, du, r, dr, h = desired(traj.to_array(), t)
    return {"u": u, "du": du, "r": r, "dr": dr, "h": h, "dh": r}


def footprint_at(state, params: VehicleParams) -> Zonotope2:
    if isinstance(state, VehicleState):
        x, y, h = state.x, state.y, state.h
    else:
        x, y, h = state[0], state[1], state[2]
    return Zonotope2([x, y], rot(h) @ np.diag([params.length / 2, params.width / 2]))


def footprint_vertices(xyh: np.ndarray, params: VehicleParams) -> np.ndarray:
    """Corners (n, 4, 2) of footprints at poses (n, 3)."""
    c, s = np.cos(xyh[:, 2]), np.sin(xyh[:, 2])
    hl, hw = params.length / 2, params.width / 2
    corners = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    x = xyh[:, None, 0] + c[:, None] * corners[None, :, 0] - s[:, None] * corners[None, :, 1]
    y = xyh[:, None, 1] + s[:, None] * corners[None, :, 0] + c[:, None] * corners[None, :, 1]
    return np.stack([x, y], -1)
