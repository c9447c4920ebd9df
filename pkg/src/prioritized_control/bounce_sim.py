"""Ball-bouncing world: ballistic flight, racket contact and the hitting strategy.

The ball is a point mass in free flight; its state is only ever advanced
in closed form.  The arm is integrated at a fixed control rate and the
ball-racket contact time inside each control step is the root of a
quadratic (ballistic ball against a linearly moving racket plane).

The strategy keeps an imagined target above the racket's rest pose.  Every
hit happens on the hitting plane and is planned so that the ball's next
apex reaches the target height and its next plane crossing lies directly
below the target.  A ball arriving there with some horizontal velocity is
then sent straight up by the following hit.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .primitives import MotorPrimitive, advance
from .robot import KinematicArm, TASK_MAPS, oracle_control, step_dynamics

GRAVITY = 9.81
Z = np.array([0.0, 0.0, 1.0])

MISSED = "missed-ball"
WORKSPACE = "workspace-violation"
JOINT_LIMIT = "joint-limit"
TIMEOUT = "timeout-success"
FAULT = "simulation-fault"
FAILURE_REASONS = (MISSED, WORKSPACE, JOINT_LIMIT, TIMEOUT, FAULT)
FEEDFORWARD_CHUNK = 200


class ContactMiss(ValueError):
    """The ball is not approaching the racket surface."""


class WorkspaceViolation(ValueError):
    """A planned hit lies outside the safely reachable workspace."""


@dataclass(frozen=True)
class BallState:
    p: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))


@dataclass(frozen=True)
class RacketState:
    p: np.ndarray
    normal: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("racket normal must be a unit vector")
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))


@dataclass
class StrategyConfig:
    """World and strategy parameters (SI units)."""

    plane_height: float = 0.3
    target_height: float = 0.8
    target_xy: tuple[float, float] = (0.55, 0.0)
    restitution: float = 0.85
    gravity: float = GRAVITY
    racket_radius: float = 0.08
    workspace_radius: float = 0.2
    floor_height: float = 0.0
    # launch distribution, relative to the target
    launch_height: float = 0.9
    launch_xy_spread: tuple[float, float] = (0.16, 0.0)
    launch_min_offset: float = 0.12      # beyond the racket radius, so the racket has to move
    launch_v_spread: tuple[float, float, float] = (0.05, 0.0, 0.3)
    observation_noise: float = 0.0
    closed_loop_primitives: bool = False
    dt: float = 1e-3

    def __post_init__(self):
        if not self.target_height > self.plane_height:
            raise ValueError("target must lie above the hitting plane")
        if not 0 < self.restitution <= 1:
            raise ValueError("restitution must be in (0, 1]")
        if self.launch_min_offset < 0:
            raise ValueError("launch offset must be non-negative")
        self.target_xy = tuple(float(v) for v in self.target_xy)
        self.launch_xy_spread = tuple(float(v) for v in self.launch_xy_spread)
        self.launch_v_spread = tuple(float(v) for v in self.launch_v_spread)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "StrategyConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown strategy fields: {sorted(unknown)}")
        return cls(**d)


# -- flight ---------------------------------------------------------------------

def fly(ball: BallState, dt: float, gravity: float = GRAVITY) -> BallState:
    """Closed-form ballistic update."""
    p = ball.p + ball.v * dt - 0.5 * gravity * dt * dt * Z
    v = ball.v - gravity * dt * Z
    return BallState(p, v)


def apex_height(ball: BallState, gravity: float = GRAVITY) -> float:
    vz = ball.v[2]
    return ball.p[2] + max(vz, 0.0) ** 2 / (2 * gravity)


def plane_crossing_time(ball: BallState, height: float, gravity: float = GRAVITY):
    """Earliest ``t >= 0`` at which the ball passes ``height`` going down.

    Returns ``None`` if the ball never does (it is below the plane and the
    rest of its parabola stays below).
    """
    pz, vz = ball.p[2], ball.v[2]
    # 0.5 g t^2 - vz t + (height - pz) = 0; descending root is the larger one
    a, b, c = 0.5 * gravity, -vz, height - pz
    if abs(c) < 1e-12 and vz <= 0:
        return 0.0          # on the plane already (up to round-off), going down
    disc = b * b - 4 * a * c
    if disc < 0:
        return None
    sq = math.sqrt(disc)
    t = (-b + sq) / (2 * a)
    if t < 0:
        return None
    return t


# -- contact --------------------------------------------------------------------

def reflect(v_in, racket: RacketState, restitution: float) -> np.ndarray:
    """Outgoing ball velocity for an instantaneous frictionless impact."""
    v_in = np.asarray(v_in, dtype=float)
    n = racket.normal
    vn = float((v_in - racket.v) @ n)
    if vn >= 0:
        raise ContactMiss("ball is not approaching the racket")
    return v_in - (1 + restitution) * vn * n


@dataclass(frozen=True)
class HitPlan:
    hit_point: np.ndarray
    v_in: np.ndarray
    v_out: np.ndarray
    racket_normal: np.ndarray
    racket_v_normal: float
    time_to_hit: float

    @property
    def racket_pitch(self) -> float:
        """Tilt of the planned normal toward the radial direction of the hit point."""
        radial = self.hit_point[:2] / max(np.linalg.norm(self.hit_point[:2]), 1e-12)
        return math.atan2(float(self.racket_normal[:2] @ radial), float(self.racket_normal[2]))

    @property
    def racket_vz(self) -> float:
        """Vertical racket speed realizing the planned normal speed."""
        return self.racket_v_normal / self.racket_normal[2]


def plan_hit(ball: BallState, cfg: StrategyConfig) -> HitPlan:
    """Plan the next hit on the hitting plane.

    Raises ``WorkspaceViolation`` if the ball never reaches the plane or
    reaches it too far from the target.
    """
    g = cfg.gravity
    t_hit = plane_crossing_time(ball, cfg.plane_height, g)
    if t_hit is None:
        raise WorkspaceViolation("ball never reaches the hitting plane")
    at = fly(ball, t_hit, g)
    target = np.asarray(cfg.target_xy)
    if np.linalg.norm(at.p[:2] - target) > cfg.workspace_radius:
        raise WorkspaceViolation("hit point outside the reachable workspace")
    vz_out = math.sqrt(2 * g * (cfg.target_height - cfg.plane_height))
    t_flight = 2 * vz_out / g
    v_out = np.array([*((target - at.p[:2]) / t_flight), vz_out])
    d = v_out - at.v
    n = d / np.linalg.norm(d)
    eps = cfg.restitution
    vr_n = float(v_out @ n + eps * (at.v @ n)) / (1 + eps)
    hit_point = np.array([at.p[0], at.p[1], cfg.plane_height])
    return HitPlan(hit_point, at.v, v_out, n, vr_n, t_hit)


# -- controllers ------------------------------------------------------------------

class OracleController:
    """Analytic prioritized control over the primitives' task maps."""

    def __init__(self, arm: KinematicArm, cost, names, priority=None):
        self.arm = arm
        self.cost = cost
        self.names = list(names)
        # lowest priority first; default is list order
        self.priority = list(range(len(names))) if priority is None else list(priority)
        self.label = "oracle"

    def control(self, q, qd, accels):
        tasks = [(TASK_MAPS[self.names[i]], accels[i]) for i in self.priority]
        return oracle_control(self.arm, q, qd, tasks, self.cost).u


class ZeroController:
    label = "zero"

    def __init__(self, n: int):
        self.n = n

    def control(self, q, qd, accels):
        return np.zeros(self.n)


# -- trials ------------------------------------------------------------------------

@dataclass
class TrialResult:
    n_hits: int
    failure_reason: str
    duration: float
    events: list = field(default_factory=list, repr=False)


def launch_ball(cfg: StrategyConfig, rng: np.random.Generator) -> BallState:
    """Seeded throw toward the racket from beside the target.

    Each horizontal offset has magnitude in ``[launch_min_offset, spread]``
    and a random sign; an axis with zero spread stays on the target.
    """
    vx, vy, vz = cfg.launch_v_spread
    offset = []
    for s in cfg.launch_xy_spread:
        lo = min(cfg.launch_min_offset, s)
        sign = 1.0 if rng.integers(2) else -1.0
        offset.append(sign * rng.uniform(lo, s))
    p = np.array([cfg.target_xy[0] + offset[0], cfg.target_xy[1] + offset[1], cfg.launch_height])
    v = np.array([rng.uniform(-vx, vx), rng.uniform(-vy, vy), -rng.uniform(0.0, vz)])
    return BallState(p, v)


def _observe(ball: BallState, cfg: StrategyConfig, rng) -> BallState:
    if cfg.observation_noise <= 0:
        return ball
    s = cfg.observation_noise
    return BallState(ball.p + rng.normal(0, s, 3), ball.v + rng.normal(0, 4 * s, 3))


def _contact_time(p, v, g, r0, dr, n, dt):
    """Root in (0, dt] of (ball(s) - racket(s)) . n, ball descending onto the plane."""
    a = -0.5 * g * n[2]
    b = float(v @ n) - float(dr @ n) / dt
    c = float((p - r0) @ n)
    if abs(a) < 1e-15:
        if b >= 0:
            return None
        s = -c / b
        return s if 0 < s <= dt else None
    disc = b * b - 4 * a * c
    if disc < 0:
        return None
    sq = math.sqrt(disc)
    roots = sorted(((-b - sq) / (2 * a), (-b + sq) / (2 * a)))
    for s in roots:
        if 0 < s <= dt:
            return s
    return None


def run_trial(arm: KinematicArm, controller, primitives: dict, cfg: StrategyConfig,
              seed: int, max_time: float = 20.0, log_events: bool = False) -> TrialResult:
    """Bounce the ball until a miss, a workspace/joint-limit violation, or ``max_time``.

    ``primitives`` maps ``"move"``, ``"hit"`` and ``"orient"`` to motor
    primitive templates; the strategy retriggers them at every plan.
    """
    rng = np.random.default_rng(seed)
    names = list(primitives)
    prims = {k: v.copy() for k, v in primitives.items()}
    maps = [TASK_MAPS[k] for k in names]
    dt = cfg.dt
    g = cfg.gravity
    q = arm.rest_posture.copy()
    qd = np.zeros(arm.n)
    ball = launch_ball(cfg, rng)
    t_ball = 0.0                     # time at which ``ball`` is valid
    t = 0.0
    hits = 0
    events = []

    def racket_now(q, qd):
        x = arm.task_coordinates(q)
        J = arm.full_jacobian(q)
        xd = J @ qd
        return x, xd

    def log(ev, b, x):
        if log_events:
            psi = math.atan2(x[1], x[0])
            n = [math.cos(psi) * math.sin(x[3]), math.sin(psi) * math.sin(x[3]), math.cos(x[3])]
            events.append((t, ev, b.p.tolist(), b.v.tolist(), x[:3].tolist(), n))

    def trigger(b_obs, x, xd):
        plan = plan_hit(b_obs, cfg)
        T = max(plan.time_to_hit, 5 * dt)
        goals = {
            "move": (plan.hit_point[:2], None),
            "hit": (plan.hit_point[2:3], np.array([plan.racket_vz])),
            "orient": (np.array([plan.racket_pitch]), None),
        }
        for k, m in zip(names, maps):
            goal, gvel = goals[k]
            prims[k].start(x[list(m.rows)], xd[list(m.rows)], goal, T, gvel)
        return 1.0, 1.0 / T

    ff = {"buf": [], "i": 0}       # feedforward accelerations, filled in chunks

    def refill(z):
        ff["buf"] = [advance(prims[k], z, FEEDFORWARD_CHUNK, dt) for k in names]
        ff["i"] = 0

    x, xd = racket_now(q, qd)
    log("launch", ball, x)
    try:
        z, tau = trigger(_observe(ball, cfg, rng), x, xd)
    except WorkspaceViolation:
        return TrialResult(0, WORKSPACE, t, events)
    if not cfg.closed_loop_primitives:
        refill(z)
    alpha_z = next(iter(prims.values())).alpha_z if prims else 0.0
    decay = math.exp(-tau * alpha_z * dt)
    next_apex = None
    x, xd = racket_now(q, qd)
    rows = [list(m.rows) for m in maps]

    while t < max_time - 1e-12:
        if cfg.closed_loop_primitives:
            accels = [prims[k].acceleration(x[r], xd[r], z) for k, r in zip(names, rows)]
        else:
            # feedforward: each primitive integrates its own state
            if ff["i"] == FEEDFORWARD_CHUNK:
                refill(z)
            accels = [b[ff["i"]] for b in ff["buf"]]
            ff["i"] += 1
        u = controller.control(q, qd, accels)
        r0 = x[:3]
        q, qd, ok, inside = step_dynamics(arm, q, qd, u, dt)
        if not ok:
            return TrialResult(hits, FAULT, t, events)
        z *= decay
        x1, xd1 = racket_now(q, qd)
        if not (np.all(np.isfinite(x1)) and np.all(np.isfinite(xd1))):
            return TrialResult(hits, FAULT, t, events)
        # ball state at the start of this step
        b0 = fly(ball, t - t_ball, g)
        psi = math.atan2(x1[1], x1[0])
        sp = math.sin(x1[3])
        n = np.array([math.cos(psi) * sp, math.sin(psi) * sp, math.cos(x1[3])])
        s = _contact_time(b0.p, b0.v, g, r0, x1[:3] - r0, n, dt)
        if s is not None and float(b0.v @ n) - float((x1[:3] - r0) @ n) / dt < 0:
            bc = fly(b0, s, g)
            rc = r0 + (x1[:3] - r0) * (s / dt)
            off = bc.p - rc
            off -= (off @ n) * n
            if np.linalg.norm(off) > cfg.racket_radius:
                t += s
                log("miss", bc, x1)
                return TrialResult(hits, MISSED, t, events)
            racket = RacketState(rc, n, xd1[:3])
            try:
                v_out = reflect(bc.v, racket, cfg.restitution)
            except ContactMiss:
                v_out = bc.v
            ball = BallState(bc.p, v_out)
            t_ball = t + s
            hits += 1
            t += dt
            log("hit", ball, x1)
            next_apex = t_ball + max(v_out[2], 0.0) / g
            try:
                z, tau = trigger(_observe(fly(ball, t - t_ball, g), cfg, rng), x1, xd1)
            except WorkspaceViolation:
                return TrialResult(hits, WORKSPACE, t, events)
            if not cfg.closed_loop_primitives:
                refill(z)
            decay = math.exp(-tau * alpha_z * dt)
        else:
            t += dt
        x, xd = x1, xd1
        if not inside:
            return TrialResult(hits, JOINT_LIMIT, t, events)
        if log_events and next_apex is not None and t >= next_apex:
            log("apex", fly(ball, next_apex - t_ball, g), x1)
            next_apex = None
        if fly(ball, t - t_ball, g).p[2] < cfg.floor_height:
            log("miss", fly(ball, t - t_ball, g), x1)
            return TrialResult(hits, MISSED, t, events)
    return TrialResult(hits, TIMEOUT, t, events)


def write_trial_log(events, path) -> None:
    """CSV event stream ``t,event,ball_p,ball_v,racket_p,racket_n``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "event", "ball_p", "ball_v", "racket_p", "racket_n"])
        for t, ev, bp, bv, rp, rn in events:
            w.writerow([f"{t:.6f}", ev] + [" ".join(f"{c:.9g}" for c in vec)
                                          for vec in (bp, bv, rp, rn)])
