"""Discrete dynamical-systems motor primitives.

A shared first-order canonical system drives the phase ``z`` from 1 toward
0.  Each primitive is a critically damped spring-damper toward its goal,
shaped by a forcing term made of normalized Gaussian kernels in phase.  The
velocity-goal variant replaces the fixed goal with a goal that moves at the
desired final velocity, so the primitive arrives at ``g`` with velocity
``g_dot`` after one duration.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

ALPHA_Z = math.log(100.0)      # z(T) = 0.01
ALPHA_Y = 25.0
AMPLITUDE_EPS = 1e-6
IMITATION_RIDGE = 1e-8

STANDARD = "standard"
VELOCITY_GOAL = "velocity_goal"
MODES = (STANDARD, VELOCITY_GOAL)


class NumericalDivergence(RuntimeError):
    """Raised when a primitive's state becomes non-finite."""


@dataclass(frozen=True)
class CanonicalSystem:
    z: float = 1.0
    tau: float = 1.0
    alpha_z: float = ALPHA_Z

    def phase_at(self, t: float) -> float:
        return self.z * math.exp(-self.tau * self.alpha_z * t)


def step_canonical(cs: CanonicalSystem, dt: float) -> CanonicalSystem:
    """Advance the phase by ``dt`` with the exact exponential update."""
    if dt < 0 or not math.isfinite(dt):
        raise ValueError(f"time step must be non-negative, got {dt}")
    if cs.z <= 0:
        raise ValueError("phase must be positive")
    return replace(cs, z=cs.z * math.exp(-cs.tau * cs.alpha_z * dt))


@dataclass(frozen=True)
class BasisSet:
    centers: np.ndarray
    widths: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float)
        h = np.asarray(self.widths, dtype=float)
        if c.ndim != 1 or c.shape != h.shape:
            raise ValueError("centers and widths must be 1-D arrays of equal length")
        if np.any(h <= 0):
            raise ValueError("basis widths must be positive")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "widths", h)

    @property
    def count(self) -> int:
        return len(self.centers)

    @classmethod
    def uniform_in_time(cls, n_basis: int, alpha_z: float = ALPHA_Z) -> "BasisSet":
        """Centers equally spaced in time over one duration."""
        if n_basis < 1:
            raise ValueError("need at least one basis function")
        if n_basis == 1:
            return cls(np.ones(1), np.ones(1))
        c = np.exp(-alpha_z * np.linspace(0.0, 1.0, n_basis))
        h = np.empty(n_basis)
        h[:-1] = 1.0 / np.diff(c) ** 2
        h[-1] = h[-2]
        return cls(c, h)


def basis_activations(basis: BasisSet, z) -> np.ndarray:
    """Normalized Gaussian activations; last axis indexes the kernels."""
    if basis.count == 0:
        raise ValueError("empty basis")
    z = np.asarray(z, dtype=float)
    d2 = -basis.widths * (z[..., None] - basis.centers) ** 2
    # subtract the max for stability; normalization cancels it
    d2 = d2 - d2.max(axis=-1, keepdims=True)
    e = np.exp(d2)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class TaskTrajectory:
    t: np.ndarray
    x: np.ndarray
    xd: np.ndarray
    xdd: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        arrs = [np.atleast_2d(np.asarray(a, dtype=float).T).T for a in (self.x, self.xd, self.xdd)]
        if any(a.shape[0] != t.shape[0] for a in arrs):
            raise ValueError("all sample arrays need one row per timestamp")
        if len({a.shape[1] for a in arrs}) != 1:
            raise ValueError("position, velocity and acceleration dimensions differ")
        if np.any(np.diff(t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if not all(np.all(np.isfinite(a)) for a in [t, *arrs]):
            raise ValueError("trajectory contains non-finite values")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", arrs[0])
        object.__setattr__(self, "xd", arrs[1])
        object.__setattr__(self, "xdd", arrs[2])

    @property
    def dof(self) -> int:
        return self.x.shape[1]

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def save_csv(self, path) -> None:
        d = self.dof
        header = ["t"] + [f"x{i}" for i in range(d)] + [f"xd{i}" for i in range(d)] \
            + [f"xdd{i}" for i in range(d)]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in np.column_stack([self.t, self.x, self.xd, self.xdd]):
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def load_csv(cls, path) -> "TaskTrajectory":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        d = sum(1 for h in header if h.startswith("x") and h[1:].isdigit())
        if header[0] != "t" or len(header) != 1 + 3 * d:
            raise ValueError(f"unexpected trajectory header: {header}")
        return cls(data[:, 0], data[:, 1:1 + d], data[:, 1 + d:1 + 2 * d], data[:, 1 + 2 * d:])


@dataclass
class MotorPrimitive:
    """Discrete motor primitive with per-dimension goal and amplitude.

    The learned data (weights, basis, gains) is fixed after construction;
    ``start`` re-targets the primitive and resets its integration state.
    """

    weights: np.ndarray
    basis: BasisSet
    goal: np.ndarray
    goal_velocity: np.ndarray | None = None
    amplitude: np.ndarray | None = None
    tau: float = 1.0
    alpha_y: float = ALPHA_Y
    beta_y: float | None = None
    alpha_h: float = ALPHA_Z
    alpha_z: float = ALPHA_Z
    mode: str = STANDARD
    fixed_amplitude: bool = False
    y1: np.ndarray = field(default=None)
    y2: np.ndarray = field(default=None)

    def __post_init__(self):
        self.weights = np.atleast_2d(np.asarray(self.weights, dtype=float).T).T
        self.goal = np.atleast_1d(np.asarray(self.goal, dtype=float))
        d = self.goal.shape[0]
        if self.weights.shape != (self.basis.count, d):
            raise ValueError(
                f"weights must be {self.basis.count}x{d}, got {self.weights.shape}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.beta_y is None:
            self.beta_y = self.alpha_y / 4.0
        if self.goal_velocity is None:
            self.goal_velocity = np.zeros(d)
        self.goal_velocity = np.atleast_1d(np.asarray(self.goal_velocity, dtype=float))
        if self.mode == VELOCITY_GOAL and self.alpha_h <= 0:
            raise ValueError("velocity-goal mode needs alpha_h > 0")
        if self.amplitude is None:
            self.amplitude = np.ones(d)
        self.amplitude = np.atleast_1d(np.asarray(self.amplitude, dtype=float))
        if self.y1 is None:
            self.y1 = self.goal.copy()
        if self.y2 is None:
            self.y2 = np.zeros(d)
        self.y1 = np.asarray(self.y1, dtype=float).copy()
        self.y2 = np.asarray(self.y2, dtype=float).copy()

    @property
    def dof(self) -> int:
        return self.goal.shape[0]

    def copy(self) -> "MotorPrimitive":
        return replace(self, y1=self.y1.copy(), y2=self.y2.copy())

    def start(self, x0, xd0, goal, duration: float, goal_velocity=None) -> None:
        """(Re)trigger the primitive from ``(x0, xd0)`` toward ``goal``.

        The duration sets ``tau = 1/duration``; retargeting the hitting time
        is done by retriggering with the remaining time.  The amplitude
        becomes ``goal - x0``, so a dimension that need not move gets no
        forcing.  With ``fixed_amplitude`` the learned amplitude is kept,
        which suits movements that start at their own goal, like a swing.
        """
        if not duration > 0:
            raise ValueError("duration must be positive")
        self.tau = 1.0 / duration
        self.goal = np.atleast_1d(np.asarray(goal, dtype=float)).copy()
        if goal_velocity is not None:
            self.goal_velocity = np.atleast_1d(np.asarray(goal_velocity, dtype=float)).copy()
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        if not self.fixed_amplitude:
            a = self.goal - x0
            self.amplitude = np.where(np.abs(a) < AMPLITUDE_EPS, 0.0, a)
        self.y1 = x0.copy()
        self.y2 = np.atleast_1d(np.asarray(xd0, dtype=float)) / self.tau

    def moving_goal(self, z: float) -> np.ndarray:
        g0 = self.goal - self.goal_velocity / self.tau
        return g0 - self.goal_velocity * math.log(z) / (self.tau * self.alpha_h)

    def acceleration(self, x, xd, z: float) -> np.ndarray:
        """Task acceleration the primitive demands at state ``(x, xd)``."""
        tau = self.tau
        y2 = xd / tau
        f = forcing_term(self, z)
        if self.mode == STANDARD:
            y2dot = tau * self.alpha_y * (self.beta_y * (self.goal - x) - y2)
        else:
            gm = self.moving_goal(z)
            y2dot = (1.0 - z) * tau * self.alpha_y * (
                self.beta_y * (gm - x) + self.goal_velocity / tau - y2)
        y2dot = y2dot + tau * self.amplitude * f
        return tau * y2dot

    def _deriv(self, y1, y2, z):
        xdd = self.acceleration(y1, self.tau * y2, z)
        return self.tau * y2, xdd / self.tau

    def to_dict(self) -> dict:
        return {
            "dof": self.dof, "tau": self.tau, "alpha_y": self.alpha_y,
            "beta_y": self.beta_y, "alpha_h": self.alpha_h, "alpha_z": self.alpha_z,
            "mode": self.mode, "fixed_amplitude": self.fixed_amplitude,
            "goal": self.goal.tolist(),
            "goal_velocity": self.goal_velocity.tolist(),
            "amplitude": self.amplitude.tolist(),
            "centers": self.basis.centers.tolist(), "widths": self.basis.widths.tolist(),
            "weights": self.weights.reshape(-1).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MotorPrimitive":
        basis = BasisSet(np.array(d["centers"]), np.array(d["widths"]))
        return cls(
            weights=np.array(d["weights"], dtype=float).reshape(basis.count, d["dof"]),
            basis=basis, goal=d["goal"], goal_velocity=d["goal_velocity"],
            amplitude=d["amplitude"], tau=d["tau"], alpha_y=d["alpha_y"],
            beta_y=d["beta_y"], alpha_h=d["alpha_h"], alpha_z=d.get("alpha_z", ALPHA_Z),
            mode=d.get("mode", STANDARD), fixed_amplitude=d.get("fixed_amplitude", False),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "MotorPrimitive":
        return cls.from_dict(json.loads(Path(path).read_text()))


def amplitude_from(goal, y0) -> np.ndarray:
    """Imitation amplitude ``goal - y0``; near-zero dimensions use 1."""
    a = np.asarray(goal, dtype=float) - np.asarray(y0, dtype=float)
    return np.where(np.abs(a) < AMPLITUDE_EPS, 1.0, a)


def forcing_term(mp: MotorPrimitive, z: float) -> np.ndarray:
    # scalar fast path of basis_activations; weights were validated on construction
    d2 = -mp.basis.widths * (z - mp.basis.centers) ** 2
    e = np.exp(d2 - d2.max())
    return (e @ mp.weights) * (z / e.sum())


def step_primitive(mp: MotorPrimitive, z: float, dt: float):
    """Advance the primitive's own state by one RK4 step of length ``dt``.

    ``z`` is the shared phase at the start of the step; stage phases use the
    exact canonical solution.  Returns ``(x, xd, xdd)`` at the end of the step.
    """
    if not dt > 0:
        raise ValueError("time step must be positive")
    decay = mp.tau * mp.alpha_z
    z_half = z * math.exp(-decay * dt / 2)
    z_end = z * math.exp(-decay * dt)
    y1, y2 = mp.y1, mp.y2
    k1a, k1b = mp._deriv(y1, y2, z)
    k2a, k2b = mp._deriv(y1 + dt / 2 * k1a, y2 + dt / 2 * k1b, z_half)
    k3a, k3b = mp._deriv(y1 + dt / 2 * k2a, y2 + dt / 2 * k2b, z_half)
    k4a, k4b = mp._deriv(y1 + dt * k3a, y2 + dt * k3b, z_end)
    y1 = y1 + dt / 6 * (k1a + 2 * k2a + 2 * k3a + k4a)
    y2 = y2 + dt / 6 * (k1b + 2 * k2b + 2 * k3b + k4b)
    if not (np.all(np.isfinite(y1)) and np.all(np.isfinite(y2))):
        raise NumericalDivergence("primitive state became non-finite")
    mp.y1, mp.y2 = y1, y2
    xd = mp.tau * y2
    return y1.copy(), xd, mp.acceleration(y1, xd, z_end)


def _linear_coefficients(mp: MotorPrimitive, z: np.ndarray):
    """``(b, k, c)`` with ``xdd = tau * (b - k * y1 - c * y2)`` at phases ``z``."""
    z = np.asarray(z, dtype=float)[:, None]
    tau = mp.tau
    if mp.mode == STANDARD:
        gain = np.ones_like(z)
        gm = np.broadcast_to(mp.goal, (z.shape[0], mp.dof))
    else:
        gain = 1.0 - z
        g0 = mp.goal - mp.goal_velocity / tau
        gm = g0 - mp.goal_velocity * np.log(z) / (tau * mp.alpha_h)
    f = (basis_activations(mp.basis, z[:, 0]) @ mp.weights) * z
    ka = gain * tau * mp.alpha_y
    b = ka * (mp.beta_y * gm + mp.goal_velocity / tau) + tau * mp.amplitude * f
    return b, ka * mp.beta_y, ka


def _rk4_linear(y1, y2, b0, k0, c0, bh, kh, ch, b1, k1, c1, tau, dt):
    # one RK4 step of y1' = tau*y2, y2' = b - k*y1 - c*y2 (same stages as step_primitive)
    h2 = dt / 2
    a1 = b0 - k0 * y1 - c0 * y2
    p1, v1 = y1 + h2 * tau * y2, y2 + h2 * a1
    a2 = bh - kh * p1 - ch * v1
    p2, v2 = y1 + h2 * tau * v1, y2 + h2 * a2
    a3 = bh - kh * p2 - ch * v2
    p3, v3 = y1 + dt * tau * v2, y2 + dt * a3
    a4 = b1 - k1 * p3 - c1 * v3
    return (y1 + dt / 6 * tau * (y2 + 2 * v1 + 2 * v2 + v3),
            y2 + dt / 6 * (a1 + 2 * a2 + 2 * a3 + a4))


def advance(mp: MotorPrimitive, z: float, n: int, dt: float) -> np.ndarray:
    """Run ``n`` RK4 steps of ``step_primitive`` starting at phase ``z``.

    Returns the accelerations at the start of every step, shape ``(n, dof)``.
    The transformation system is linear in its state, so each step is an
    affine map whose coefficients are computed for the whole chunk at once;
    only a scalar recurrence remains.
    """
    if not dt > 0:
        raise ValueError("time step must be positive")
    decay = mp.tau * mp.alpha_z
    zs = z * np.exp(-decay * dt * np.arange(n + 1))
    b, k, c = _linear_coefficients(mp, zs)
    bh, kh, ch = _linear_coefficients(mp, zs[:-1] * math.exp(-decay * dt / 2))
    coef = (b[:-1], k[:-1], c[:-1], bh, kh, ch, b[1:], k[1:], c[1:], mp.tau, dt)
    m1, m2 = _rk4_linear(0.0, 0.0, *coef)
    s11, s21 = _rk4_linear(1.0, 0.0, *coef)
    s12, s22 = _rk4_linear(0.0, 1.0, *coef)
    s11, s21, s12, s22 = s11 - m1, s21 - m2, s12 - m1, s22 - m2
    y1 = np.empty((n + 1, mp.dof))
    y2 = np.empty((n + 1, mp.dof))
    for j in range(mp.dof):
        a, bb, cc, dd = s11[:, j].tolist(), s12[:, j].tolist(), s21[:, j].tolist(), s22[:, j].tolist()
        e, f = m1[:, j].tolist(), m2[:, j].tolist()
        p, v = float(mp.y1[j]), float(mp.y2[j])
        col1, col2 = [p], [v]
        for i in range(n):
            p, v = a[i] * p + bb[i] * v + e[i], cc[i] * p + dd[i] * v + f[i]
            col1.append(p)
            col2.append(v)
        y1[:, j] = col1
        y2[:, j] = col2
    if not (np.all(np.isfinite(y1[-1])) and np.all(np.isfinite(y2[-1]))):
        raise NumericalDivergence("primitive state became non-finite")
    mp.y1, mp.y2 = y1[-1].copy(), y2[-1].copy()
    return mp.tau * (b[:-1] - k[:-1] * y1[:-1] - c[:-1] * y2[:-1])


def rollout(mp: MotorPrimitive, duration: float, dt: float = 1e-3) -> TaskTrajectory:
    """Integrate a started primitive for ``duration`` seconds."""
    n = int(round(duration / dt))
    cs = CanonicalSystem(1.0, mp.tau, mp.alpha_z)
    ts = [0.0]
    xs = [mp.y1.copy()]
    xds = [mp.tau * mp.y2]
    xdds = [mp.acceleration(mp.y1, mp.tau * mp.y2, 1.0)]
    for k in range(n):
        x, xd, xdd = step_primitive(mp, cs.z, dt)
        cs = step_canonical(cs, dt)
        ts.append((k + 1) * dt)
        xs.append(x)
        xds.append(xd)
        xdds.append(xdd)
    return TaskTrajectory(np.array(ts), np.array(xs), np.array(xds), np.array(xdds))


def imitate(demo: TaskTrajectory, n_basis: int, mode: str = STANDARD,
            alpha_y: float = ALPHA_Y, alpha_z: float = ALPHA_Z,
            method: str = "global") -> MotorPrimitive:
    """Fit primitive weights to a demonstration.

    The target forcing is obtained by inverting the transformation system
    along the demonstration.  ``method="global"`` solves one ridge problem
    for all kernels jointly; ``method="local"`` is classic per-kernel
    locally weighted regression (each kernel fitted in isolation).
    """
    if method not in ("global", "local"):
        raise ValueError(f"unknown imitation method {method!r}")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    T = demo.duration
    if not T > 0:
        raise ValueError("demonstration has zero duration")
    if len(demo.t) < 2 * n_basis:
        raise ValueError("demonstration too short for the requested basis count")
    tau = 1.0 / T
    basis = BasisSet.uniform_in_time(n_basis, alpha_z)
    x0 = demo.x[0]
    goal = demo.x[-1].copy()
    gdot = demo.xd[-1].copy() if mode == VELOCITY_GOAL else np.zeros(demo.dof)
    mp = MotorPrimitive(np.zeros((n_basis, demo.dof)), basis, goal, gdot,
                        amplitude_from(goal, x0), tau, alpha_y, alpha_h=alpha_z,
                        alpha_z=alpha_z, mode=mode)
    t = demo.t - demo.t[0]
    z = np.exp(-tau * alpha_z * t)
    y2 = demo.xd / tau
    y2dot = demo.xdd / tau
    if mode == STANDARD:
        spring = alpha_y * (mp.beta_y * (goal - demo.x) - y2)
    else:
        g0 = goal - gdot / tau
        gm = g0[None, :] - np.outer(np.log(z), gdot) / (tau * mp.alpha_h)
        spring = (1 - z)[:, None] * alpha_y * (mp.beta_y * (gm - demo.x) + gdot / tau - y2)
    f_target = (y2dot / tau - spring) / mp.amplitude
    psi = basis_activations(basis, z)                     # (T, N)
    if method == "local":
        num = psi.T @ (z[:, None] * f_target)             # (N, d)
        den = psi.T @ (z ** 2) + IMITATION_RIDGE          # (N,)
        mp.weights = num / den[:, None]
    else:
        X = psi * z[:, None]
        A = X.T @ X + IMITATION_RIDGE * np.eye(n_basis)
        mp.weights = np.linalg.solve(A, X.T @ f_target)
    mp.y1 = x0.copy()
    mp.y2 = demo.xd[0] / tau
    return mp
