"""Kinematic redundant arm, task maps and the analytic prioritized oracle.

The reference arm is a yaw joint followed by a planar chain of pitch
joints whose last link carries the racket.  The racket normal is the
local z axis of the last frame, so its tilt in the arm's vertical plane
equals the summed pitch angles.

Task vector layout is ``[x, y, z, pitch]``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TASK_COORDS = ("x", "y", "z", "pitch")


@dataclass(frozen=True)
class TaskMap:
    """Selects the task-space coordinates a primitive controls."""

    name: str
    rows: tuple[int, ...]

    @property
    def dim(self) -> int:
        return len(self.rows)


TASK_MAPS = {
    "move": TaskMap("move", (0, 1)),
    "hit": TaskMap("hit", (2,)),
    "orient": TaskMap("orient", (3,)),
    "position": TaskMap("position", (0, 1, 2)),
}


@dataclass(frozen=True)
class Joint:
    axis: str
    offset: float
    length: float
    limits: tuple[float, float]


@dataclass
class KinematicArm:
    """Yaw + planar pitch chain.

    Joint angle ``k`` is ``q[k] + offset[k]``.  The yaw joint's ``length`` is
    the column height of the shoulder above the base; pitch joints translate
    by ``length`` along their local x axis.  Positive pitch points a link
    downward.
    """

    joints: list[Joint]
    rest_posture: np.ndarray = field(default=None)

    def __post_init__(self):
        if len(self.joints) < 2 or self.joints[0].axis != "z":
            raise ValueError("first joint must be a yaw joint about z")
        if any(j.axis != "y" for j in self.joints[1:]):
            raise ValueError("joints after the first must be pitch joints about y")
        if self.rest_posture is None:
            self.rest_posture = np.zeros(self.n)
        self.rest_posture = np.asarray(self.rest_posture, dtype=float)
        self._offsets = [j.offset for j in self.joints]
        self._lengths = [j.length for j in self.joints]
        self.lower = np.array([j.limits[0] for j in self.joints])
        self.upper = np.array([j.limits[1] for j in self.joints])

    @property
    def n(self) -> int:
        return len(self.joints)

    # -- kinematics -----------------------------------------------------
    def task_coordinates(self, q) -> np.ndarray:
        """Full task vector ``[x, y, z, pitch]`` at posture ``q``."""
        psi = q[0] + self._offsets[0]
        r = 0.0
        z = self._lengths[0]
        s = 0.0
        for k in range(1, self.n):
            s += q[k] + self._offsets[k]
            r += self._lengths[k] * math.cos(s)
            z -= self._lengths[k] * math.sin(s)
        return np.array([r * math.cos(psi), r * math.sin(psi), z, s])

    def forward_kinematics(self, q) -> tuple[np.ndarray, np.ndarray]:
        """Racket center position and unit normal."""
        x = self.task_coordinates(q)
        psi = q[0] + self._offsets[0]
        sp = math.sin(x[3])
        normal = np.array([math.cos(psi) * sp, math.sin(psi) * sp, math.cos(x[3])])
        return x[:3], normal

    def full_jacobian(self, q) -> np.ndarray:
        """4 x n Jacobian of the full task vector."""
        n = self.n
        psi = q[0] + self._offsets[0]
        cps, sps = math.cos(psi), math.sin(psi)
        cum = []
        s = 0.0
        for k in range(1, n):
            s += q[k] + self._offsets[k]
            cum.append(s)
        # suffix sums of the link contributions
        dr = [0.0] * n
        dz = [0.0] * n
        acc_r = acc_z = 0.0
        for k in range(n - 1, 0, -1):
            lk = self._lengths[k]
            acc_r -= lk * math.sin(cum[k - 1])
            acc_z -= lk * math.cos(cum[k - 1])
            dr[k] = acc_r
            dz[k] = acc_z
        r = sum(self._lengths[k] * math.cos(cum[k - 1]) for k in range(1, n))
        J = np.zeros((4, n))
        J[0, 0] = -r * sps
        J[1, 0] = r * cps
        for k in range(1, n):
            J[0, k] = cps * dr[k]
            J[1, k] = sps * dr[k]
            J[2, k] = dz[k]
            J[3, k] = 1.0
        return J

    def jacobian(self, q, task: TaskMap) -> np.ndarray:
        return self.full_jacobian(q)[list(task.rows)]

    def jdot_qdot(self, q, qd, h: float = 1e-6) -> np.ndarray:
        """Velocity-product term dJ/dt @ qd of the full task vector.

        Central difference of J along the direction of motion.
        """
        qd = np.asarray(qd, dtype=float)
        if not np.any(qd):
            return np.zeros(4)
        Jp = self.full_jacobian(q + h * qd)
        Jm = self.full_jacobian(q - h * qd)
        return (Jp - Jm) @ qd / (2 * h)

    def within_limits(self, q) -> bool:
        return bool(np.all(q >= self.lower) and np.all(q <= self.upper))

    def inverse_kinematics(self, target, task: TaskMap | None = None, q_init=None,
                           tol: float = 1e-10, max_iter: int = 200) -> np.ndarray:
        """Damped Newton IK on the selected task coordinates.

        Redundant directions are pulled toward ``q_init`` (rest posture by
        default) through the null space.
        """
        rows = list(task.rows) if task is not None else [0, 1, 2, 3]
        target = np.asarray(target, dtype=float)
        q = np.array(self.rest_posture if q_init is None else q_init, dtype=float)
        q_ref = q.copy()
        for _ in range(max_iter):
            err = target - self.task_coordinates(q)[rows]
            if np.linalg.norm(err) < tol:
                return q
            J = self.full_jacobian(q)[rows]
            Jp = np.linalg.pinv(J, rcond=1e-10)
            q = q + Jp @ err + 0.1 * (np.eye(self.n) - Jp @ J) @ (q_ref - q)
        raise RuntimeError("inverse kinematics did not converge")

    # -- serialization --------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "joints": [
                {"axis": j.axis, "offset": j.offset, "length": j.length,
                 "limits": list(j.limits)}
                for j in self.joints
            ],
            "rest_posture": self.rest_posture.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KinematicArm":
        joints = [Joint(j["axis"], float(j["offset"]), float(j["length"]),
                        (float(j["limits"][0]), float(j["limits"][1])))
                  for j in d["joints"]]
        return cls(joints, np.asarray(d.get("rest_posture", np.zeros(len(joints))), dtype=float))

    @classmethod
    def load(cls, path) -> "KinematicArm":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def reference_arm(shoulder_height: float = 0.5, upper: float = 0.4, fore: float = 0.4,
                  handle: float = 0.1, rest_reach: float = 0.55, rest_height: float = 0.3,
                  limit: float = 1.2) -> KinematicArm:
    """The 4-DoF reference arm, with offsets chosen so that ``q = 0`` puts the
    racket at ``(rest_reach, 0, rest_height)`` facing straight up."""
    wx = rest_reach - handle
    wz = shoulder_height - rest_height
    d = math.hypot(wx, wz)
    beta = math.atan2(wz, wx)
    gamma = math.acos((upper**2 + d**2 - fore**2) / (2 * upper * d))
    s1 = beta - gamma           # upper arm, elbow up
    s2 = math.atan2(wz - upper * math.sin(s1), wx - upper * math.cos(s1))
    s3 = 0.0
    offsets = [0.0, s1, s2 - s1, s3 - s2]
    lengths = [shoulder_height, upper, fore, handle]
    joints = [Joint("z", offsets[0], lengths[0], (-limit, limit))]
    joints += [Joint("y", o, ln, (-limit, limit)) for o, ln in zip(offsets[1:], lengths[1:])]
    return KinematicArm(joints, np.zeros(4))


# -- prioritized operational-space oracle ----------------------------------

def _weighted_pinv(A: np.ndarray, m_inv_sqrt: np.ndarray, scale: float, rcond: float = 1e-9):
    """Metric-weighted pseudo-inverse ``N^-1/2 pinv(A N^-1/2)``.

    Singular values below ``rcond * scale`` count as zero; ``scale`` is the
    size of the unprojected Jacobian, so a direction the projection has
    removed is not inverted back from round-off.
    """
    U, s, Vt = np.linalg.svd(A @ m_inv_sqrt, full_matrices=False)
    inv = np.where(s > rcond * scale, 1.0 / np.where(s > 0, s, 1.0), 0.0)
    return m_inv_sqrt @ (Vt.T * inv) @ U.T


def _metric_inv_sqrt(metric: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(metric)
    w = np.where(w > 1e-12, w, 1e-12)
    return V @ np.diag(w ** -0.5) @ V.T


@dataclass
class OracleResult:
    u: np.ndarray
    damped: bool = False


def oracle_control(arm: KinematicArm, q, qd, tasks, cost, jdqd=None,
                   damping: float = 1e-3) -> OracleResult:
    """Successive null-space projection solution of the prioritized program.

    ``tasks`` is a list of ``(TaskMap, xdd_desired)`` ordered lowest
    priority first.  The result minimizes ``(u-u0)^T N (u-u0)`` among the
    controls that realize every task as well as higher-priority tasks
    allow.  A rank-deficient top task is solved with damping and flagged.
    """
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    u = cost.null_control(q, qd)
    n = arm.n
    if not tasks:
        return OracleResult(u)
    Jfull = arm.full_jacobian(q)
    if jdqd is None:
        jdqd = arm.jdot_qdot(q, qd)
    m_is = _metric_inv_sqrt(np.asarray(cost.metric, dtype=float))
    P = np.eye(n)
    damped = False
    for level, (task, xdd) in enumerate(reversed(tasks)):
        rows = list(task.rows)
        J = Jfull[rows]
        b = np.asarray(xdd, dtype=float).reshape(-1) - jdqd[rows]
        JP = J @ P
        if level == 0:
            sv = np.linalg.svd(J @ m_is, compute_uv=False)
            rank = int(np.sum(sv >= 1e-6 * max(sv.max(), 1.0)))
            if rank < len(rows):
                damped = True
                A = J @ m_is
                JPinv = m_is @ A.T @ np.linalg.inv(A @ A.T + damping**2 * np.eye(len(rows)))
                u = u + JPinv @ (b - J @ u)
                P = P - JPinv @ J
                continue
        scale = max(np.linalg.norm(J @ m_is, 2), 1.0)
        JPinv = _weighted_pinv(JP, m_is, scale)
        u = u + JPinv @ (b - J @ u)
        P = P - JPinv @ JP
    return OracleResult(u, damped)


def step_dynamics(arm: KinematicArm, q, qd, u, dt: float):
    """Advance the acceleration-controlled arm by one step.

    The control is held over the step, so the double integrator is updated
    exactly (RK4 gives the same result).  Returns ``(q, qd, ok, within_limits)``; ``ok`` is False for non-finite
    controls, in which case the state is returned unchanged.
    """
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        return q, qd, False, arm.within_limits(q)
    q = q + qd * dt + 0.5 * u * dt * dt
    qd = qd + u * dt
    return q, qd, True, arm.within_limits(q)
