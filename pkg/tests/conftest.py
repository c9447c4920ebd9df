import numpy as np
import pytest

from prioritized_control.policy_learning import CostModel
from prioritized_control.robot import reference_arm


@pytest.fixture
def arm():
    return reference_arm()


@pytest.fixture
def cost(arm):
    return CostModel.default(arm.n, arm.rest_posture)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def quintic(T, x0, v0, a0, x1, v1, a1, n=501):
    """Samples of the quintic with the given boundary position, velocity and acceleration."""
    M = np.array([[1, 0, 0, 0, 0, 0], [0, 1, 0, 0, 0, 0], [0, 0, 2, 0, 0, 0],
                  [1, T, T**2, T**3, T**4, T**5], [0, 1, 2 * T, 3 * T**2, 4 * T**3, 5 * T**4],
                  [0, 0, 2, 6 * T, 12 * T**2, 20 * T**3]])
    c = np.linalg.solve(M, [x0, v0, a0, x1, v1, a1])[::-1]
    t = np.linspace(0, T, n)
    return (t, np.polyval(c, t)[:, None], np.polyval(np.polyder(c), t)[:, None],
            np.polyval(np.polyder(c, 2), t)[:, None])


class LinearArm:
    """Arm stand-in with a constant task Jacobian, so the oracle is linear in the state."""

    def __init__(self, J):
        self.J = np.asarray(J, dtype=float)
        self.n = self.J.shape[1]

    def full_jacobian(self, q):
        return self.J

    def jdot_qdot(self, q, qd):
        return np.zeros(self.J.shape[0])


def conflict_fixture(seed=0, T=600):
    """Three tasks (2 + 1 + 1 rows) on three joints, so they cannot all hold at once.

    Returns ``(arm, tasks, cost, datasets)``; each dataset is the analytic oracle
    executing only its own task from random states.
    """
    from prioritized_control.policy_learning import CostModel, Dataset, features
    from prioritized_control.robot import TaskMap, oracle_control

    J = np.array([[1.0, 0.5, 0.0], [0.0, 1.0, 0.3], [0.4, 0.2, 1.0], [0.7, -0.6, 0.5]])
    arm = LinearArm(J)
    tasks = [TaskMap("a", (0, 1)), TaskMap("b", (2,)), TaskMap("c", (3,))]
    cost = CostModel.default(3)    # q0 = 0 keeps u0 linear in the features
    rng = np.random.default_rng(seed)
    datasets = []
    for task in tasks:
        phi, u = [], []
        for _ in range(T):
            q, qd = rng.uniform(-0.5, 0.5, 3), rng.uniform(-1, 1, 3)
            xdd = rng.uniform(-2, 2, task.dim)
            u.append(oracle_control(arm, q, qd, [(task, xdd)], cost).u)
            phi.append(features(xdd, qd, q))
        datasets.append(Dataset(np.array(phi), np.array(u), task.dim))
    return arm, tasks, cost, datasets


def execute(plan, cfg):
    """Ball right after the planned hit, executed exactly."""
    from prioritized_control.bounce_sim import BallState, RacketState, reflect

    racket = RacketState(plan.hit_point, plan.racket_normal, [0.0, 0.0, plan.racket_vz])
    return BallState(plan.hit_point, reflect(plan.v_in, racket, cfg.restitution))


def closure_errors(ball, cfg):
    """Errors of one planned hit: apex height, landing point, and the apex of the next bounce."""
    from prioritized_control.bounce_sim import apex_height, fly, plan_hit, plane_crossing_time

    target = np.array([*cfg.target_xy, cfg.target_height])
    out = execute(plan_hit(ball, cfg), cfg)
    apex_err = abs(apex_height(out, cfg.gravity) - cfg.target_height)
    land = fly(out, plane_crossing_time(out, cfg.plane_height, cfg.gravity), cfg.gravity)
    land_err = np.linalg.norm(land.p[:2] - target[:2])
    # the ball now arrives under the target; the next hit sends it straight up
    nxt = execute(plan_hit(land, cfg), cfg)
    top = fly(nxt, nxt.v[2] / cfg.gravity, cfg.gravity)
    return apex_err, land_err, float(np.linalg.norm(top.p - target)), float(np.linalg.norm(nxt.v[:2]))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
