import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prioritized_control import primitives as P
from prioritized_control.harness import _min_jerk

from conftest import quintic


def min_jerk_demo(x0=(0.0, 0.5), x1=(1.0, -0.5), T=1.0, n=1001):
    t = np.linspace(0, T, n)
    return P.TaskTrajectory(t, *_min_jerk(t, T, list(x0), list(x1)))


def swing_demo():
    # ends at 0.3 while still moving at 0.6
    return P.TaskTrajectory(*quintic(0.5, 0, 0, 0, 0.3, 0.6, 0))


# -- canonical system and basis ---------------------------------------------------

def test_canonical_matches_closed_form():
    cs = P.CanonicalSystem(1.0, tau=2.0)
    dt = 1e-3
    for k in range(1, 501):
        cs = P.step_canonical(cs, dt)
        expected = math.exp(-2.0 * P.ALPHA_Z * k * dt)
        assert abs(cs.z - expected) <= 1e-13 * expected


def test_canonical_reaches_one_percent_after_one_duration():
    assert P.CanonicalSystem(1.0, tau=1 / 0.4).phase_at(0.4) == pytest.approx(0.01, rel=1e-12)


def test_canonical_rejects_negative_step():
    with pytest.raises(ValueError):
        P.step_canonical(P.CanonicalSystem(), -1e-3)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 40), st.floats(1e-6, 1.0))
def test_basis_partition_of_unity(n_basis, z):
    psi = P.basis_activations(P.BasisSet.uniform_in_time(n_basis), z)
    assert abs(psi.sum() - 1.0) < 1e-12
    assert np.all(psi >= 0)


def test_basis_rejects_bad_widths():
    with pytest.raises(ValueError):
        P.BasisSet(np.array([1.0, 0.5]), np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        P.BasisSet.uniform_in_time(0)


def test_basis_centers_equally_spaced_in_time():
    b = P.BasisSet.uniform_in_time(5)
    times = -np.log(b.centers) / P.ALPHA_Z
    np.testing.assert_allclose(times, np.linspace(0, 1, 5), atol=1e-12)


# -- imitation and rollout ----------------------------------------------------------

def test_imitation_round_trip():
    demo = min_jerk_demo()
    mp = P.imitate(demo, 15)
    mp.start(demo.x[0], demo.xd[0], demo.x[-1], demo.duration)
    out = P.rollout(mp, demo.duration)
    amp = np.abs(demo.x[-1] - demo.x[0])
    rmse = np.sqrt(np.mean((out.x - demo.x) ** 2, axis=0))
    assert np.all(rmse < 1e-3 * amp)


def test_local_imitation_also_tracks_roughly():
    demo = min_jerk_demo()
    mp = P.imitate(demo, 30, method="local")
    mp.start(demo.x[0], demo.xd[0], demo.x[-1], demo.duration)
    out = P.rollout(mp, demo.duration)
    np.testing.assert_allclose(out.x[-1], demo.x[-1], atol=2e-2)


def test_velocity_goal_endpoint():
    demo = swing_demo()
    mp = P.imitate(demo, 15, P.VELOCITY_GOAL)
    mp.start([0.0], [0.0], [0.3], 0.5, [0.6])
    out = P.rollout(mp, 0.5)
    assert abs(out.x[-1, 0] - 0.3) <= 1e-2 * 0.3
    assert abs(out.xd[-1, 0] - 0.6) <= 1e-2 * 0.6


def test_velocity_goal_endpoint_without_forcing():
    mp = P.imitate(swing_demo(), 15, P.VELOCITY_GOAL)
    mp.weights[:] = 0
    mp.start([0.0], [0.0], [0.3], 0.5, [0.6])
    out = P.rollout(mp, 0.5)
    assert abs(out.x[-1, 0] - 0.3) <= 1e-2 * 0.3
    assert abs(out.xd[-1, 0] - 0.6) <= 1e-2 * 0.6


def test_moving_goal_reaches_goal_at_end_of_movement():
    mp = P.imitate(swing_demo(), 15, P.VELOCITY_GOAL)
    mp.start([0.0], [0.0], [0.3], 0.5, [0.6])
    # at z(T) = exp(-alpha_z) the moving goal has travelled one duration at g_dot
    np.testing.assert_allclose(mp.moving_goal(math.exp(-P.ALPHA_Z)), [0.3], atol=1e-12)


def test_rk4_is_fourth_order():
    mp = P.imitate(swing_demo(), 15, P.VELOCITY_GOAL)

    def end(n):
        m = mp.copy()
        m.start([0.0], [0.0], [0.3], 0.5, [0.6])
        return P.rollout(m, 0.5, 0.5 / n).x[-1, 0]

    ref = end(8000)
    errs = [abs(end(n) - ref) for n in (50, 100, 200)]
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert all(3.5 < o < 4.5 for o in orders), orders


@pytest.mark.parametrize("mode", P.MODES)
def test_advance_matches_step_primitive(mode):
    demo = swing_demo() if mode == P.VELOCITY_GOAL else min_jerk_demo()
    mp = P.imitate(demo, 12, mode)
    mp.start(demo.x[0] + 0.01, demo.xd[0] + 0.1, demo.x[-1], 0.6,
             demo.xd[-1] if mode == P.VELOCITY_GOAL else None)
    a, b = mp.copy(), mp.copy()
    dt, n = 1e-3, 300
    fast = P.advance(a, 1.0, n, dt)
    cs = P.CanonicalSystem(1.0, b.tau)
    for k in range(n):
        xdd = b.acceleration(b.y1, b.tau * b.y2, cs.z)
        np.testing.assert_allclose(fast[k], xdd, rtol=1e-10, atol=1e-10)
        P.step_primitive(b, cs.z, dt)
        cs = P.step_canonical(cs, dt)
    np.testing.assert_allclose(a.y1, b.y1, atol=1e-12)
    np.testing.assert_allclose(a.y2, b.y2, atol=1e-10)


def test_spatial_invariance():
    demo = min_jerk_demo()
    mp = P.imitate(demo, 15)
    a, b = mp.copy(), mp.copy()
    a.start([0.0, 0.0], [0.0, 0.0], [1.0, 2.0], 1.0)
    b.start([0.0, 0.0], [0.0, 0.0], [3.0, 6.0], 1.0)
    np.testing.assert_allclose(P.rollout(b, 1.0).x, 3.0 * P.rollout(a, 1.0).x, atol=1e-10)


def test_temporal_invariance():
    mp = P.imitate(min_jerk_demo(), 15)
    a, b = mp.copy(), mp.copy()
    a.start([0.0, 0.5], [0.0, 0.0], [1.0, -0.5], 1.0)
    b.start([0.0, 0.5], [0.0, 0.0], [1.0, -0.5], 2.0)
    xa = P.rollout(a, 1.0, 1e-3).x
    xb = P.rollout(b, 2.0, 2e-3).x
    np.testing.assert_allclose(xa, xb, atol=1e-12)


def test_constant_demo_gives_no_forcing():
    t = np.linspace(0, 1, 501)
    x = np.full((501, 1), 0.7)
    z = np.zeros((501, 1))
    mp = P.imitate(P.TaskTrajectory(t, x, z, z), 10)
    assert np.max(np.abs(mp.weights)) < 1e-9
    mp.start([0.7], [0.0], [0.7], 1.0)
    np.testing.assert_allclose(P.rollout(mp, 1.0).x, 0.7, atol=1e-12)


def test_standard_mode_converges_to_goal():
    mp = P.imitate(min_jerk_demo(), 15)
    mp.start([0.2, -0.1], [0.0, 0.0], [0.5, 0.4], 0.5)
    out = P.rollout(mp, 1.5)
    np.testing.assert_allclose(out.x[-1], [0.5, 0.4], atol=1e-3)


def test_runtime_amplitude_is_displacement():
    mp = P.imitate(min_jerk_demo(), 15)
    mp.start([0.2, 0.4], [0.0, 0.0], [0.5, 0.4], 0.5)
    np.testing.assert_allclose(mp.amplitude, [0.3, 0.0])


def test_fixed_amplitude_is_kept():
    mp = P.imitate(min_jerk_demo(), 15)
    mp.fixed_amplitude = True
    before = mp.amplitude.copy()
    mp.start([0.2, 0.4], [0.0, 0.0], [0.5, 0.4], 0.5)
    np.testing.assert_array_equal(mp.amplitude, before)


def test_amplitude_from_near_zero_uses_one():
    np.testing.assert_array_equal(P.amplitude_from([1.0, 2.0], [1.0, 0.0]), [1.0, 2.0])


def test_invalid_arguments():
    mp = P.imitate(min_jerk_demo(), 15)
    with pytest.raises(ValueError):
        mp.start([0, 0], [0, 0], [1, 1], 0.0)
    with pytest.raises(ValueError):
        P.step_primitive(mp, 1.0, 0.0)
    with pytest.raises(ValueError):
        P.imitate(min_jerk_demo(), 15, mode="cyclic")
    with pytest.raises(ValueError):
        P.imitate(min_jerk_demo(n=11), 15)
    with pytest.raises(ValueError):
        P.TaskTrajectory([0.0, 0.0], [1.0, 1.0], [0.0, 0.0], [0.0, 0.0])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    mp = P.imitate(min_jerk_demo(), 15)
    mp.start([0, 0], [0, 0], [1, 1], 1.0)
    mp.y1 = np.array([np.inf, 0.0])
    with pytest.raises(P.NumericalDivergence):
        P.step_primitive(mp, 1.0, 1e-3)


def test_serialization_round_trip(tmp_path):
    mp = P.imitate(swing_demo(), 15, P.VELOCITY_GOAL)
    mp.fixed_amplitude = True
    mp.save(tmp_path / "mp.json")
    back = P.MotorPrimitive.load(tmp_path / "mp.json")
    np.testing.assert_array_equal(back.weights, mp.weights)
    assert back.mode == mp.mode and back.fixed_amplitude


def test_trajectory_csv_round_trip(tmp_path):
    demo = min_jerk_demo(n=51)
    demo.save_csv(tmp_path / "d.csv")
    back = P.TaskTrajectory.load_csv(tmp_path / "d.csv")
    np.testing.assert_array_equal(back.x, demo.x)
    np.testing.assert_array_equal(back.xdd, demo.xdd)
