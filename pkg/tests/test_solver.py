import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from manikin.errors import DimensionMismatch, NonPositiveDt, SingularMass, ValidationError
from manikin.model import Hand, State, forward_kinematics, kinematics, load_skeleton, serial_chain
from manikin.solver import (
    GRAVITY, HybridPartition, IkProblem, IkStatus, bias_forces, forward_dynamics, gravity_torques,
    hybrid_solve, inverse_dynamics, limit_weights, mass_matrix, mechanical_energy, solve_ik, step,
)

from conftest import random_q
from oracles import rnea_loop

TIP = Hand(2, np.array([1.0, 0.0, 0.0]))


def brute_kinetic_energy(sk, q, qd, h=1e-7):
    """Sum of 1/2 m |v|^2 + 1/2 w^T I w with link velocities from central differences of FK."""
    fp, fm = forward_kinematics(sk, q + h * qd), forward_kinematics(sk, q - h * qd)
    fk = forward_kinematics(sk, q)
    ke = 0.0
    for link, Tp, Tm, T in zip(sk.links, fp, fm, fk):
        v = (Tp.apply(link.com_offset) - Tm.apply(link.com_offset)) / (2 * h)
        Wx = (Tp.rotation - Tm.rotation) / (2 * h) @ T.rotation.T
        w = np.array([Wx[2, 1], Wx[0, 2], Wx[1, 0]])
        Iw = T.rotation @ link.inertia @ T.rotation.T
        ke += 0.5 * link.mass * v @ v + 0.5 * w @ Iw @ w
    return ke


# -- mass matrix -----------------------------------------------------------

def test_point_pendulum_mass(point_pendulum):
    np.testing.assert_allclose(mass_matrix(point_pendulum, [0.3]), [[1.0]], atol=1e-12)


def test_mass_matrix_energy_oracle(double_pendulum):
    rng = np.random.default_rng(10)
    for _ in range(20):
        q, qd = rng.uniform(-3, 3, 2), rng.uniform(-3, 3, 2)
        ke = 0.5 * qd @ mass_matrix(double_pendulum, q) @ qd
        assert abs(ke - brute_kinetic_energy(double_pendulum, q, qd)) < 1e-7 * max(1.0, ke)


def test_mass_matrix_energy_oracle_humanoid(humanoid):
    sk, _ = humanoid
    rng = np.random.default_rng(11)
    q, qd = random_q(sk, rng), rng.uniform(-1, 1, sk.dof)
    ke = 0.5 * qd @ mass_matrix(sk, q) @ qd
    assert abs(ke - brute_kinetic_energy(sk, q, qd)) < 1e-6 * ke


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mass_matrix_symmetric_positive_definite(humanoid, seed):
    sk, _ = humanoid
    M = mass_matrix(sk, random_q(sk, np.random.default_rng(seed)))
    assert np.max(np.abs(M - M.T)) < 1e-10
    np.linalg.cholesky(M)


def test_recursion_matches_loop_oracle(humanoid):
    sk, _ = humanoid
    rng = np.random.default_rng(12)
    for _ in range(5):
        q, qd, qdd = random_q(sk, rng), rng.normal(size=sk.dof), rng.normal(size=sk.dof)
        ref = rnea_loop(sk, kinematics(sk, q), qdd[None], -GRAVITY[None], qd)[0]
        np.testing.assert_allclose(inverse_dynamics(sk, State(q, qd), qdd), ref, atol=1e-9)
        M_ref = rnea_loop(sk, kinematics(sk, q), np.eye(sk.dof), np.zeros((sk.dof, 3)))
        np.testing.assert_allclose(mass_matrix(sk, q), M_ref, atol=1e-10)


def test_gravity_torques_are_static_bias(humanoid):
    sk, prof = humanoid
    q = prof.default_posture
    np.testing.assert_allclose(gravity_torques(sk, q), bias_forces(sk, q, np.zeros(sk.dof)), atol=1e-12)


# -- forward / inverse dynamics --------------------------------------------

def test_hanging_pendulum_is_at_rest(point_pendulum):
    assert forward_dynamics(point_pendulum, State([0.0], [0.0]), [0.0])[0] == pytest.approx(0.0, abs=1e-12)


def test_horizontal_pendulum_falls_at_g(point_pendulum):
    qdd = forward_dynamics(point_pendulum, State([math.pi / 2], [0.0]), [0.0])
    assert qdd[0] == pytest.approx(-9.81, abs=1e-12)


def test_horizontal_static_hold_torque(point_pendulum):
    tau = inverse_dynamics(point_pendulum, State([math.pi / 2], [0.0]), [0.0])
    assert tau[0] == pytest.approx(9.81, abs=1e-12)


def test_free_body_needs_no_torque(double_pendulum):
    tau = inverse_dynamics(double_pendulum, State([0.4, -0.2], [0.0, 0.0]), [0.0, 0.0], gravity=np.zeros(3))
    np.testing.assert_allclose(tau, 0.0, atol=1e-15)


@pytest.mark.parametrize("which", ["double_pendulum", "humanoid"])
def test_dynamics_round_trip(request, which):
    sk = request.getfixturevalue(which)
    sk = sk[0] if isinstance(sk, tuple) else sk
    rng = np.random.default_rng(13)
    for _ in range(25):
        s = State(random_q(sk, rng), rng.normal(size=sk.dof))
        tau = rng.normal(scale=10.0, size=sk.dof)
        assert np.max(np.abs(inverse_dynamics(sk, s, forward_dynamics(sk, s, tau)) - tau)) < 1e-8
        qdd = rng.normal(size=sk.dof)
        assert np.max(np.abs(forward_dynamics(sk, s, inverse_dynamics(sk, s, qdd)) - qdd)) < 1e-8


def test_dimension_checks(double_pendulum):
    s = State([0.0, 0.0], [0.0, 0.0])
    with pytest.raises(DimensionMismatch):
        forward_dynamics(double_pendulum, s, [0.0])
    with pytest.raises(DimensionMismatch):
        inverse_dynamics(double_pendulum, s, [0.0, 0.0, 0.0])
    with pytest.raises(DimensionMismatch):
        State([0.0, 0.0], [0.0])


def test_singular_mass():
    sk = load_skeleton(serial_chain([1.0, 1.0], masses=[1.0, 0.0], point_mass=True))
    with pytest.raises(SingularMass):
        forward_dynamics(sk, State([0.0, 0.0], [0.0, 0.0]), [0.0, 0.0])


# -- hybrid solve ----------------------------------------------------------

def test_hybrid_empty_prescription_is_forward_dynamics(humanoid):
    sk, _ = humanoid
    rng = np.random.default_rng(14)
    s = State(random_q(sk, rng), rng.normal(size=sk.dof))
    tau = rng.normal(size=sk.dof)
    qdd, ctau = hybrid_solve(sk, s, HybridPartition.build(sk.dof, {}, tau))
    assert np.array_equal(qdd, forward_dynamics(sk, s, tau))
    assert ctau.size == 0


def test_hybrid_full_prescription_is_inverse_dynamics(humanoid):
    sk, _ = humanoid
    rng = np.random.default_rng(15)
    s = State(random_q(sk, rng), rng.normal(size=sk.dof))
    acc = rng.normal(size=sk.dof)
    qdd, ctau = hybrid_solve(sk, s, HybridPartition.build(sk.dof, dict(enumerate(acc))))
    assert np.max(np.abs(qdd - acc)) <= 1e-10
    assert np.max(np.abs(ctau - inverse_dynamics(sk, s, acc))) <= 1e-10


def test_hybrid_locked_joint_is_single_pendulum(double_pendulum):
    sk = double_pendulum
    link = sk.links[2]
    # rod pivoting at the elbow: I = I_com + m c^2, gravity torque -m g c sin(absolute angle)
    c = 0.5
    I_pivot = link.inertia[0, 0] + link.mass * c * c
    s = State([0.7, 0.3], [0.0, 0.0])
    worst = 0.0
    for _ in range(1000):
        qdd, _ = hybrid_solve(sk, s, HybridPartition.build(2, {0: 0.0}))
        expect = -link.mass * 9.81 * c * math.sin(s.q[0] + s.q[1]) / I_pivot
        worst = max(worst, abs(qdd[1] - expect))
        s = step(s, qdd, 1e-3)
    assert s.q[0] == 0.7 and s.qd[0] == 0.0
    assert worst < 1e-6


def test_partition_must_cover_every_dof(double_pendulum):
    part = HybridPartition([0], [0.0], [], [])
    with pytest.raises(ValidationError):
        hybrid_solve(double_pendulum, State([0.0, 0.0], [0.0, 0.0]), part)


# -- integration -----------------------------------------------------------

def test_step_at_rest():
    s = step(State([0.2, 0.3], [0.0, 0.0]), np.zeros(2), 0.01)
    assert np.array_equal(s.q, [0.2, 0.3]) and s.time == pytest.approx(0.01)


def test_step_constant_velocity():
    s = step(State([0.0], [1.0]), np.zeros(1), 0.1)
    assert s.q[0] == pytest.approx(0.1)


@pytest.mark.parametrize("dt", [0.0, -1e-3])
def test_step_rejects_bad_dt(dt):
    with pytest.raises(NonPositiveDt):
        step(State([0.0], [0.0]), np.zeros(1), dt)


def test_step_clamps_and_stops_at_limits(limited_arm):
    sk, _ = limited_arm
    s = step(State([0.0, 0.05], [0.0, -10.0]), np.zeros(2), 0.01, sk)
    assert s.q[1] == 0.0 and s.qd[1] == 0.0


def test_energy_drift_double_pendulum(double_pendulum):
    sk = double_pendulum
    s = State([1.0, 0.5], [0.0, 0.0])
    # potential measured from the lowest configuration so E0 is the energy available to move
    base = mechanical_energy(sk, State([0.0, 0.0], [0.0, 0.0]))
    e0 = mechanical_energy(sk, s) - base
    worst = 0.0
    for _ in range(5000):
        s = step(s, forward_dynamics(sk, s, np.zeros(2)), 1e-3)
        worst = max(worst, abs(mechanical_energy(sk, s) - base - e0) / e0)
    assert worst < 0.02


# -- inverse kinematics ----------------------------------------------------

def analytic_2r(x, y, l1=1.0, l2=1.0):
    """Both law-of-cosines solutions; returns (elbow-down, elbow-up)."""
    c2 = (x * x + y * y - l1 * l1 - l2 * l2) / (2 * l1 * l2)
    c2 = min(1.0, max(-1.0, c2))
    out = []
    for s2 in (math.sqrt(1 - c2 * c2), -math.sqrt(1 - c2 * c2)):
        q2 = math.atan2(s2, c2)
        q1 = math.atan2(y, x) - math.atan2(l2 * s2, l1 + l2 * c2)
        out.append(np.array([q1, q2]))
    return out


def tip_of(sk, q):
    return forward_kinematics(sk, q)[2].apply([1.0, 0.0, 0.0])


def test_ik_identity(arm2):
    q0 = np.array([0.3, 0.4])
    res = solve_ik(arm2, q0, IkProblem(TIP, tip_of(arm2, q0)))
    assert res.status is IkStatus.Converged and res.iters == 0
    assert np.array_equal(res.q, q0)


def test_ik_reaches_one_one(arm2):
    res = solve_ik(arm2, np.array([0.1, 0.1]), IkProblem(TIP, [1.0, 1.0, 0.0]))
    assert res.status is IkStatus.Converged
    assert np.linalg.norm(tip_of(arm2, res.q) - [1.0, 1.0, 0.0]) <= 1e-4
    np.testing.assert_allclose(res.q, analytic_2r(1.0, 1.0)[0], atol=1e-3)


def test_ik_beyond_reach(arm2):
    res = solve_ik(arm2, np.zeros(2), IkProblem(TIP, [3.0, 0.0, 0.0]))
    assert res.status is IkStatus.Unreachable
    # best effort still points the arm at the target
    np.testing.assert_allclose(tip_of(arm2, res.q), [2.0, 0.0, 0.0], atol=1e-2)


def test_ik_random_targets_agree_with_analytic(arm2):
    rng = np.random.default_rng(16)
    for _ in range(100):
        r, a = rng.uniform(0.2, 1.95), rng.uniform(-math.pi, math.pi)
        target = np.array([r * math.cos(a), r * math.sin(a), 0.0])
        res = solve_ik(arm2, rng.uniform(-1, 1, 2), IkProblem(TIP, target))
        assert res.status is IkStatus.Converged and res.iters <= 200
        analytic = min((tip_of(arm2, q) for q in analytic_2r(*target[:2])),
                       key=lambda p: np.linalg.norm(p - target))
        assert np.linalg.norm(tip_of(arm2, res.q) - analytic) <= 2e-4


def test_ik_problem_validation():
    for kw in ({"damping": 0.0}, {"tol": 0.0}, {"max_iters": 0}, {"max_error": 0.0}, {"step_scale": 1.5}):
        with pytest.raises(ValidationError):
            IkProblem(TIP, [1.0, 0.0, 0.0], **kw)


def test_ik_dimension_mismatch(arm2):
    with pytest.raises(DimensionMismatch):
        solve_ik(arm2, np.zeros(3), IkProblem(TIP, [1.0, 0.0, 0.0]))


@settings(max_examples=60, deadline=None)
@given(st.floats(-2.2, 2.2), st.floats(-2.2, 2.2), st.floats(-3.0, 3.0), st.floats(0.0, 3.0),
       st.booleans())
def test_ik_residual_monotone_and_within_limits(limited_arm, x, y, q1, q2, weighted):
    sk, _ = limited_arm
    res = solve_ik(sk, np.array([q1, q2]), IkProblem(TIP, [x, y, 0.0], limit_weighting=weighted))
    assert all(b <= a for a, b in zip(res.history, res.history[1:]))
    assert np.all(sk.lower <= res.q) and np.all(res.q <= sk.upper)
    if res.status is IkStatus.Converged:
        assert res.residual <= 1e-4


def test_ik_humanoid_hand(humanoid):
    sk, prof = humanoid
    hand = prof.hand("right")
    q0 = prof.default_posture
    start = forward_kinematics(sk, q0)[sk.link_idx(hand.link)].apply(hand.point)
    target = start + np.array([0.25, 0.1, 0.25])
    res = solve_ik(sk, q0, IkProblem(hand, target, dofs=prof.arm_dofs(sk, "right")))
    assert res.status is IkStatus.Converged
    # only arm joints moved
    moved = np.flatnonzero(res.q != q0)
    assert set(moved) <= set(prof.arm_dofs(sk, "right"))


def test_limit_weights():
    lo, hi = np.array([-1.0, -1.0]), np.array([1.0, 1.0])
    q = np.array([0.9, 0.9])
    w = limit_weights(q, lo, hi, np.array([1.0, -1.0]))
    assert w[0] > 1.0 and w[1] == 1.0
    assert np.all(limit_weights(np.zeros(2), lo, hi, np.ones(2)) == 1.0)
