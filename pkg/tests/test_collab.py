import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from manikin.collab import (GraspPoint, ObjectGains, RigidObject, augment, collab_tick, distribute_forces,
                            integrate_object, object_control)
from manikin.errors import DuplicateHand, EmptyGraspSet, UnrealizableWrench, ValidationError
from manikin.model import Transform

from oracles import least_norm

G0 = np.array([0.0, 0.0, -9.81])


def box(mass=10.0, position=(0.0, 0.0, 1.0), rotation=None):
    R = np.eye(3) if rotation is None else rotation
    return RigidObject("box", mass, np.diag([0.1, 0.2, 0.3]), Transform(R, np.asarray(position, dtype=float)))


def grasps(*attaches):
    return [GraspPoint(f"manikin:{i:04d}", "right", tuple(a)) for i, a in enumerate(attaches)]


def skew_of(v):
    x, y, z = v
    return np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])


def random_case(rng, k):
    R = Rotation.random(random_state=rng).as_matrix()
    obj = box(rng.uniform(0.5, 20.0), rng.uniform(-1, 1, 3), R)
    ao = augment(obj, grasps(*rng.uniform(-0.6, 0.6, (k, 3))))
    return ao


class Recorder:
    def __init__(self):
        self.pushed = []

    def push_hand_force(self, hand, force):
        self.pushed.append((hand, np.asarray(force)))


# --------------------------------------------------------------------------
# grasp matrix
# --------------------------------------------------------------------------

def test_grasp_at_com_is_identity_block():
    ao = augment(box(), grasps((0, 0, 0)))
    np.testing.assert_array_equal(ao.grasp_matrix, np.vstack([np.eye(3), np.zeros((3, 3))]))


def test_symmetric_grasps_give_skew_blocks():
    ao = augment(box(), grasps((0.5, 0, 0), (-0.5, 0, 0)))
    G = ao.grasp_matrix
    np.testing.assert_array_equal(G[3:, :3], skew_of((0.5, 0, 0)))
    np.testing.assert_array_equal(G[3:, 3:], skew_of((-0.5, 0, 0)))
    np.testing.assert_array_equal(G[:3], np.hstack([np.eye(3), np.eye(3)]))


def test_lever_arms_follow_the_object_pose():
    R = Rotation.from_euler("z", 90, degrees=True).as_matrix()
    ao = augment(box(rotation=R), grasps((0.5, 0, 0)))
    np.testing.assert_allclose(ao.grasp_matrix[3:], skew_of((0.0, 0.5, 0.0)), atol=1e-15)


def test_grasp_matrix_matches_wrench_sum():
    rng = np.random.default_rng(11)
    for _ in range(200):
        k = int(rng.integers(1, 6))
        ao = random_case(rng, k)
        f = rng.normal(size=3 * k) * 20
        R = ao.object.pose.rotation
        brute = np.zeros(6)
        for i, g in enumerate(ao.grasps):
            fi = f[3 * i:3 * i + 3]
            ri = R @ np.asarray(g.attach)
            brute += np.concatenate([fi, np.cross(ri, fi)])
        assert np.max(np.abs(ao.grasp_matrix @ f - brute)) <= 1e-12


def test_augment_rejects_empty_and_duplicate_grasps():
    with pytest.raises(EmptyGraspSet):
        augment(box(), [])
    g = GraspPoint("manikin:0000", "left", (0.1, 0, 0))
    with pytest.raises(DuplicateHand):
        augment(box(), [g, GraspPoint("manikin:0000", "left", (-0.1, 0, 0))])
    # the same hand name on two manikins is fine
    assert augment(box(), [g, GraspPoint("manikin:0001", "left", (-0.1, 0, 0))]).k == 2


def test_object_validation():
    with pytest.raises(ValidationError):
        RigidObject("x", 0.0, np.eye(3))
    with pytest.raises(ValidationError):
        RigidObject("x", 1.0, np.diag([1.0, -1.0, 1.0]))
    with pytest.raises(ValidationError):
        RigidObject("x", 1.0, [[1, 0.5, 0], [0, 1, 0], [0, 0, 1]])


# --------------------------------------------------------------------------
# object-level control
# --------------------------------------------------------------------------

def test_at_target_at_rest_compensates_gravity():
    ao = augment(box(10.0), grasps((0, 0, 0)))
    w = object_control(ao, ao.object.pose, gravity=G0)
    np.testing.assert_allclose(w, [0, 0, 98.1, 0, 0, 0], atol=1e-12)


def test_zero_gravity_equilibrium():
    ao = augment(box(10.0), grasps((0, 0, 0)))
    np.testing.assert_array_equal(object_control(ao, ao.object.pose, gravity=(0, 0, 0)), np.zeros(6))


def test_vertical_offset_adds_kp_times_error():
    ao = augment(box(10.0, (0.0, 0.0, 1.0)), grasps((0, 0, 0)))
    gains = ObjectGains(kp=100.0)
    # target 0.1 m above the object: lift harder
    up = object_control(ao, Transform.from_translation((0.0, 0.0, 1.1)), gains=gains, gravity=G0)
    assert up[2] == pytest.approx(98.1 + 10.0, abs=1e-9)
    # object 0.1 m above its target: the PD pulls it back down
    down = object_control(ao, Transform.from_translation((0.0, 0.0, 0.9)), gains=gains, gravity=G0)
    assert down[2] == pytest.approx(98.1 - 10.0, abs=1e-9)
    np.testing.assert_allclose(up[[0, 1, 3, 4, 5]], 0.0, atol=1e-12)


def test_damping_and_rotation_terms():
    gains = ObjectGains(kp=100.0, kd=40.0, kp_rot=20.0, kd_rot=5.0)
    obj = box(2.0).moved(twist=np.array([0.1, 0.0, 0.0, 0.0, 0.0, 0.2]))
    ao = augment(obj, grasps((0, 0, 0)))
    target = Transform(Rotation.from_rotvec([0.0, 0.0, 0.05]).as_matrix(), obj.position)
    w = object_control(ao, target, gravity=(0, 0, 0), gains=gains)
    np.testing.assert_allclose(w, [-4.0, 0.0, 0.0, 0.0, 0.0, 20.0 * 0.05 - 5.0 * 0.2], atol=1e-12)


# --------------------------------------------------------------------------
# force distribution
# --------------------------------------------------------------------------

def test_symmetric_grasps_share_the_load():
    ao = augment(box(10.0), grasps((0.5, 0, 0), (-0.5, 0, 0)))
    f = distribute_forces(ao, [0, 0, 98.1, 0, 0, 0])
    np.testing.assert_allclose(f, [0, 0, 49.05, 0, 0, 49.05], atol=1e-12)


def test_single_grasp_at_com_passes_force_through():
    ao = augment(box(), grasps((0, 0, 0)))
    np.testing.assert_allclose(distribute_forces(ao, [3.0, -2.0, 98.1, 0, 0, 0]), [3.0, -2.0, 98.1], atol=1e-12)


def test_pure_torque_on_one_point_is_unrealizable():
    ao = augment(box(), grasps((0, 0, 0)))
    with pytest.raises(UnrealizableWrench) as err:
        distribute_forces(ao, [0, 0, 0, 0, 0, 1.0])
    assert err.value.residual == pytest.approx(1.0)


def test_three_grasps_match_normal_equations():
    rng = np.random.default_rng(5)
    for _ in range(100):
        ao = random_case(rng, 3)
        w = ao.grasp_matrix @ rng.normal(size=9) * 30
        f = distribute_forces(ao, w)
        assert np.max(np.abs(f - least_norm(ao.grasp_matrix, w))) <= 1e-8


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_distribution_is_consistent_minimal_and_free_of_internal_force(k, seed):
    rng = np.random.default_rng(seed)
    ao = random_case(rng, k)
    G = ao.grasp_matrix
    w = G @ (rng.normal(size=3 * k) * 30)
    f = distribute_forces(ao, w)
    assert np.linalg.norm(G @ f - w) <= 1e-9
    # projector onto the null space of G, built from an orthonormal basis
    _, sv, Vt = np.linalg.svd(G)
    rank = int(np.sum(sv > 1e-10 * sv[0]))
    N = Vt[rank:].T
    assert np.linalg.norm(N @ (N.T @ f)) <= 1e-9
    assert np.max(np.abs(f - least_norm(G, w))) <= 1e-8
    for _ in range(5):
        other = f + N @ rng.normal(size=N.shape[1])
        assert np.linalg.norm(G @ other - w) <= 1e-8
        assert np.linalg.norm(f) <= np.linalg.norm(other) + 1e-9


def test_weights_shift_load_between_hands():
    ao = augment(box(10.0), grasps((0.5, 0, 0), (-0.5, 0, 0)))
    w = np.array([0, 0, 98.1, 0, 0, 0])
    even = distribute_forces(ao, w, weights=[1.0, 1.0])
    np.testing.assert_allclose(even, distribute_forces(ao, w), atol=1e-12)
    # in z the two hands must also balance torque about y, so only internal x-forces can move;
    # with grasps off the x axis the split does change
    ao2 = augment(box(10.0), grasps((0.3, 0.3, 0), (-0.3, 0.3, 0), (0.0, -0.4, 0)))
    w2 = np.array([5.0, 0, 98.1, 0, 0, 0])
    base = distribute_forces(ao2, w2)
    heavy = distribute_forces(ao2, w2, weights=[4.0, 1.0, 1.0])
    np.testing.assert_allclose(ao2.grasp_matrix @ heavy, w2, atol=1e-9)
    assert np.linalg.norm(heavy[:3]) > np.linalg.norm(base[:3])


# --------------------------------------------------------------------------
# collab_tick
# --------------------------------------------------------------------------

def test_empty_group_is_a_noop():
    ao = augment(box(), grasps((0, 0, 0)))
    assert collab_tick({}, [], ao, ao.object.pose) is None
    assert collab_tick({}, ["manikin:0000"], None, ao.object.pose) is None


def test_static_hold_keeps_object_at_target_and_pushes_forces():
    obj = box(10.0)
    target = obj.pose
    agents = {"manikin:0000": Recorder(), "manikin:0001": Recorder()}
    gs = grasps((0.5, 0, 0), (-0.5, 0, 0))
    drift = 0.0
    for _ in range(2000):
        res = collab_tick(agents, list(agents), augment(obj, gs), target, gravity=G0, dt=1e-3)
        obj = res.object
        drift = max(drift, float(np.linalg.norm(obj.position - target.translation)))
        np.testing.assert_allclose(res.forces, [0, 0, 49.05, 0, 0, 49.05], atol=1e-6)
    assert drift <= 1e-3
    assert len(agents["manikin:0000"].pushed) == 2000
    np.testing.assert_allclose(agents["manikin:0001"].pushed[-1][1], [0, 0, 49.05], atol=1e-6)


def test_release_doubles_remaining_force():
    obj = box(10.0)
    agents = {"manikin:0000": Recorder(), "manikin:0001": Recorder()}
    both = collab_tick(agents, list(agents), augment(obj, grasps((0, 0, 0), (0, 0, 0))), obj.pose, gravity=G0)
    one = collab_tick(agents, ["manikin:0000"], augment(obj, grasps((0, 0, 0))), obj.pose, gravity=G0)
    assert both.forces[2] == pytest.approx(49.05, abs=1e-9)
    assert one.forces[2] == pytest.approx(98.1, abs=1e-9)
    np.testing.assert_allclose(one.forces, least_norm(np.vstack([np.eye(3), np.zeros((3, 3))]), one.wrench))


def test_single_grasp_at_com_reduces_to_direct_wrench():
    rng = np.random.default_rng(2)
    obj = box(3.0).moved(twist=np.concatenate([rng.normal(size=3) * 0.1, np.zeros(3)]))
    target = Transform.from_translation(obj.position + rng.normal(size=3) * 0.05)
    res = collab_tick({"manikin:0000": Recorder()}, ["manikin:0000"], augment(obj, grasps((0, 0, 0))),
                      target, gravity=G0, dt=1e-3)
    w = object_control(augment(obj, grasps((0, 0, 0))), target, gravity=G0)
    np.testing.assert_allclose(res.wrench, w)
    np.testing.assert_allclose(res.forces, w[:3], atol=1e-12)
    direct = integrate_object(obj, w, 1e-3, G0)
    np.testing.assert_allclose(res.object.position, direct.position, atol=1e-14)
    np.testing.assert_allclose(res.object.twist, direct.twist, atol=1e-12)


def test_unrealizable_wrench_becomes_an_event():
    obj = box(10.0)
    target = Transform(Rotation.from_rotvec([0, 0, 0.3]).as_matrix(), obj.position)
    res = collab_tick({"manikin:0000": Recorder()}, ["manikin:0000"], augment(obj, grasps((0, 0, 0))),
                      target, gravity=G0)
    assert [e["event"] for e in res.events] == ["unrealizable_wrench"]
    # the hand still carries the realizable part
    np.testing.assert_allclose(res.forces, [0, 0, 98.1], atol=1e-9)


def test_free_object_falls_under_gravity():
    obj = box(1.0)
    for _ in range(100):
        obj = integrate_object(obj, np.zeros(6), 1e-3, G0)
    # semi-implicit Euler: z drop = g dt^2 n(n+1)/2
    assert obj.position[2] == pytest.approx(1.0 - 9.81 * 1e-6 * 100 * 101 / 2, abs=1e-12)
