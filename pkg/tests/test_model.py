import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from manikin.errors import (
    CycleDetected, DimensionMismatch, DuplicateId, InvalidLimits, NonUnitAxis, UnknownLink,
    ZeroTotalMass,
)
from manikin.model import (
    Transform, center_of_mass, clamp_to_limits, com_jacobian, exp_so3, forward_kinematics, jacobian,
    load_skeleton, log_so3, serial_chain, serialize_skeleton,
)

from conftest import random_q
from oracles import fd_jacobian


def tip(sk, q, link=2, point=(1.0, 0.0, 0.0)):
    T = forward_kinematics(sk, q)[sk.link_idx(link)]
    return T.apply(point)


# -- rotations -------------------------------------------------------------

@given(st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3))
def test_exp_matches_scipy(phi):
    np.testing.assert_allclose(exp_so3(phi), Rotation.from_rotvec(phi).as_matrix(), atol=1e-12)


@given(st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3))
def test_log_inverts_exp(phi):
    R = exp_so3(phi)
    np.testing.assert_allclose(exp_so3(log_so3(R)), R, atol=1e-9)


def test_log_near_pi():
    R = Rotation.from_rotvec([0.0, 0.0, math.pi - 1e-9]).as_matrix()
    np.testing.assert_allclose(exp_so3(log_so3(R)), R, atol=1e-8)


@settings(max_examples=50)
@given(st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3),
       st.lists(st.floats(-5.0, 5.0), min_size=3, max_size=3))
def test_transform_rotation_stays_orthonormal(phi, t):
    T = Transform.from_rotvec(phi, t)
    U = T.compose(T.inverse()).compose(T)
    assert U.is_valid()
    assert np.max(np.abs(U.rotation.T @ U.rotation - np.eye(3))) < 1e-9
    np.testing.assert_allclose(T.inverse().apply(T.apply([1.0, 2.0, 3.0])), [1.0, 2.0, 3.0], atol=1e-12)


# -- loading ---------------------------------------------------------------

def test_two_link_arm_has_two_dof(arm2):
    assert arm2.dof == 2


def test_reference_humanoid_dof(humanoid):
    sk, _ = humanoid
    assert sk.n_joints == 18
    assert sk.dof == 24


def test_self_parent_is_a_cycle():
    spec = serial_chain([1.0, 1.0])
    spec["joints"][1]["parent_link"] = spec["joints"][1]["child_link"]
    with pytest.raises(CycleDetected):
        load_skeleton(spec)


def test_closed_loop_is_a_cycle():
    spec = serial_chain([1.0, 1.0])
    spec["joints"][0]["parent_link"] = 2     # link 1 hangs off link 2 which hangs off link 1
    with pytest.raises(CycleDetected):
        load_skeleton(spec)


def test_duplicate_link_id():
    spec = serial_chain([1.0, 1.0])
    spec["links"][2]["id"] = 1
    with pytest.raises(DuplicateId):
        load_skeleton(spec)


def test_non_unit_axis():
    spec = serial_chain([1.0])
    spec["joints"][0]["axis"] = [0.0, 0.0, 1.1]
    with pytest.raises(NonUnitAxis):
        load_skeleton(spec)


def test_inverted_limits():
    spec = serial_chain([1.0])
    spec["joints"][0]["limits"] = [1.0, -1.0]
    with pytest.raises(InvalidLimits):
        load_skeleton(spec)


def test_unknown_child_link_names_the_field():
    spec = serial_chain([1.0, 1.0])
    spec["joints"][1]["child_link"] = 7
    with pytest.raises(UnknownLink) as info:
        load_skeleton(spec)
    assert info.value.path == "joints[1].child_link"


def test_serialize_round_trip(humanoid, arm2):
    for sk in (humanoid[0], arm2):
        again = load_skeleton(serialize_skeleton(sk))
        assert again == sk
        assert serialize_skeleton(again) == serialize_skeleton(sk)


def test_skeleton_arrays_are_read_only(arm2):
    with pytest.raises(ValueError):
        arm2.lower[0] = 0.0


# -- forward kinematics ----------------------------------------------------

def test_fk_zero(arm2):
    np.testing.assert_allclose(tip(arm2, [0.0, 0.0]), [2.0, 0.0, 0.0], atol=1e-12)


def test_fk_quarter_turn(arm2):
    np.testing.assert_allclose(tip(arm2, [math.pi / 2, 0.0]), [0.0, 2.0, 0.0], atol=1e-12)


def test_fk_closed_form(arm2):
    rng = np.random.default_rng(0)
    for q in rng.uniform(-math.pi, math.pi, (50, 2)):
        expect = [math.cos(q[0]) + math.cos(q[0] + q[1]), math.sin(q[0]) + math.sin(q[0] + q[1]), 0.0]
        np.testing.assert_allclose(tip(arm2, q), expect, atol=1e-9)
    np.testing.assert_allclose(tip(arm2, [math.pi / 4, math.pi / 4]), [0.70711, 1.70711, 0.0], atol=1e-5)


def test_fk_dimension_mismatch(arm2):
    with pytest.raises(DimensionMismatch):
        forward_kinematics(arm2, [0.0, 0.0, 0.0])


def _fk_by_composition(sk, q):
    """Parent pose, then link attachment and joint rest offset, then the joint rotation (scipy)."""
    poses = {}
    root = sk.links[sk.order[0]]
    if sk.free_flyer:
        n = sk.n_joints
        poses[root.id] = (Rotation.from_rotvec(q[n + 3:n + 6]).as_matrix(), q[n:n + 3].copy())
    else:
        poses[root.id] = (np.eye(3), np.zeros(3))
    pending = list(sk.joints)
    while pending:
        for k, j in enumerate(pending):
            if j.parent_link in poses:
                break
        j = pending.pop(k)
        Rp, pp = poses[j.parent_link]
        att = sk.links[sk.link_idx(j.parent_link)].child_attach
        Ra = att.rotation @ j.rest_offset.rotation
        pa = att.rotation @ j.rest_offset.translation + att.translation
        Rj = Rotation.from_rotvec(j.axis * q[sk.joint_index[j.id]]).as_matrix()
        poses[j.child_link] = (Rp @ Ra @ Rj, Rp @ pa + pp)
    return poses


def test_fk_composition_humanoid(humanoid):
    sk, _ = humanoid
    rng = np.random.default_rng(1)
    for _ in range(20):
        q = random_q(sk, rng)
        fk = forward_kinematics(sk, q)
        ref = _fk_by_composition(sk, q)
        for link, T in zip(sk.links, fk):
            R, p = ref[link.id]
            assert np.max(np.abs(T.rotation - R)) < 1e-12
            assert np.max(np.abs(T.translation - p)) < 1e-12


# -- jacobians -------------------------------------------------------------

def test_jacobian_one_link_at_zero(arm1):
    J = jacobian(arm1, np.zeros(1), 1, (1.0, 0.0, 0.0))
    np.testing.assert_allclose(J[:3, 0], [0.0, 1.0, 0.0], atol=1e-12)


def test_jacobian_off_path_columns_are_zero(humanoid):
    sk, prof = humanoid
    rng = np.random.default_rng(2)
    q = random_q(sk, rng)
    hand = prof.hand("right")
    J = jacobian(sk, q, hand.link, hand.point)
    on_path = set(sk.path_dofs[sk.link_idx(hand.link)])
    for d in range(sk.n_joints):
        if d not in on_path:
            assert not np.any(J[:, d])


def test_jacobian_matches_finite_differences_arm(arm2):
    rng = np.random.default_rng(3)
    for _ in range(100):
        q = rng.uniform(-math.pi, math.pi, 2)
        err = np.max(np.abs(jacobian(arm2, q, 2, (1.0, 0, 0)) - fd_jacobian(arm2, q, 2, np.array([1.0, 0, 0]))))
        assert err < 1e-5


def test_jacobian_matches_finite_differences_humanoid(humanoid):
    sk, prof = humanoid
    rng = np.random.default_rng(4)
    hand = prof.hand("left")
    for _ in range(10):
        q = random_q(sk, rng)
        err = np.max(np.abs(jacobian(sk, q, hand.link, hand.point) - fd_jacobian(sk, q, hand.link, hand.point)))
        assert err < 1e-5


def test_jacobian_unknown_link(arm2):
    with pytest.raises(UnknownLink):
        jacobian(arm2, np.zeros(2), 99)


# -- center of mass --------------------------------------------------------

def test_com_single_link(arm1):
    np.testing.assert_allclose(center_of_mass(arm1, [0.0]), [0.5, 0.0, 0.0], atol=1e-12)


def test_com_two_links(arm2):
    np.testing.assert_allclose(center_of_mass(arm2, [0.0, 0.0]), [1.0, 0.0, 0.0], atol=1e-12)


def test_com_humanoid_direct_sum(humanoid):
    sk, prof = humanoid
    rng = np.random.default_rng(5)
    for q in [prof.default_posture] + [random_q(sk, rng) for _ in range(5)]:
        fk = forward_kinematics(sk, q)
        total = sum(l.mass for l in sk.links)
        expect = sum(l.mass * T.apply(l.com_offset) for l, T in zip(sk.links, fk)) / total
        np.testing.assert_allclose(center_of_mass(sk, q), expect, atol=1e-12)


def test_com_zero_mass():
    sk = load_skeleton(serial_chain([1.0], masses=[0.0]))
    with pytest.raises(ZeroTotalMass):
        center_of_mass(sk, [0.0])


def test_com_jacobian_finite_differences(humanoid):
    sk, _ = humanoid
    rng = np.random.default_rng(6)
    q = random_q(sk, rng)
    h = 1e-6
    fd = np.zeros((3, sk.dof))
    for d in range(sk.dof):
        e = np.zeros(sk.dof)
        e[d] = h
        fd[:, d] = (center_of_mass(sk, q + e) - center_of_mass(sk, q - e)) / (2 * h)
    assert np.max(np.abs(com_jacobian(sk, q) - fd)) < 1e-6


# -- limits ----------------------------------------------------------------

@given(st.lists(st.floats(-10.0, 10.0), min_size=18, max_size=18))
def test_clamp_idempotent_and_inside(humanoid, values):
    sk, _ = humanoid
    q = np.concatenate([values, np.ones(6)])
    c = clamp_to_limits(sk, q)
    assert np.array_equal(clamp_to_limits(sk, c), c)
    assert np.all(sk.lower <= c[:18]) and np.all(c[:18] <= sk.upper)
    assert np.array_equal(c[18:], q[18:])
