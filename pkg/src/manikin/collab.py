"""Augmented-object cooperative manipulation.

Several hands holding one rigid object are treated as a single system at
the object level: an object PD law produces the wrench the object needs,
and the grasp matrix pseudoinverse splits it into per-hand point forces.
The manikins and the object are integrated separately and only exchange
these force targets.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DuplicateHand, EmptyGraspSet, UnrealizableWrench, ValidationError
from .model import Transform, exp_so3, log_so3, skew

WRENCH_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class RigidObject:
    """A free rigid body; its frame origin is the center of mass."""
    id: str
    mass: float
    inertia: np.ndarray
    pose: Transform = field(default_factory=Transform.identity)
    twist: np.ndarray = field(default_factory=lambda: np.zeros(6))   # (v, w) world frame
    grasp: np.ndarray = field(default_factory=lambda: np.zeros(3))   # handle, object frame

    def __post_init__(self):
        inertia = np.array(self.inertia, dtype=float).reshape(3, 3)
        if not self.mass > 0:
            raise ValidationError(f"object {self.id}: mass must be positive")
        if not np.allclose(inertia, inertia.T, atol=1e-12) or np.linalg.eigvalsh(inertia).min() < -1e-12:
            raise ValidationError(f"object {self.id}: inertia must be symmetric PSD")
        object.__setattr__(self, "inertia", inertia)
        object.__setattr__(self, "twist", np.array(self.twist, dtype=float).reshape(6))
        object.__setattr__(self, "grasp", np.array(self.grasp, dtype=float).reshape(3))

    @property
    def position(self):
        return self.pose.translation

    def grasp_world(self, local=None):
        return self.pose.apply(self.grasp if local is None else local)

    def moved(self, pose=None, twist=None):
        return replace(self, pose=self.pose if pose is None else pose,
                       twist=self.twist if twist is None else twist)


@dataclass(frozen=True)
class GraspPoint:
    manikin: str
    hand: str
    attach: tuple = (0.0, 0.0, 0.0)   # object frame


@dataclass(frozen=True, eq=False)
class AugmentedObject:
    object: RigidObject
    grasps: tuple
    grasp_matrix: np.ndarray    # 6 x 3k

    @property
    def k(self):
        return len(self.grasps)


def grasp_matrix(R, attaches):
    """Blocks ``[I; skew(r_i)]`` with ``r_i = R a_i`` the world lever arm."""
    attaches = np.asarray(attaches, dtype=float).reshape(-1, 3)
    G = np.zeros((6, 3 * len(attaches)))
    for i, a in enumerate(attaches):
        G[:3, 3 * i:3 * i + 3] = np.eye(3)
        G[3:, 3 * i:3 * i + 3] = skew(R @ a)
    return G


def augment(obj, grasps):
    grasps = tuple(grasps)
    if not grasps:
        raise EmptyGraspSet(f"object {obj.id} has no grasps")
    seen = set()
    for g in grasps:
        key = (g.manikin, g.hand)
        if key in seen:
            raise DuplicateHand(f"hand {g.hand!r} of {g.manikin} grasps {obj.id} twice")
        seen.add(key)
    G = grasp_matrix(obj.pose.rotation, [g.attach for g in grasps])
    return AugmentedObject(obj, grasps, G)


@dataclass(frozen=True)
class ObjectGains:
    kp: float = 100.0       # N/m
    kd: float = 40.0        # N s/m
    kp_rot: float = 20.0    # N m/rad
    kd_rot: float = 5.0     # N m s/rad


def object_control(ao, target_pose, target_twist=None, gains=ObjectGains(), gravity=(0.0, 0.0, -9.81)):
    """Object-level PD with gravity compensation; returns the wrench (f, tau)."""
    obj = ao.object
    target_twist = np.zeros(6) if target_twist is None else np.asarray(target_twist, dtype=float)
    force = -obj.mass * np.asarray(gravity, dtype=float)
    force = force + gains.kp * (target_pose.translation - obj.position) + gains.kd * (target_twist[:3] - obj.twist[:3])
    rot_err = log_so3(target_pose.rotation @ obj.pose.rotation.T)
    torque = gains.kp_rot * rot_err + gains.kd_rot * (target_twist[3:] - obj.twist[3:])
    return np.concatenate([force, torque])


def distribute_forces(ao, w, weights=None, tol=WRENCH_TOL):
    """Minimum-norm stacked grasp forces with ``G f = w``.

    ``weights`` (one per grasp) scale how much each hand is asked to carry;
    uniform weights give the plain Moore-Penrose solution.
    """
    G = ao.grasp_matrix
    w = np.asarray(w, dtype=float)
    if weights is None:
        f = np.linalg.pinv(G) @ w
    else:
        s = np.sqrt(np.repeat(np.asarray(weights, dtype=float), 3))
        f = s * (np.linalg.pinv(G * s) @ w)
    residual = float(np.linalg.norm(G @ f - w))
    if residual > tol:
        err = UnrealizableWrench(f"wrench not realizable by {ao.k} point grasp(s)", residual)
        err.forces = f
        raise err
    return f


def integrate_object(obj, wrench, dt, gravity=(0.0, 0.0, -9.81)):
    """Semi-implicit Euler for a free rigid body under an applied wrench at its COM."""
    wrench = np.asarray(wrench, dtype=float)
    R = obj.pose.rotation
    v = obj.twist[:3] + (wrench[:3] / obj.mass + np.asarray(gravity, dtype=float)) * dt
    Iw = R @ obj.inertia @ R.T
    om = obj.twist[3:]
    domega = np.linalg.lstsq(Iw, wrench[3:] - np.cross(om, Iw @ om), rcond=None)[0]
    om = om + domega * dt
    pose = Transform(exp_so3(om * dt) @ R, obj.position + v * dt)
    return obj.moved(pose, np.concatenate([v, om]))


@dataclass
class CollabResult:
    object: RigidObject
    wrench: np.ndarray
    forces: np.ndarray
    events: list


def collab_tick(agents, group, ao, target_pose, target_twist=None, gains=ObjectGains(),
                gravity=(0.0, 0.0, -9.81), dt=1e-3, weights=None):
    """One object-level control step for a group holding ``ao``.

    Each grasp force is handed to its manikin through ``push_hand_force``;
    the object is then integrated under the wrench the hands actually apply.
    Returns ``None`` for an empty group.
    """
    if not group or ao is None:
        return None
    members = set(group)
    events = []
    w = object_control(ao, target_pose, target_twist, gains, gravity)
    try:
        f = distribute_forces(ao, w, weights)
    except UnrealizableWrench as exc:
        f = exc.forces
        events.append({"event": "unrealizable_wrench", "detail": {"object": ao.object.id,
                                                                   "residual": exc.residual}})
    for i, g in enumerate(ao.grasps):
        if g.manikin in members:
            agents[g.manikin].push_hand_force(g.hand, f[3 * i:3 * i + 3])
    applied = ao.grasp_matrix @ f
    obj = integrate_object(ao.object, applied, dt, gravity)
    return CollabResult(obj, w, f, events)
