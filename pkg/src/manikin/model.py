"""Articulated skeletons: description, forward kinematics, Jacobians and COM.

A skeleton is a tree of rigid links joined by revolute joints.  The world pose
of a link is::

    parent_pose * parent.child_attach * joint.rest_offset * Rot(axis, q)

so the link frame origin coincides with its parent joint origin.  A free-flyer
root appends six coordinates to ``q``: a translation followed by exponential
coordinates (rotation vector) of the root orientation.
"""
from __future__ import annotations

import json
import math
import threading
from collections import OrderedDict, deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CycleDetected,
    DimensionMismatch,
    DuplicateId,
    InvalidLimits,
    NonUnitAxis,
    UnknownHand,
    UnknownLink,
    ValidationError,
    ZeroTotalMass,
)

_EYE3 = np.eye(3)


# --------------------------------------------------------------------------
# SO(3) helpers
# --------------------------------------------------------------------------

def skew(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def exp_so3(phi):
    """Rotation matrix of the rotation vector ``phi`` (Rodrigues)."""
    phi = np.asarray(phi, dtype=float)
    theta = math.sqrt(phi @ phi)
    K = skew(phi)
    if theta < 1e-8:
        return _EYE3 + K + 0.5 * (K @ K)
    a = math.sin(theta) / theta
    b = (1.0 - math.cos(theta)) / (theta * theta)
    return _EYE3 + a * K + b * (K @ K)


def log_so3(R):
    """Rotation vector of ``R``; angle in [0, pi]."""
    R = np.asarray(R, dtype=float)
    cos_t = min(1.0, max(-1.0, 0.5 * (np.trace(R) - 1.0)))
    theta = math.acos(cos_t)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-8:
        return 0.5 * w
    if math.pi - theta < 1e-6:
        # near pi the antisymmetric part vanishes; recover the axis from R + I
        B = 0.5 * (R + _EYE3)
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / math.sqrt(max(B[k, k], 1e-300))
        axis /= np.linalg.norm(axis)
        if axis @ w < 0:
            axis = -axis
        return theta * axis
    return theta / (2.0 * math.sin(theta)) * w


def left_jacobian(phi):
    """Maps rotation-vector rates to world-frame angular velocity."""
    phi = np.asarray(phi, dtype=float)
    theta = math.sqrt(phi @ phi)
    K = skew(phi)
    if theta < 1e-6:
        t2 = theta * theta
        a, b = 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
    else:
        a = (1.0 - math.cos(theta)) / (theta * theta)
        b = (theta - math.sin(theta)) / theta ** 3
    return _EYE3 + a * K + b * (K @ K)


def left_jacobian_dot(phi, dphi):
    """Time derivative of ``left_jacobian(phi)`` along the rate ``dphi``."""
    phi = np.asarray(phi, dtype=float)
    dphi = np.asarray(dphi, dtype=float)
    theta = math.sqrt(phi @ phi)
    K = skew(phi)
    dK = skew(dphi)
    if theta < 1e-6:
        t2 = theta * theta
        a, b = 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
        # da/dtheta / theta and db/dtheta / theta
        da_t, db_t = -1.0 / 12.0 + t2 / 180.0, -1.0 / 60.0 + t2 / 1260.0
    else:
        s, c = math.sin(theta), math.cos(theta)
        a = (1.0 - c) / theta ** 2
        b = (theta - s) / theta ** 3
        da_t = (theta * s - 2.0 * (1.0 - c)) / theta ** 4
        db_t = ((1.0 - c) * theta - 3.0 * (theta - s)) / theta ** 5
    rate = phi @ dphi
    return da_t * rate * K + a * dK + db_t * rate * (K @ K) + b * (dK @ K + K @ dK)


def axis_angle_matrix(axis, angle):
    """Rotation by ``angle`` about the unit vector ``axis``."""
    K = skew(axis)
    return _EYE3 + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)


# --------------------------------------------------------------------------
# Domain types
# --------------------------------------------------------------------------

def _frozen(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Transform:
    rotation: np.ndarray = field(default_factory=lambda: _frozen(_EYE3))
    translation: np.ndarray = field(default_factory=lambda: _frozen(np.zeros(3)))

    def __post_init__(self):
        R = _frozen(self.rotation)
        t = _frozen(self.translation)
        if R.shape != (3, 3) or t.shape != (3,):
            raise DimensionMismatch("Transform needs a 3x3 rotation and a 3-vector")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_translation(cls, t):
        return cls(_EYE3, t)

    @classmethod
    def from_rotvec(cls, phi, t=(0.0, 0.0, 0.0)):
        return cls(exp_so3(phi), t)

    def compose(self, other):
        return Transform(self.rotation @ other.rotation,
                         self.rotation @ other.translation + self.translation)

    __mul__ = compose

    def inverse(self):
        Rt = self.rotation.T
        return Transform(Rt, -Rt @ self.translation)

    def apply(self, point):
        return self.rotation @ np.asarray(point, dtype=float) + self.translation

    def matrix(self):
        H = np.eye(4)
        H[:3, :3] = self.rotation
        H[:3, 3] = self.translation
        return H

    def is_valid(self, tol=1e-9):
        R = self.rotation
        return (np.max(np.abs(R.T @ R - _EYE3)) <= tol
                and np.linalg.det(R) > 0 and np.all(np.isfinite(self.translation)))

    def __eq__(self, other):
        if not isinstance(other, Transform):
            return NotImplemented
        return (np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation))

    def __repr__(self):
        return f"Transform(t={self.translation.tolist()}, R={self.rotation.tolist()})"


@dataclass(frozen=True, eq=False)
class JointSpec:
    id: int
    name: str
    parent_link: int
    child_link: int
    axis: np.ndarray
    limits: tuple
    rest_offset: Transform = field(default_factory=Transform)

    def __post_init__(self):
        object.__setattr__(self, "axis", _frozen(self.axis))
        object.__setattr__(self, "limits", (float(self.limits[0]), float(self.limits[1])))


@dataclass(frozen=True, eq=False)
class LinkSpec:
    id: int
    name: str
    mass: float
    com_offset: np.ndarray = field(default_factory=lambda: _frozen(np.zeros(3)))
    inertia: np.ndarray = field(default_factory=lambda: _frozen(np.zeros((3, 3))))
    child_attach: Transform = field(default_factory=Transform)

    def __post_init__(self):
        object.__setattr__(self, "mass", float(self.mass))
        object.__setattr__(self, "com_offset", _frozen(self.com_offset))
        object.__setattr__(self, "inertia", _frozen(self.inertia))


@dataclass
class State:
    q: np.ndarray
    qd: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.q = np.array(self.q, dtype=float)
        self.qd = np.array(self.qd, dtype=float)
        if self.q.shape != self.qd.shape or self.q.ndim != 1:
            raise DimensionMismatch(f"q has shape {self.q.shape}, qd has {self.qd.shape}")

    def copy(self):
        return State(self.q.copy(), self.qd.copy(), self.time)

    def __eq__(self, other):
        if not isinstance(other, State):
            return NotImplemented
        return (np.array_equal(self.q, other.q) and np.array_equal(self.qd, other.qd)
                and self.time == other.time)


@dataclass(frozen=True, eq=False)
class Hand:
    """A point end-effector: a link plus a point in that link's frame."""
    link: int
    point: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "point", _frozen(self.point))


class Skeleton:
    """Immutable articulated tree.  Build with :func:`load_skeleton`."""

    def __init__(self, links, joints, root_link, free_flyer):
        self.links = tuple(links)
        self.joints = tuple(joints)
        self.root_link = root_link
        self.free_flyer = bool(free_flyer)
        self.n_joints = len(self.joints)
        self.dof = self.n_joints + (6 if self.free_flyer else 0)
        self._build()

    # -- topology -----------------------------------------------------------
    def _build(self):
        self.link_index = {l.id: i for i, l in enumerate(self.links)}
        self.joint_index = {j.id: i for i, j in enumerate(self.joints)}
        self.joint_by_name = {j.name: i for i, j in enumerate(self.joints)}
        self.link_by_name = {l.name: l.id for l in self.links}
        nl = len(self.links)
        self.parent = np.full(nl, -1, dtype=int)
        self.joint_dof = np.full(nl, -1, dtype=int)
        static_R = np.tile(_EYE3, (nl, 1, 1))
        static_p = np.zeros((nl, 3))
        axes = np.zeros((nl, 3))
        children = [[] for _ in range(nl)]
        for k, j in enumerate(self.joints):
            pi, ci = self.link_index[j.parent_link], self.link_index[j.child_link]
            self.parent[ci] = pi
            self.joint_dof[ci] = k
            attach = self.links[pi].child_attach.compose(j.rest_offset)
            static_R[ci] = attach.rotation
            static_p[ci] = attach.translation
            axes[ci] = j.axis
            children[pi].append(ci)
        root = self.link_index[self.root_link]
        order, queue = [], deque([root])
        while queue:
            i = queue.popleft()
            order.append(i)
            queue.extend(sorted(children[i], key=lambda c: self.joint_dof[c]))
        self.order = tuple(order)
        self.children = tuple(tuple(c) for c in children)
        self.static_R, self.static_p, self.axes = static_R, static_p, axes
        self.masses = np.array([l.mass for l in self.links])
        self.coms = np.array([l.com_offset for l in self.links])
        self.inertias = np.array([l.inertia for l in self.links])
        self.total_mass = float(self.masses.sum())
        self.lower = np.array([j.limits[0] for j in self.joints])
        self.upper = np.array([j.limits[1] for j in self.joints])
        # dof indices on the root->link path, root first
        self.path_dofs = []
        for i in range(nl):
            dofs, k = [], i
            while self.parent[k] >= 0:
                dofs.append(int(self.joint_dof[k]))
                k = self.parent[k]
            self.path_dofs.append(tuple(reversed(dofs)))
        depth = np.zeros(nl, dtype=int)
        for i in order[1:]:
            depth[i] = depth[self.parent[i]] + 1
        self.levels = tuple(np.flatnonzero(depth == d) for d in range(1, depth.max() + 1))
        self.axis_K = np.array([skew(a) for a in axes])
        self.axis_KK = self.axis_K @ self.axis_K
        # subtree[k, i]: link i lies in the subtree rooted at link k
        self.subtree = np.zeros((nl, nl))
        for i in range(nl):
            k = i
            while k >= 0:
                self.subtree[k, i] = 1.0
                k = self.parent[k]
        for arr in (self.parent, self.joint_dof, self.static_R, self.static_p, self.axes,
                    self.masses, self.coms, self.inertias, self.lower, self.upper, self.subtree,
                    self.axis_K, self.axis_KK):
            arr.flags.writeable = False

    def root_slice(self):
        """Slice of ``q`` holding free-flyer coordinates (empty without one)."""
        return slice(self.n_joints, self.dof)

    def link_idx(self, link_id):
        try:
            return self.link_index[link_id]
        except (KeyError, TypeError):
            raise UnknownLink(f"unknown link id {link_id!r}") from None

    def __eq__(self, other):
        if not isinstance(other, Skeleton):
            return NotImplemented
        return serialize_skeleton(self) == serialize_skeleton(other)

    def __hash__(self):
        return id(self)

    def __repr__(self):
        return f"Skeleton(links={len(self.links)}, joints={self.n_joints}, dof={self.dof})"


# --------------------------------------------------------------------------
# Loading and serialization
# --------------------------------------------------------------------------

def _vec(value, n, path):
    try:
        a = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ValidationError(f"expected {n} numbers", path) from None
    if a.shape != (n,) or not np.all(np.isfinite(a)):
        raise ValidationError(f"expected {n} finite numbers, got {value!r}", path)
    return a


def _transform(value, path):
    if value is None:
        return Transform()
    if isinstance(value, (list, tuple)):
        return Transform.from_translation(_vec(value, 3, path))
    if not isinstance(value, dict):
        raise ValidationError("transform must be an object or a 3-vector", path)
    t = _vec(value.get("translation", [0, 0, 0]), 3, f"{path}.translation")
    if "rotation" in value:
        try:
            R = np.array(value["rotation"], dtype=float)
        except (TypeError, ValueError):
            raise ValidationError("rotation must be a 3x3 matrix", f"{path}.rotation") from None
        if R.shape != (3, 3):
            raise ValidationError("rotation must be a 3x3 matrix", f"{path}.rotation")
    elif "rotvec" in value:
        R = exp_so3(_vec(value["rotvec"], 3, f"{path}.rotvec"))
    else:
        R = _EYE3
    tf = Transform(R, t)
    if not tf.is_valid():
        raise ValidationError("rotation is not orthonormal with det +1", path)
    return tf


def _transform_dict(tf):
    return {"translation": tf.translation.tolist(), "rotation": tf.rotation.tolist()}


def load_skeleton(spec):
    """Build a validated :class:`Skeleton` from a dict, JSON string or file path."""
    if isinstance(spec, (str, Path)) and not (isinstance(spec, str) and spec.lstrip().startswith("{")):
        spec = json.loads(Path(spec).read_text())
    elif isinstance(spec, str):
        spec = json.loads(spec)
    if not isinstance(spec, dict):
        raise ValidationError("skeleton must be a JSON object")

    links, link_ids = [], set()
    for i, ld in enumerate(spec.get("links", [])):
        path = f"links[{i}]"
        if "id" not in ld:
            raise ValidationError("missing id", path)
        lid = ld["id"]
        if lid in link_ids:
            raise DuplicateId(f"duplicate link id {lid}", path)
        link_ids.add(lid)
        mass = float(ld.get("mass", 0.0))
        if not math.isfinite(mass) or mass < 0:
            raise ValidationError(f"mass must be >= 0, got {mass}", f"{path}.mass")
        inertia = np.array(ld.get("inertia", np.zeros((3, 3))), dtype=float)
        if inertia.shape == (3,):
            inertia = np.diag(inertia)
        if inertia.shape != (3, 3):
            raise ValidationError("inertia must be 3x3 or a diagonal 3-vector", f"{path}.inertia")
        if np.max(np.abs(inertia - inertia.T)) > 1e-12:
            raise ValidationError("inertia is not symmetric", f"{path}.inertia")
        if np.min(np.linalg.eigvalsh(inertia)) < -1e-12:
            raise ValidationError("inertia has a negative eigenvalue", f"{path}.inertia")
        links.append(LinkSpec(
            id=lid, name=str(ld.get("name", f"link{lid}")), mass=mass,
            com_offset=_vec(ld.get("com", [0, 0, 0]), 3, f"{path}.com"),
            inertia=inertia,
            child_attach=_transform(ld.get("child_attach"), f"{path}.child_attach"),
        ))
    if not links:
        raise ValidationError("skeleton has no links", "links")

    joints, joint_ids, parent_of = [], set(), {}
    for i, jd in enumerate(spec.get("joints", [])):
        path = f"joints[{i}]"
        jid = jd.get("id", i)
        if jid in joint_ids:
            raise DuplicateId(f"duplicate joint id {jid}", path)
        joint_ids.add(jid)
        name = str(jd.get("name", f"joint{jid}"))
        for key in ("parent_link", "child_link"):
            if jd.get(key) not in link_ids:
                raise UnknownLink(f"joint {name!r} references unknown link {jd.get(key)!r}",
                                  f"{path}.{key}")
        parent, child = jd["parent_link"], jd["child_link"]
        if parent == child:
            raise CycleDetected(f"joint {name!r} connects link {child} to itself", path)
        if child in parent_of:
            raise CycleDetected(f"link {child} has two parent joints", path)
        parent_of[child] = parent
        axis = _vec(jd.get("axis", [0, 0, 1]), 3, f"{path}.axis")
        norm = float(np.linalg.norm(axis))
        if abs(norm - 1.0) > 1e-6:
            raise NonUnitAxis(f"axis norm {norm} is not 1", f"{path}.axis")
        if abs(norm - 1.0) > 1e-12:
            axis = axis / norm
        lim = jd.get("limits", [-math.pi, math.pi])
        try:
            lo, hi = float(lim[0]), float(lim[1])
        except (TypeError, ValueError, IndexError):
            raise InvalidLimits("limits must be [lo, hi]", f"{path}.limits") from None
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
            raise InvalidLimits(f"invalid limits [{lo}, {hi}]", f"{path}.limits")
        joints.append(JointSpec(jid, name, parent, child, axis, (lo, hi),
                                _transform(jd.get("rest_offset"), f"{path}.rest_offset")))

    roots = [l.id for l in links if l.id not in parent_of]
    root = spec.get("root_link", roots[0] if roots else None)
    if len(roots) != 1:
        raise CycleDetected(f"link graph is not a single tree (roots: {roots})", "joints")
    if root != roots[0]:
        raise ValidationError(f"root_link {root} has a parent joint", "root_link")
    # every link must reach the root by walking parents
    for lid in link_ids:
        seen, k = set(), lid
        while k in parent_of:
            if k in seen:
                raise CycleDetected(f"cycle through link {k}", "joints")
            seen.add(k)
            k = parent_of[k]
        if k != root:
            raise CycleDetected(f"link {lid} is not connected to the root", "joints")
    return Skeleton(links, joints, root, bool(spec.get("free_flyer", False)))


def serialize_skeleton(sk):
    return {
        "root_link": sk.root_link,
        "free_flyer": sk.free_flyer,
        "links": [{"id": l.id, "name": l.name, "mass": l.mass, "com": l.com_offset.tolist(),
                   "inertia": l.inertia.tolist(), "child_attach": _transform_dict(l.child_attach)}
                  for l in sk.links],
        "joints": [{"id": j.id, "name": j.name, "parent_link": j.parent_link,
                    "child_link": j.child_link, "axis": j.axis.tolist(),
                    "limits": list(j.limits), "rest_offset": _transform_dict(j.rest_offset)}
                   for j in sk.joints],
    }


# --------------------------------------------------------------------------
# Kinematics
# --------------------------------------------------------------------------

def _check_q(sk, q, name="q"):
    q = np.asarray(q, dtype=float)
    if q.shape != (sk.dof,):
        raise DimensionMismatch(f"{name} has length {q.size}, skeleton dof is {sk.dof}")
    return q


@dataclass(frozen=True)
class Kinematics:
    """World-frame link poses and joint axes for one configuration."""
    R: np.ndarray        # (n_links, 3, 3)
    p: np.ndarray        # (n_links, 3) link origins == joint origins
    z: np.ndarray        # (n_links, 3) world axis of each link's parent joint
    Jl: np.ndarray       # left Jacobian of the root rotation (identity if fixed)
    phi: np.ndarray      # root rotation vector (zeros if fixed)


_KIN_CACHE_SIZE = 16
_kin_cache = OrderedDict()
_kin_lock = threading.Lock()


def kinematics(sk, q):
    """Link poses for ``q``; recent results are memoized (arrays are read-only)."""
    q = _check_q(sk, q)
    key = (id(sk), q.tobytes())
    with _kin_lock:
        hit = _kin_cache.get(key)
        if hit is not None and hit[0] is sk:
            _kin_cache.move_to_end(key)
            return hit[1]
    kin = _kinematics(sk, q)
    with _kin_lock:
        _kin_cache[key] = (sk, kin)
        if len(_kin_cache) > _KIN_CACHE_SIZE:
            _kin_cache.popitem(last=False)
    return kin


def _kinematics(sk, q):
    nl = len(sk.links)
    R = np.empty((nl, 3, 3))
    p = np.empty((nl, 3))
    root = sk.order[0]
    if sk.free_flyer:
        t, phi = q[sk.n_joints:sk.n_joints + 3], q[sk.n_joints + 3:sk.dof]
        R[root] = exp_so3(phi)
        p[root] = t
        Jl = left_jacobian(phi)
    else:
        phi = np.zeros(3)
        R[root] = _EYE3
        p[root] = 0.0
        Jl = _EYE3
    # all joint rotations at once (Rodrigues); the root row is unused
    angle = np.where(sk.joint_dof >= 0, q[np.maximum(sk.joint_dof, 0)], 0.0)
    Rq = _EYE3 + np.sin(angle)[:, None, None] * sk.axis_K + (1.0 - np.cos(angle))[:, None, None] * sk.axis_KK
    for idx in sk.levels:
        Rp = R[sk.parent[idx]]
        p[idx] = (Rp @ sk.static_p[idx][:, :, None])[:, :, 0] + p[sk.parent[idx]]
        R[idx] = Rp @ sk.static_R[idx] @ Rq[idx]
    # a joint axis is fixed by its own rotation, so the child frame gives it directly
    z = (R @ sk.axes[:, :, None])[:, :, 0]
    z[root] = 0.0
    for a in (R, p, z):
        a.flags.writeable = False
    return Kinematics(R, p, z, _frozen(Jl), _frozen(phi))


def forward_kinematics(sk, q):
    """World pose of every link, in ``sk.links`` order."""
    kin = kinematics(sk, q)
    return [Transform(kin.R[i], kin.p[i]) for i in range(len(sk.links))]


def link_point(sk, q, link, point, kin=None):
    kin = kin or kinematics(sk, q)
    i = sk.link_idx(link)
    return kin.R[i] @ np.asarray(point, dtype=float) + kin.p[i]


def jacobian(sk, q, body, point=(0.0, 0.0, 0.0), kin=None):
    """6 x dof Jacobian of a link-frame point: linear rows then angular rows."""
    q = _check_q(sk, q)
    i = sk.link_idx(body)
    kin = kin or kinematics(sk, q)
    x = kin.R[i] @ np.asarray(point, dtype=float) + kin.p[i]
    J = np.zeros((6, sk.dof))
    k = i
    while sk.parent[k] >= 0:
        d = sk.joint_dof[k]
        J[:3, d] = np.cross(kin.z[k], x - kin.p[k])
        J[3:, d] = kin.z[k]
        k = sk.parent[k]
    if sk.free_flyer:
        n = sk.n_joints
        J[:3, n:n + 3] = _EYE3
        J[:3, n + 3:n + 6] = -skew(x - kin.p[sk.order[0]]) @ kin.Jl
        J[3:, n + 3:n + 6] = kin.Jl
    return J


def center_of_mass(sk, q, kin=None):
    q = _check_q(sk, q)
    if sk.total_mass <= 0:
        raise ZeroTotalMass("skeleton has zero total mass")
    kin = kin or kinematics(sk, q)
    c = np.einsum("nij,nj->ni", kin.R, sk.coms) + kin.p
    return sk.masses @ c / sk.total_mass


def com_jacobian(sk, q, kin=None):
    """3 x dof Jacobian of the whole-body center of mass."""
    q = _check_q(sk, q)
    if sk.total_mass <= 0:
        raise ZeroTotalMass("skeleton has zero total mass")
    kin = kin or kinematics(sk, q)
    c = np.einsum("nij,nj->ni", kin.R, sk.coms) + kin.p
    m_sub = sk.subtree @ sk.masses
    mc_sub = sk.subtree @ (sk.masses[:, None] * c)
    J = np.zeros((3, sk.dof))
    has = sk.joint_dof >= 0
    cols = np.cross(kin.z[has], mc_sub[has] - m_sub[has, None] * kin.p[has])
    J[:, sk.joint_dof[has]] = cols.T
    if sk.free_flyer:
        n = sk.n_joints
        com = sk.masses @ c / sk.total_mass
        J[:, n:n + 3] = _EYE3 * sk.total_mass
        J[:, n + 3:n + 6] = -skew(com - kin.p[sk.order[0]]) @ kin.Jl * sk.total_mass
    return J / sk.total_mass


def clamp_to_limits(sk, q):
    """Clamp joint coordinates into their limits; free-flyer coordinates untouched."""
    q = np.array(q, dtype=float)
    n = sk.n_joints
    q[:n] = np.minimum(np.maximum(q[:n], sk.lower), sk.upper)
    return q


def chain_dofs(sk, tip_link, base_dof=None):
    """Joint dofs on the path to ``tip_link``, optionally starting at ``base_dof``."""
    dofs = sk.path_dofs[sk.link_idx(tip_link)]
    if base_dof is not None:
        if base_dof not in dofs:
            raise ValidationError(f"dof {base_dof} is not on the path to link {tip_link}")
        dofs = dofs[dofs.index(base_dof):]
    return dofs


def chain_reach(sk, tip_link, point, dofs, kin):
    """Base joint origin and the summed link lengths of a serial chain.

    Link lengths are distances between consecutive joint origins plus the
    final joint-to-point distance; these are configuration independent.
    """
    link_of_dof = {int(sk.joint_dof[i]): i for i in range(len(sk.links)) if sk.joint_dof[i] >= 0}
    origins = [kin.p[link_of_dof[d]] for d in dofs]
    tip = kin.R[sk.link_idx(tip_link)] @ np.asarray(point, dtype=float) + kin.p[sk.link_idx(tip_link)]
    pts = origins + [tip]
    reach = sum(float(np.linalg.norm(b - a)) for a, b in zip(pts[:-1], pts[1:]))
    return origins[0], reach


# --------------------------------------------------------------------------
# Body profile: the named features controllers need on top of the tree
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BodyProfile:
    hands: dict                 # name -> Hand
    arm_base: dict              # hand name -> first dof of that arm chain
    feet: tuple                 # ((link id, (k, 3) contact points), ...)
    head: Hand | None
    gaze_axis: np.ndarray
    default_posture: np.ndarray  # full q at rest
    kp: np.ndarray               # per dof, zeros on free-flyer coordinates
    kd: np.ndarray
    support_dofs: tuple          # dofs locked while standing
    root_height: float
    ground_clamp_height: float
    fallen_height: float
    tool_hand: str = "right"
    free_hand: str = "left"
    stand_offset: float = 0.35
    gait_legs: tuple = ()        # ((hip pitch dof, knee dof), ...) swung in antiphase
    gait_hip: float = 0.3        # rad
    gait_knee: float = 0.5       # rad
    gait_stride: float = 0.6     # m of root travel per step
    balance_kp: float = 40.0     # COM stiffness per unit mass (1/s^2)
    balance_kd: float = 12.0     # COM damping per unit mass (1/s)
    balance_damping: float = 0.5  # fraction of kd applied as joint damping

    def hand(self, name):
        try:
            return self.hands[name]
        except KeyError:
            raise UnknownHand(f"unknown hand {name!r}") from None

    def arm_dofs(self, sk, name):
        h = self.hand(name)
        return chain_dofs(sk, h.link, self.arm_base.get(name))


def load_profile(sk, spec):
    """Parse the ``profile`` section stored next to a skeleton."""
    if spec is None:
        spec = {}
    jn = sk.joint_by_name

    def dof_of(name, path):
        if isinstance(name, int):
            return name
        if name not in jn:
            raise ValidationError(f"unknown joint {name!r}", path)
        return jn[name]

    def link_of(ref, path):
        lid = sk.link_by_name.get(ref, ref) if isinstance(ref, str) else ref
        if lid not in sk.link_index:
            raise UnknownLink(f"unknown link {ref!r}", path)
        return lid

    hands, arm_base = {}, {}
    for name, hd in spec.get("hands", {}).items():
        hands[name] = Hand(link_of(hd["link"], f"profile.hands.{name}.link"),
                           _vec(hd.get("point", [0, 0, 0]), 3, f"profile.hands.{name}.point"))
        if "base" in hd:
            arm_base[name] = dof_of(hd["base"], f"profile.hands.{name}.base")
    feet = tuple((link_of(fd["link"], f"profile.feet[{i}].link"),
                  _frozen(np.array(fd["points"], dtype=float).reshape(-1, 3)))
                 for i, fd in enumerate(spec.get("feet", [])))
    head = None
    if "head" in spec:
        hd = spec["head"]
        head = Hand(link_of(hd["link"], "profile.head.link"), _vec(hd.get("eye", [0, 0, 0]), 3, "profile.head.eye"))
    gaze = _vec(spec.get("head", {}).get("gaze", [1, 0, 0]), 3, "profile.head.gaze")

    posture = np.zeros(sk.dof)
    for name, val in spec.get("default_posture", {}).items():
        posture[dof_of(name, f"profile.default_posture.{name}")] = float(val)
    root_height = float(spec.get("root_height", 0.0))
    if sk.free_flyer:
        posture[sk.n_joints + 2] = root_height
    posture = clamp_to_limits(sk, posture)

    def per_dof(key):
        arr = np.zeros(sk.dof)
        val = spec.get(key, {})
        if isinstance(val, (int, float)):
            arr[:sk.n_joints] = float(val)
        else:
            for name, g in val.items():
                arr[dof_of(name, f"profile.{key}.{name}")] = float(g)
        return _frozen(arr)

    gait = spec.get("gait", {})
    legs = tuple((dof_of(h, "profile.gait.legs"), dof_of(k, "profile.gait.legs"))
                 for h, k in gait.get("legs", []))
    bal = spec.get("balance", {})
    support = [dof_of(n, "profile.support") for n in spec.get("support", [])]
    if sk.free_flyer:
        support += list(range(sk.n_joints, sk.dof))
    return BodyProfile(
        hands=hands, arm_base=arm_base, feet=feet, head=head, gaze_axis=_frozen(gaze),
        default_posture=_frozen(posture), kp=per_dof("kp"), kd=per_dof("kd"),
        support_dofs=tuple(sorted(set(support))), root_height=root_height,
        ground_clamp_height=float(spec.get("ground_clamp_height", 0.15)),
        fallen_height=float(spec.get("fallen_height", 0.4)),
        tool_hand=spec.get("tool_hand", "right"), free_hand=spec.get("free_hand", "left"),
        stand_offset=float(spec.get("stand_offset", 0.35)),
        gait_legs=legs, gait_hip=float(gait.get("hip", 0.3)), gait_knee=float(gait.get("knee", 0.5)),
        gait_stride=float(gait.get("stride", 0.6)),
        balance_kp=float(bal.get("kp_com", 40.0)), balance_kd=float(bal.get("kd_com", 12.0)),
        balance_damping=float(bal.get("joint_damping", 0.5)),
    )


def load_body(path_or_spec):
    """Load a skeleton file that may also carry a ``profile`` section."""
    spec = path_or_spec
    if isinstance(spec, (str, Path)):
        spec = json.loads(Path(spec).read_text())
    sk = load_skeleton(spec)
    return sk, load_profile(sk, spec.get("profile"))


DATA_DIR = Path(__file__).parent / "data"


def reference_humanoid():
    """The bundled 18-joint humanoid with its body profile."""
    return load_body(DATA_DIR / "humanoid.json")


def serial_chain(lengths, masses=None, axis=(0.0, 0.0, 1.0), direction=(1.0, 0.0, 0.0),
                 limits=None, point_mass=False, radius=0.0):
    """Spec dict for a serial chain of revolute joints on a massless base.

    Links are uniform rods along ``direction`` (or point masses at their tips
    when ``point_mass``); every joint turns about ``axis``.  Default limits
    allow a full turn either way, so an IK step never parks a joint on a
    limit at the +-pi seam.
    """
    direction = np.asarray(direction, dtype=float)
    masses = [1.0] * len(lengths) if masses is None else list(masses)
    limits = limits or [[-2.0 * math.pi, 2.0 * math.pi]] * len(lengths)
    links = [{"id": 0, "name": "base", "mass": 0.0}]
    joints = []
    for k, (l, m) in enumerate(zip(lengths, masses), start=1):
        if point_mass:
            com, inertia = (l * direction).tolist(), np.zeros((3, 3))
        else:
            com = (0.5 * l * direction).tolist()
            # solid rod about its center: m l^2 / 12 across, m r^2 / 2 along
            across = m * l * l / 12.0 + m * radius * radius / 4.0
            inertia = across * (np.eye(3) - np.outer(direction, direction))
            inertia += 0.5 * m * radius * radius * np.outer(direction, direction)
        links.append({"id": k, "name": f"link{k}", "mass": float(m), "com": com,
                      "inertia": inertia.tolist(), "child_attach": (l * direction).tolist()})
        joints.append({"id": k, "name": f"joint{k}", "parent_link": k - 1, "child_link": k,
                       "axis": list(axis), "limits": list(limits[k - 1])})
    profile = {"hands": {"tip": {"link": len(lengths), "point": (lengths[-1] * direction).tolist()}}}
    return {"links": links, "joints": joints, "root_link": 0, "free_flyer": False, "profile": profile}
