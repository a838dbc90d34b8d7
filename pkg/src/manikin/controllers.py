"""Low-level controller catalog.

Every controller is a black box described by a pre-condition (states it can
start from), a post-condition (the success region), a performance estimate
(lower is better) and a step function producing torques and/or prescribed
accelerations.  The compositor owns activation, success detection and
switching; controllers only keep a per-activation scratch dict.
"""
from __future__ import annotations

import dataclasses
import enum
import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import ValidationError
from .model import Transform, center_of_mass, chain_reach, com_jacobian, jacobian, kinematics
from .solver import GRAVITY, dls_step, gravity_torques, mass_matrix


class Mode(enum.Enum):
    Kinematic = "Kinematic"
    Dynamic = "Dynamic"
    Hybrid = "Hybrid"


class Status(enum.Enum):
    Running = "Running"
    Succeeded = "Succeeded"
    Failed = "Failed"


class Kind(enum.Enum):
    Reach = "Reach"
    Grasp = "Grasp"
    Release = "Release"
    WalkTo = "WalkTo"
    HoldPosture = "HoldPosture"
    RecoverBalance = "RecoverBalance"
    Fall = "Fall"


@dataclass(frozen=True)
class MovementRequest:
    """A simple movement.  ``target`` is a 3-vector or an object id."""
    kind: Kind
    target: object = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        kind = self.kind if isinstance(self.kind, Kind) else Kind(self.kind)
        object.__setattr__(self, "kind", kind)
        target = self.target
        if target is not None and not isinstance(target, str):
            target = tuple(float(x) for x in np.asarray(target, dtype=float).reshape(3))
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "params", dict(self.params))
        if kind in (Kind.Reach, Kind.WalkTo, Kind.Grasp) and target is None:
            raise ValidationError(f"{kind.value} request needs a target")

    @property
    def hand(self):
        return self.params.get("hand", "right")

    def to_dict(self):
        d = {"kind": self.kind.value}
        if self.target is not None:
            d["target"] = self.target if isinstance(self.target, str) else list(self.target)
        if self.params:
            d["params"] = dict(self.params)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(Kind(d["kind"]), d.get("target"), d.get("params", {}))

    def __str__(self):
        tgt = "" if self.target is None else f" {self.target}"
        return f"{self.kind.value}{tgt}"


@dataclass
class ControllerOutput:
    torques: np.ndarray | None = None     # full-length; entries on prescribed dofs are ignored
    prescribed: dict | None = None        # dof -> prescribed acceleration
    attachments: tuple = ()               # ("attach" | "detach", hand, object id)
    status: Status = Status.Running
    reason: str = ""


def check_output(mode, out):
    if mode is Mode.Kinematic and out.torques is not None:
        raise ValidationError("kinematic controllers must not emit torques")
    if mode is Mode.Dynamic and out.prescribed:
        raise ValidationError("dynamic controllers must not emit prescriptions")


@dataclass(frozen=True)
class Thresholds:
    """Artifact constants; every field can be overridden from a scenario."""
    reach_success: float = 0.02
    reach_margin: float = 0.02
    reach_speed: float = 0.6
    reach_accel: float = 2.0
    reach_joint_speed: float = 3.0
    reach_timeout: float = 1.0
    grasp_distance: float = 0.05
    balance_margin: float = 0.01
    recoverable_band: float = 0.05
    balance_vel_tol: float = 0.05
    posture_tol: float = 0.01
    posture_vel_tol: float = 0.01
    fall_vel_tol: float = 0.02
    walk_speed: float = 1.0
    walk_success: float = 0.05
    walk_clearance: float = 0.0
    standing_tol: float = 0.1
    ik_damping: float = 0.05
    w_time: float = 1.0
    w_energy: float = 0.1
    forearm_reach: float = 0.45
    standing_reach: float = 0.9
    local_range: float = 1.0
    room_range: float = 10.0
    n_collab: int = 4
    lift_capacity: float = 60.0

    @classmethod
    def from_dict(cls, d, path="thresholds"):
        names = {f.name for f in dataclasses.fields(cls)}
        for k, v in d.items():
            if k not in names:
                raise ValidationError(f"unknown threshold {k!r}", path)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v) or v < 0:
                raise ValidationError(f"threshold {k!r} must be a finite non-negative number", f"{path}.{k}")
        return cls(**d)


# --------------------------------------------------------------------------
# Support polygon geometry
# --------------------------------------------------------------------------

@functools.lru_cache(maxsize=64)
def _hull(data, n):
    pts = np.frombuffer(data).reshape(n, 2)
    try:
        hull = ConvexHull(pts)
    except (QhullError, ValueError):
        # collinear or too few points: keep the extreme points as a degenerate polygon
        order = np.lexsort((pts[:, 1], pts[:, 0]))
        out = pts[order[[0, -1]]] if n > 1 else pts.copy()
    else:
        out = pts[hull.vertices]
    out.flags.writeable = False
    return out


def convex_hull(points):
    """Counter-clockwise hull vertices of 2-D points."""
    pts = np.ascontiguousarray(points, dtype=float).reshape(-1, 2)
    return _hull(pts.tobytes(), len(pts))


def _segment_distance(p, a, b):
    ab = b - a
    denom = ab @ ab
    t = 0.0 if denom == 0 else min(1.0, max(0.0, (p - a) @ ab / denom))
    return float(np.linalg.norm(p - (a + t * ab)))


def polygon_signed_distance(poly, point):
    """Euclidean distance to the polygon boundary, negative inside."""
    poly = np.asarray(poly, dtype=float)
    p = np.asarray(point, dtype=float)[:2]
    n = len(poly)
    if n == 1:
        return float(np.linalg.norm(p - poly[0]))
    a = poly
    e = np.roll(poly, -1, axis=0) - a
    r = p - a
    ee = np.einsum("ij,ij->i", e, e)
    t = np.clip(np.einsum("ij,ij->i", r, e) / np.where(ee > 0, ee, 1.0), 0.0, 1.0)
    d = float(np.sqrt(np.min(np.einsum("ij,ij->i", r - t[:, None] * e, r - t[:, None] * e))))
    if n < 3:
        return d
    inside = bool(np.all(e[:, 0] * r[:, 1] - e[:, 1] * r[:, 0] >= 0))
    return -d if inside else d


def polygon_centroid(poly):
    poly = np.asarray(poly, dtype=float)
    if len(poly) < 3:
        return poly.mean(axis=0)
    x, y = poly[:, 0], poly[:, 1]
    xs, ys = np.roll(x, -1), np.roll(y, -1)
    cross = x * ys - xs * y
    area = cross.sum() / 2.0
    if abs(area) < 1e-15:
        return poly.mean(axis=0)
    return np.array([((x + xs) * cross).sum(), ((y + ys) * cross).sum()]) / (6.0 * area)


def segment_blocked(a, b, obstacles, clearance=0.0):
    """True if the ground segment a->b passes within any obstacle circle."""
    a, b = np.asarray(a, dtype=float)[:2], np.asarray(b, dtype=float)[:2]
    for ox, oy, r in obstacles:
        if _segment_distance(np.array([ox, oy]), a, b) < r + clearance:
            return True
    return False


def trapezoid_time(distance, vmax, amax):
    if distance <= 0:
        return 0.0
    if distance >= vmax * vmax / amax:
        return distance / vmax + vmax / amax
    return 2.0 * math.sqrt(distance / amax)


def trapezoid_position(t, distance, vmax, amax):
    """Arc length travelled at time t along a rest-to-rest trapezoidal profile."""
    if distance <= 0:
        return 0.0
    T = trapezoid_time(distance, vmax, amax)
    if t >= T:
        return distance
    if distance >= vmax * vmax / amax:
        ta = vmax / amax
        if t < ta:
            return 0.5 * amax * t * t
        if t < T - ta:
            return 0.5 * amax * ta * ta + vmax * (t - ta)
        r = T - t
        return distance - 0.5 * amax * r * r
    half = T / 2.0
    if t < half:
        return 0.5 * amax * t * t
    r = T - t
    return distance - 0.5 * amax * r * r


# --------------------------------------------------------------------------
# What a controller may look at
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Attachment:
    object: str
    rel: Transform     # object pose expressed in the hand frame
    point: tuple | None = None    # nominal contact point, object frame


@dataclass(eq=False)
class WorldView:
    sk: object
    profile: object
    thresholds: Thresholds = field(default_factory=Thresholds)
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())
    dt: float = 1e-3
    time: float = 0.0
    phase: str = "Idle"
    objects: dict = field(default_factory=dict)
    obstacles: tuple = ()
    attachments: dict = field(default_factory=dict)   # hand name -> Attachment
    load: np.ndarray | None = None                     # generalized external force on the body
    manikin: str = "manikin:0000"

    def __post_init__(self):
        self._memo = {}

    def _cached(self, key, q, fn):
        k = (key, q.tobytes())
        if k not in self._memo:
            if len(self._memo) > 32:
                self._memo.clear()
            self._memo[k] = fn()
        return self._memo[k]

    def kin(self, s):
        return self._cached("kin", s.q, lambda: kinematics(self.sk, s.q))

    def com(self, s):
        return self._cached("com", s.q, lambda: center_of_mass(self.sk, s.q, self.kin(s)))

    def hand_frame(self, s, hand):
        h = self.profile.hand(hand)
        kin = self.kin(s)
        i = self.sk.link_idx(h.link)
        return Transform(kin.R[i], kin.R[i] @ h.point + kin.p[i])

    def hand_position(self, s, hand):
        return self.hand_frame(s, hand).translation

    def hand_jacobian(self, s, hand):
        h = self.profile.hand(hand)
        return jacobian(self.sk, s.q, h.link, h.point, kin=self.kin(s))[:3]

    def polygon(self, s):
        def build():
            if not self.profile.feet:
                return None
            kin = self.kin(s)
            pts = []
            for link, local in self.profile.feet:
                i = self.sk.link_idx(link)
                pts.append(local @ kin.R[i].T + kin.p[i])
            return convex_hull(np.vstack(pts)[:, :2])
        return self._cached("poly", s.q, build)

    def balance_distance(self, s):
        """Signed distance of the COM ground projection to the support polygon."""
        poly = self.polygon(s)
        if poly is None:
            return -math.inf
        return polygon_signed_distance(poly, self.com(s)[:2])

    def balanced(self, s):
        return self.balance_distance(s) <= 0.0

    @property
    def standing(self):
        return self.phase not in ("Falling", "Fallen")

    def root_height(self, s):
        if self.sk.free_flyer:
            return float(s.q[self.sk.n_joints + 2])
        return float(self.kin(s).p[self.sk.order[0]][2])

    def root_xy(self, s):
        if self.sk.free_flyer:
            return s.q[self.sk.n_joints:self.sk.n_joints + 2].copy()
        return self.kin(s).p[self.sk.order[0]][:2].copy()

    def target_point(self, target, attach=None):
        """World point of a target; an object id resolves to its handle or ``attach``."""
        if isinstance(target, str):
            if target not in self.objects:
                raise ValidationError(f"unknown object {target!r}")
            return self.objects[target].grasp_world(attach)
        return np.asarray(target, dtype=float)

    def hand_target(self, s, req):
        """Where the hand must go; a carried object's handle is steered instead."""
        x = self.target_point(req.target, req.params.get("attach"))
        carry = req.params.get("carry")
        if carry is not None and carry in self.objects:
            x = x + self.hand_position(s, req.hand) - self.objects[carry].grasp_world()
        return x

    def actuated(self):
        """Joint dofs driven by controllers (support joints are locked while standing)."""
        n = self.sk.n_joints
        if not self.standing:
            return np.arange(n)
        support = set(self.profile.support_dofs)
        return np.array([d for d in range(n) if d not in support], dtype=int)

    def gravity_comp(self, s):
        g = gravity_torques(self.sk, s.q, self.gravity)
        if self.load is not None:
            g = g - self.load
        return g


def max_abs(v):
    return float(np.max(np.abs(v))) if np.size(v) else 0.0


def hold_torques(s, view, ref, dofs):
    """PD toward ``ref`` plus gravity/load compensation on ``dofs``."""
    p = view.profile
    tau = np.zeros(view.sk.dof)
    if len(dofs):
        g = view.gravity_comp(s)
        tau[dofs] = p.kp[dofs] * (ref[dofs] - s.q[dofs]) - p.kd[dofs] * s.qd[dofs] + g[dofs]
    return tau


def track(s, q_des, dofs, dt):
    """Accelerations that land ``q`` exactly on ``q_des`` after one semi-implicit step."""
    return {int(d): float((q_des[d] - s.q[d] - s.qd[d] * dt) / (dt * dt)) for d in dofs}


def stop(s, dofs, dt):
    return {int(d): float(-s.qd[d] / dt) for d in dofs}


# --------------------------------------------------------------------------
# Catalog
# --------------------------------------------------------------------------

class Controller:
    name = "controller"
    mode = Mode.Dynamic
    kinds = frozenset()
    universal = False

    def __init__(self, id):
        self.id = int(id)

    def accepts(self, req):
        return req.kind in self.kinds

    def pre_condition(self, s, view, req):
        return True

    def post_condition(self, s, view, req):
        return False

    def estimate(self, s, view, req):
        """(predicted completion time s, predicted energy J)."""
        return 0.0, 0.0

    def performance(self, s, view, req):
        t, e = self.estimate(s, view, req)
        th = view.thresholds
        return max(0.0, th.w_time * t + th.w_energy * e)

    def start(self, s, view, req):
        return {"t": 0.0, "q0": s.q.copy()}

    def step(self, s, view, req, scratch):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}(id={self.id})"


class PostureController(Controller):
    """Return to the default posture: PD plus gravity compensation."""
    name = "posture"
    kinds = frozenset({Kind.HoldPosture})

    def reference(self, view):
        return view.profile.default_posture

    def pre_condition(self, s, view, req):
        return view.standing and view.balanced(s)

    def post_condition(self, s, view, req):
        th = view.thresholds
        dofs = view.actuated()
        ref = self.reference(view)
        return (max_abs(s.q[dofs] - ref[dofs]) < th.posture_tol
                and max_abs(s.qd) < th.posture_vel_tol)

    def estimate(self, s, view, req):
        dofs = view.actuated()
        err = self.reference(view)[dofs] - s.q[dofs]
        return max_abs(err), 0.5 * float(view.profile.kp[dofs] @ (err * err))

    def step(self, s, view, req, scratch):
        return ControllerOutput(torques=hold_torques(s, view, self.reference(view), view.actuated()))


class ReachController(Controller):
    """Move a hand to a point along a straight, trapezoidally timed path.

    The arm chain is kinematic (one clamped damped-least-squares step per
    tick, turned into prescribed accelerations); the rest of the upper body
    is held dynamically where it was at activation.
    """
    name = "reach"
    mode = Mode.Hybrid
    kinds = frozenset({Kind.Reach})

    def envelope(self, s, view, hand):
        h = view.profile.hand(hand)
        dofs = view.profile.arm_dofs(view.sk, hand)
        base, reach = chain_reach(view.sk, h.link, h.point, dofs, view.kin(s))
        return base, reach - view.thresholds.reach_margin

    def pre_condition(self, s, view, req):
        if not view.standing or not view.balanced(s):
            return False
        try:
            x = view.hand_target(s, req)
            base, radius = self.envelope(s, view, req.hand)
        except ValidationError:
            return False
        # a target already under the hand counts even when the arm is near full stretch
        if float(np.linalg.norm(view.hand_position(s, req.hand) - x)) < view.thresholds.reach_success:
            return True
        return float(np.linalg.norm(x - base)) <= radius

    def post_condition(self, s, view, req):
        try:
            x = view.hand_target(s, req)
        except ValidationError:
            return False
        return float(np.linalg.norm(view.hand_position(s, req.hand) - x)) < view.thresholds.reach_success

    def estimate(self, s, view, req):
        th = view.thresholds
        x = view.hand_target(s, req)
        hp = view.hand_position(s, req.hand)
        t = trapezoid_time(float(np.linalg.norm(x - hp)), th.reach_speed, th.reach_accel)
        h = view.profile.hand(req.hand)
        links = {view.sk.links[i].id for i in range(len(view.sk.links))
                 if view.sk.joint_dof[i] in view.profile.arm_dofs(view.sk, req.hand)}
        m = sum(l.mass for l in view.sk.links if l.id in links) or view.sk.links[view.sk.link_idx(h.link)].mass
        g = float(np.linalg.norm(view.gravity))
        return t, m * g * max(0.0, x[2] - hp[2]) + 0.5 * m * th.reach_speed ** 2

    def start(self, s, view, req):
        return {"t": 0.0, "q0": s.q.copy(), "x0": view.hand_position(s, req.hand)}

    def step(self, s, view, req, scratch):
        th, dt = view.thresholds, view.dt
        scratch["t"] += dt
        x0 = scratch["x0"]
        x = view.hand_target(s, req)
        dist = float(np.linalg.norm(x - x0))
        T = trapezoid_time(dist, th.reach_speed, th.reach_accel)
        if scratch["t"] > T + th.reach_timeout:
            return ControllerOutput(status=Status.Failed, reason="stalled")
        frac = 1.0 if dist < 1e-12 else trapezoid_position(scratch["t"], dist, th.reach_speed, th.reach_accel) / dist
        x_des = x0 + frac * (x - x0)

        arm = list(view.profile.arm_dofs(view.sk, req.hand))
        J = view.hand_jacobian(s, req.hand)[:, arm]
        dq = dls_step(J, x_des - view.hand_position(s, req.hand), th.ik_damping)
        limit = th.reach_joint_speed * dt
        dq = np.clip(dq, -limit, limit)
        q_des = s.q.copy()
        q_des[arm] = np.clip(s.q[arm] + dq, view.sk.lower[arm], view.sk.upper[arm])

        rest = np.array([d for d in view.actuated() if d not in arm], dtype=int)
        tau = hold_torques(s, view, scratch["q0"], rest)
        return ControllerOutput(torques=tau, prescribed=track(s, q_des, arm, dt))


class BalanceController(Controller):
    """Jacobian-transpose COM servo toward the support polygon centroid, plus
    joint PD toward the default stance."""
    name = "balance"
    kinds = frozenset({Kind.RecoverBalance})

    def pre_condition(self, s, view, req):
        if not view.standing or view.polygon(s) is None:
            return False
        return view.balance_distance(s) <= view.thresholds.recoverable_band

    def post_condition(self, s, view, req):
        th = view.thresholds
        return view.balance_distance(s) <= -th.balance_margin and max_abs(s.qd) < th.balance_vel_tol

    def estimate(self, s, view, req):
        c = view.com(s)[:2]
        d = float(np.linalg.norm(polygon_centroid(view.polygon(s)) - c))
        Jc = com_jacobian(view.sk, s.q, view.kin(s))
        v = Jc @ s.qd
        return d / 0.1, 0.5 * view.sk.total_mass * float(v @ v)

    def step(self, s, view, req, scratch):
        p = view.profile
        dofs = view.actuated()
        kin = view.kin(s)
        c = view.com(s)
        Jc = com_jacobian(view.sk, s.q, kin)
        cdot = Jc @ s.qd
        target = polygon_centroid(view.polygon(s))
        force = np.zeros(3)
        force[:2] = view.sk.total_mass * (p.balance_kp * (target - c[:2]) - p.balance_kd * cdot[:2])
        # COM servo on top of a pull back toward the (balanced) default stance
        tau = hold_torques(s, view, p.default_posture, dofs)
        tau[dofs] += Jc[:, dofs].T @ force
        return ControllerOutput(torques=tau)


def fall_damping(s, view, tau_c=0.05):
    """Joint damping torques for a limp body.

    Each joint's velocity decays with time constant ``tau_c`` given its
    effective inertia ``1 / (M^-1)_ii``.  The gains are then scaled so the
    largest eigenvalue of ``dt M^-1 D`` is at most 1: explicit damping
    through the coupled inertia can otherwise overshoot and feed energy
    into a floating body.  Once the pelvis rests on the ground the joints
    also get gravity compensation.
    """
    n = view.sk.n_joints
    minv = np.linalg.inv(mass_matrix(view.sk, s.q))[:n, :n]
    kd = 1.0 / (tau_c * np.diag(minv))
    r = np.sqrt(kd)
    lam = float(np.linalg.eigvalsh(r[:, None] * minv * r[None, :])[-1])
    if lam * view.dt > 1.0:
        kd = kd / (lam * view.dt)
    tau = np.zeros(view.sk.dof)
    tau[:n] = -kd * s.qd[:n]
    # once the pelvis is down, the floor carries the limbs
    if view.sk.free_flyer and view.root_height(s) <= view.profile.ground_clamp_height + 1e-9:
        tau[:n] += view.gravity_comp(s)[:n]
    return tau


class FallController(Controller):
    """Protective collapse: pure joint damping.  Always eligible."""
    name = "fall"
    kinds = frozenset({Kind.Fall})
    universal = True

    def pre_condition(self, s, view, req):
        return True

    def post_condition(self, s, view, req):
        return (view.root_height(s) < view.profile.fallen_height
                and max_abs(s.qd) < view.thresholds.fall_vel_tol)

    def estimate(self, s, view, req):
        g = float(np.linalg.norm(view.gravity))
        h = max(0.0, view.root_height(s) - view.profile.ground_clamp_height)
        return (math.sqrt(2 * h / g) if g > 0 else 0.0), view.sk.total_mass * g * h

    def step(self, s, view, req, scratch):
        return ControllerOutput(torques=fall_damping(s, view))


class WalkController(Controller):
    """Root-motion stub: the pelvis glides toward the target at constant
    heading while the legs play a canned antiphase swing."""
    name = "walk"
    mode = Mode.Kinematic
    kinds = frozenset({Kind.WalkTo})

    def _goal(self, view, req):
        return view.target_point(req.target)[:2]

    def pre_condition(self, s, view, req):
        if not view.sk.free_flyer or not view.standing or not view.balanced(s):
            return False
        if abs(view.root_height(s) - view.profile.root_height) > view.thresholds.standing_tol:
            return False
        try:
            goal = self._goal(view, req)
        except ValidationError:
            return False
        return not segment_blocked(view.root_xy(s), goal, view.obstacles, view.thresholds.walk_clearance)

    def post_condition(self, s, view, req):
        return float(np.linalg.norm(self._goal(view, req) - view.root_xy(s))) < view.thresholds.walk_success

    def estimate(self, s, view, req):
        d = float(np.linalg.norm(self._goal(view, req) - view.root_xy(s)))
        g = float(np.linalg.norm(view.gravity))
        return d / view.thresholds.walk_speed, 0.2 * view.sk.total_mass * g * d

    def start(self, s, view, req):
        return {"t": 0.0, "q0": s.q.copy(), "travel": 0.0}

    def step(self, s, view, req, scratch):
        sk, p, th, dt = view.sk, view.profile, view.thresholds, view.dt
        scratch["t"] += dt
        n = sk.n_joints
        delta = self._goal(view, req) - view.root_xy(s)
        d = float(np.linalg.norm(delta))
        speed = min(th.walk_speed, d / 0.1)
        v = delta / d * speed if d > 0 else np.zeros(2)
        scratch["travel"] += speed * dt

        q_des = scratch["q0"].copy()
        env = min(1.0, d / 0.3) * min(1.0, scratch["t"] / 0.3)
        phase = math.pi * scratch["travel"] / p.gait_stride
        for k, (hip, knee) in enumerate(p.gait_legs):
            sgn = 1.0 if k % 2 == 0 else -1.0
            q_des[hip] = env * p.gait_hip * sgn * math.sin(phase)
            q_des[knee] = env * p.gait_knee * max(0.0, sgn * math.sin(phase))
        q_des[:n] = np.clip(q_des[:n], sk.lower, sk.upper)
        pres = track(s, q_des, range(n), dt)
        pres.update(stop(s, range(n + 2, sk.dof), dt))
        pres[n] = float((v[0] - s.qd[n]) / dt)
        pres[n + 1] = float((v[1] - s.qd[n + 1]) / dt)
        # hold the pelvis height where the walk started
        pres[n + 2] = float((scratch["q0"][n + 2] - s.q[n + 2] - s.qd[n + 2] * dt) / (dt * dt))
        return ControllerOutput(prescribed=pres)


class GraspController(Controller):
    """Weld an object to a hand or release it; holds the body still that tick."""
    name = "grasp"
    mode = Mode.Kinematic
    kinds = frozenset({Kind.Grasp, Kind.Release})

    def pre_condition(self, s, view, req):
        hand = req.hand
        try:
            view.profile.hand(hand)
        except ValidationError:
            return False
        if req.kind is Kind.Release:
            att = view.attachments.get(hand)
            return att is not None and (req.target is None or att.object == req.target)
        if hand in view.attachments or not isinstance(req.target, str) or req.target not in view.objects:
            return False
        point = view.target_point(req.target, req.params.get("attach"))
        return float(np.linalg.norm(view.hand_position(s, hand) - point)) <= view.thresholds.grasp_distance

    def post_condition(self, s, view, req):
        att = view.attachments.get(req.hand)
        if req.kind is Kind.Release:
            return att is None or (req.target is not None and att.object != req.target)
        return att is not None and att.object == req.target

    def estimate(self, s, view, req):
        return view.dt, 0.0

    def step(self, s, view, req, scratch):
        if req.kind is Kind.Grasp:
            point = req.params.get("attach")
            if point is None:
                point = view.objects[req.target].grasp
            ev = ("attach", req.hand, req.target, tuple(float(x) for x in point))
        else:
            ev = ("detach", req.hand, view.attachments[req.hand].object)
        return ControllerOutput(prescribed=stop(s, range(view.sk.dof), view.dt), attachments=(ev,))


CONTROLLER_TYPES = {c.name: c for c in (PostureController, ReachController, BalanceController,
                                       FallController, WalkController, GraspController)}


def default_catalog():
    """The standard catalog, ids in a fixed order."""
    return [cls(i) for i, cls in enumerate(CONTROLLER_TYPES.values())]


def build_catalog(names):
    out = []
    for i, name in enumerate(names):
        if name not in CONTROLLER_TYPES:
            raise ValidationError(f"unknown controller {name!r}", f"controllers.catalog[{i}]")
        out.append(CONTROLLER_TYPES[name](i))
    return out
