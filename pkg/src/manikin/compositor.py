"""High-level controller: per-manikin arbitration, switching and the
disturbance policy (recover balance if possible, otherwise fall).

A :class:`Manikin` bundles one body with its queue, catalog and compositor
state; a :class:`World` holds all manikins, objects and the event log.
:func:`tick` advances one manikin by one time step in place.
"""
from __future__ import annotations

import enum
import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .controllers import (
    Attachment, ControllerOutput, Kind, MovementRequest, Status, Thresholds, WorldView,
    check_output, default_catalog, fall_damping, hold_torques, track,
)
from .errors import DimensionMismatch, NoEligibleController
from .model import State, log_so3
from .solver import GRAVITY, HybridPartition, dls_step, hybrid_solve, step

log = logging.getLogger(__name__)


class Phase(enum.Enum):
    Idle = "Idle"
    Executing = "Executing"
    Recovering = "Recovering"
    Falling = "Falling"
    Fallen = "Fallen"


_P = Phase
LEGAL_TRANSITIONS = frozenset({
    (_P.Idle, _P.Executing), (_P.Executing, _P.Idle),
    (_P.Executing, _P.Recovering), (_P.Executing, _P.Falling), (_P.Recovering, _P.Falling),
    (_P.Falling, _P.Fallen), (_P.Recovering, _P.Executing),
    # a disturbance can also hit a manikin that is idling
    (_P.Idle, _P.Recovering), (_P.Idle, _P.Falling), (_P.Recovering, _P.Idle),
})


def transition_legal(a, b):
    a, b = Phase(a), Phase(b)
    return a == b or (a, b) in LEGAL_TRANSITIONS


def trace_legal(phases):
    phases = [Phase(p) for p in phases]
    return all(transition_legal(a, b) for a, b in zip(phases[:-1], phases[1:]))


@dataclass
class CompositorState:
    phase: Phase = Phase.Idle
    active: int | None = None
    activation_state: State | None = None
    ticks_active: int = 0
    request: MovementRequest | None = None

    def check(self):
        busy = self.phase in (Phase.Executing, Phase.Recovering, Phase.Falling)
        if busy != (self.active is not None):
            raise AssertionError(f"phase {self.phase.value} with active={self.active}")


def select_controller(request, s, view, catalog):
    """Cheapest eligible controller for ``request``; ties go to the lowest id."""
    if not catalog:
        raise ValueError("empty controller catalog")
    best = None
    for c in catalog:
        if not c.accepts(request) or not c.pre_condition(s, view, request):
            continue
        key = (c.performance(s, view, request), c.id)
        if best is None or key < best[0]:
            best = (key, c)
    if best is None:
        raise NoEligibleController(f"no eligible controller for {request}")
    return best[1].id


@dataclass(eq=False)
class Manikin:
    id: str
    sk: object
    profile: object
    state: State
    catalog: list = field(default_factory=default_catalog)
    queue: list = field(default_factory=list)
    cstate: CompositorState = field(default_factory=CompositorState)
    attachments: dict = field(default_factory=dict)     # hand -> Attachment
    blocked: bool = False
    scratch: dict = field(default_factory=dict)
    hold_ref: np.ndarray | None = None
    pending_forces: list = field(default_factory=list)  # (hand, force on the object)
    last_tau: np.ndarray | None = None
    transitions: list = field(default_factory=list)
    stats: Counter = field(default_factory=Counter)

    def __post_init__(self):
        self._by_id = {c.id: c for c in self.catalog}
        if self.hold_ref is None:
            self.hold_ref = self.state.q.copy()
        if self.last_tau is None:
            self.last_tau = np.zeros(self.sk.dof)

    def controller(self, cid):
        return self._by_id[cid]

    def push_hand_force(self, hand, force):
        self.pending_forces.append((hand, np.asarray(force, dtype=float)))

    @property
    def phase(self):
        return self.cstate.phase


@dataclass(eq=False)
class World:
    manikins: dict = field(default_factory=dict)
    objects: dict = field(default_factory=dict)
    obstacles: tuple = ()
    thresholds: Thresholds = field(default_factory=Thresholds)
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())
    dt: float = 1e-3
    time: float = 0.0
    events: list = field(default_factory=list)
    shared_objects: set = field(default_factory=set)   # objects driven by an augmented-object group

    def emit(self, manikin, event, detail=None):
        self.events.append({"t": self.time, "manikin": manikin, "event": event, "detail": detail or {}})

    def holders(self, obj_id):
        return [(m.id, h) for m in self.manikins.values() for h, a in m.attachments.items() if a.object == obj_id]

    def view(self, m):
        return WorldView(
            sk=m.sk, profile=m.profile, thresholds=self.thresholds, gravity=self.gravity,
            dt=self.dt, time=self.time, phase=m.cstate.phase.value, objects=self.objects,
            obstacles=self.obstacles, attachments=m.attachments, load=self._load(m), manikin=m.id)

    def _load(self, m):
        """Generalized external force on the body from held objects and grasp reactions."""
        if not m.attachments and not m.pending_forces:
            return None
        load = np.zeros(m.sk.dof)
        probe = WorldView(m.sk, m.profile)
        for hand, att in m.attachments.items():
            if att.object in self.shared_objects:
                continue
            weight = self.objects[att.object].mass * np.asarray(self.gravity)
            load += probe.hand_jacobian(m.state, hand).T @ weight
        for hand, f in m.pending_forces:
            load -= probe.hand_jacobian(m.state, hand).T @ f
        return load


# --------------------------------------------------------------------------
# Phase bookkeeping
# --------------------------------------------------------------------------

def _set_phase(world, m, phase, reason):
    old = m.cstate.phase
    if old == phase:
        return
    if not transition_legal(old, phase):
        raise AssertionError(f"illegal phase transition {old.value} -> {phase.value}")
    m.cstate.phase = phase
    m.transitions.append((world.time, old.value, phase.value))
    world.emit(m.id, "phase_change", {"from": old.value, "to": phase.value, "reason": reason})


def _activate(world, m, cid, request, phase, s, view, reason):
    ctrl = m.controller(cid)
    if not ctrl.pre_condition(s, view, request):
        m.stats["activation_violations"] += 1
    m.stats["activations"] += 1
    m.cstate.active = cid
    m.cstate.request = request
    m.cstate.activation_state = s.copy()
    m.cstate.ticks_active = 0
    m.scratch = ctrl.start(s, view, request)
    world.emit(m.id, "activated", {"controller": ctrl.name, "id": cid, "request": request.to_dict()})
    _set_phase(world, m, phase, reason)


def _deactivate(m):
    m.cstate.active = None
    m.cstate.request = None
    m.cstate.activation_state = None
    m.cstate.ticks_active = 0
    m.scratch = {}


def _stop_point(m, s):
    # where a critically damped PD started at (q, qd) comes to rest without overshoot
    n = m.sk.n_joints
    ref = s.q.copy()
    kp, kd = m.profile.kp[:n], m.profile.kd[:n]
    lead = np.where(kp > 0, kd / (2.0 * np.where(kp > 0, kp, 1.0)), 0.0)
    ref[:n] = np.clip(s.q[:n] + lead * s.qd[:n], m.sk.lower, m.sk.upper)
    return ref


def _go_idle(world, m, s, reason):
    _deactivate(m)
    m.hold_ref = _stop_point(m, s)
    _set_phase(world, m, Phase.Idle, reason)


def _start_head(world, m, s, view, reason):
    """Activate a controller for the queue head, or block the queue."""
    req = m.queue[0]
    try:
        cid = select_controller(req, s, view, m.catalog)
    except NoEligibleController:
        world.emit(m.id, "failed", {"controller": None, "request": req.to_dict(),
                                    "reason": "no_eligible_controller"})
        m.blocked = True
        if m.cstate.phase is not Phase.Idle:
            _go_idle(world, m, s, "no_eligible_controller")
        return False
    _activate(world, m, cid, req, Phase.Executing, s, view, reason)
    return True


def _start_fall(world, m, s, view, reason):
    cid = select_controller(MovementRequest(Kind.Fall), s, view, m.catalog)
    _activate(world, m, cid, MovementRequest(Kind.Fall), Phase.Falling, s, view, reason)


def _disturbance_check(world, m, s, view):
    if m.cstate.phase not in (Phase.Idle, Phase.Executing) or view.balanced(s):
        return
    req = MovementRequest(Kind.RecoverBalance)
    try:
        cid = select_controller(req, s, view, m.catalog)
    except NoEligibleController:
        _start_fall(world, m, s, view, "balance_lost")
        return
    _activate(world, m, cid, req, Phase.Recovering, s, view, "balance_lost")


# --------------------------------------------------------------------------
# Outputs when no controller is active
# --------------------------------------------------------------------------

def _idle_output(world, m, s, view):
    if m.cstate.phase is Phase.Fallen:
        return ControllerOutput(torques=fall_damping(s, view))
    dofs = view.actuated()
    tau = hold_torques(s, view, m.hold_ref, dofs)
    pres = {}
    # hands on a shared object follow its handle kinematically
    for hand, att in m.attachments.items():
        if att.object not in world.shared_objects:
            continue
        obj = world.objects[att.object]
        target = obj.pose.compose(att.rel.inverse()).translation
        arm = list(m.profile.arm_dofs(m.sk, hand))
        J = view.hand_jacobian(s, hand)[:, arm]
        q_des = s.q.copy()
        q_des[arm] = np.clip(s.q[arm] + dls_step(J, target - view.hand_position(s, hand),
                                                 world.thresholds.ik_damping),
                             m.sk.lower[arm], m.sk.upper[arm])
        pres.update(track(s, q_des, arm, world.dt))
    return ControllerOutput(torques=tau, prescribed=pres or None)


def _run_active(world, m, s, view):
    cs = m.cstate
    ctrl = m.controller(cs.active)
    if not ctrl.pre_condition(s, view, cs.request):
        m.stats["precondition_failures"] += 1
        return ctrl, ControllerOutput(status=Status.Failed, reason="precondition_lost")
    m.stats[f"steps:{ctrl.name}"] += 1
    out = ctrl.step(s, view, cs.request, m.scratch)
    check_output(ctrl.mode, out)
    cs.ticks_active += 1
    return ctrl, out


def _handle_failure(world, m, ctrl, out, s, view):
    cs = m.cstate
    world.emit(m.id, "failed", {"controller": ctrl.name, "request": cs.request.to_dict(),
                                "reason": out.reason or "failed"})
    if cs.phase is Phase.Recovering:
        _start_fall(world, m, s, view, "recovery_failed")
    else:
        m.blocked = True
        _go_idle(world, m, s, "controller_failed")


def _handle_success(world, m, ctrl, s, view):
    cs = m.cstate
    world.emit(m.id, "succeeded", {"controller": ctrl.name, "request": cs.request.to_dict()})
    phase = cs.phase
    if phase is Phase.Falling:
        dropped = len(m.queue)
        m.queue.clear()
        _deactivate(m)
        _set_phase(world, m, Phase.Fallen, f"fallen; {dropped} request(s) abandoned")
        return
    if phase is Phase.Executing and m.queue:
        m.queue.pop(0)
    if m.queue and not m.blocked:
        if _start_head(world, m, s, view, "next_request"):
            return
    if m.cstate.phase is not Phase.Idle:
        _go_idle(world, m, s, "queue_empty")


# --------------------------------------------------------------------------
# One step
# --------------------------------------------------------------------------

def _hand_frame(view, s, hand):
    return view.hand_frame(s, hand)


def tick(world, mid):
    """Advance manikin ``mid`` by one step of ``world.dt`` (in place)."""
    m = world.manikins[mid]
    sk, dt = m.sk, world.dt
    s = m.state
    view = world.view(m)

    _disturbance_check(world, m, s, view)
    if m.cstate.phase is Phase.Idle and m.queue and not m.blocked:
        _start_head(world, m, s, view, "queue_head")

    ctrl = None
    if m.cstate.active is not None:
        ctrl, out = _run_active(world, m, s, view)
        if out.status is Status.Failed:
            _handle_failure(world, m, ctrl, out, s, view)
            ctrl = None
            if m.cstate.active is not None:
                ctrl, out = _run_active(world, m, s, view)
            else:
                out = _idle_output(world, m, s, view)
    else:
        out = _idle_output(world, m, s, view)

    # contact model: feet weld the support joints while standing; the ground stops a fallen root
    prescribed = dict(out.prescribed or {})
    n = sk.n_joints
    if view.standing:
        for d in m.profile.support_dofs:
            prescribed.setdefault(d, float(-s.qd[d] / dt))
    elif sk.free_flyer and s.q[n + 2] <= m.profile.ground_clamp_height:
        for d in range(n, sk.dof):
            prescribed[d] = float(-s.qd[d] / dt)

    tau = np.zeros(sk.dof) if out.torques is None else np.asarray(out.torques, dtype=float)
    load = view.load if view.load is not None else np.zeros(sk.dof)
    part = HybridPartition.build(sk.dof, prescribed, tau + load)
    qdd, tau_K = hybrid_solve(sk, s, part, world.gravity)
    actuator = tau.copy()
    actuator[part.prescribed] = tau_K - load[part.prescribed]
    new = step(s, qdd, dt, sk)
    if not view.standing and sk.free_flyer and new.q[n + 2] < m.profile.ground_clamp_height:
        q, qd = new.q.copy(), new.qd.copy()
        q[n + 2] = m.profile.ground_clamp_height
        qd[n:] = 0.0
        new = State(q, qd, new.time)

    old_frames = {h: _hand_frame(view, s, h) for h in m.attachments}
    for ev in out.attachments:
        kind, hand, obj_id = ev[:3]
        if kind == "attach":
            rel = _hand_frame(view, new, hand).inverse().compose(world.objects[obj_id].pose)
            m.attachments[hand] = Attachment(obj_id, rel, ev[3] if len(ev) > 3 else None)
        else:
            m.attachments.pop(hand, None)

    # carried objects ride on the hand
    for hand, att in m.attachments.items():
        if att.object in world.shared_objects:
            continue
        obj = world.objects[att.object]
        pose = _hand_frame(view, new, hand).compose(att.rel)
        prev = old_frames[hand].compose(att.rel) if hand in old_frames else obj.pose
        twist = np.concatenate([(pose.translation - prev.translation) / dt,
                                log_so3(pose.rotation @ prev.rotation.T) / dt])
        world.objects[att.object] = obj.moved(pose, twist)

    m.state = new
    m.last_tau = actuator
    m.pending_forces = []
    m.cstate.check()

    if ctrl is not None and m.cstate.active == ctrl.id and out.status is Status.Running:
        if ctrl.post_condition(new, view, m.cstate.request):
            _handle_success(world, m, ctrl, new, world.view(m))
    m.cstate.check()
    return world


def replace_queue(world, mid, requests, reason="replan"):
    """Swap in a new queue; an executing controller is preempted first."""
    m = world.manikins[mid]
    if m.cstate.phase is Phase.Fallen:
        return world
    if m.cstate.phase is Phase.Executing:
        world.emit(m.id, "preempted", {"controller": m.controller(m.cstate.active).name,
                                       "request": m.cstate.request.to_dict()})
        _go_idle(world, m, m.state, reason)
    m.queue = list(requests)
    m.blocked = False
    return world


def inject_failure(world, mid, reason="injected"):
    """Make the active controller report failure now (test hook for replanning)."""
    m = world.manikins[mid]
    if m.cstate.active is None:
        return False
    ctrl = m.controller(m.cstate.active)
    _handle_failure(world, m, ctrl, ControllerOutput(status=Status.Failed, reason=reason),
                    m.state, world.view(m))
    return True


def inject_disturbance(world, mid, impulse):
    """Add a joint-velocity impulse to manikin ``mid`` and log it."""
    m = world.manikins[mid]
    impulse = np.asarray(impulse, dtype=float)
    if impulse.shape != (m.sk.dof,):
        raise DimensionMismatch(f"impulse has length {impulse.size}, dof is {m.sk.dof}")
    m.state = State(m.state.q, m.state.qd + impulse, m.state.time)
    nz = np.flatnonzero(impulse)
    world.emit(mid, "disturbed", {"dofs": nz.tolist(), "impulse": impulse[nz].tolist()})
    return world


def make_manikin(mid, sk, profile, q=None, root=None, catalog=None):
    """A manikin at its default posture (or ``q``), optionally placed at ``root``.

    ``root`` is ``(x, y)`` or ``(x, y, heading)`` on the ground.
    """
    q = np.array(profile.default_posture if q is None else q, dtype=float)
    if root is not None and sk.free_flyer:
        n = sk.n_joints
        q[n:n + 2] = root[:2]
        if len(root) > 2:
            q[n + 3:n + 6] = (0.0, 0.0, float(root[2]))
    return Manikin(mid, sk, profile, State(q, np.zeros(sk.dof)),
                   catalog=default_catalog() if catalog is None else catalog)
