"""Planning layer: goals, their decomposition into movement queues, a small
deterministic FSM per goal runner, prioritized reactive rules, and the
motion-scale classification used to pick a control strategy.

Decomposition is template based.  Each goal kind has a decision table whose
rows look at the current world (where the manikin stands, what each hand
holds) and emit only the requests that are still needed.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .compositor import Phase, replace_queue
from .controllers import Kind, MovementRequest, segment_blocked
from .errors import UnplannableGoal, ValidationError
from .model import chain_reach


class GoalKind(enum.Enum):
    RemovePart = "RemovePart"
    MoveTo = "MoveTo"
    PickAndPlace = "PickAndPlace"
    LiftTogether = "LiftTogether"


_REQUIRED = {
    GoalKind.RemovePart: ("part", "tool"),
    GoalKind.MoveTo: ("location",),
    GoalKind.PickAndPlace: ("object", "place"),
    GoalKind.LiftTogether: ("object", "target"),
}


@dataclass(frozen=True)
class Goal:
    id: str
    kind: GoalKind
    manikins: tuple          # who carries it out; one id except for LiftTogether
    args: dict = field(default_factory=dict)

    def __post_init__(self):
        kind = self.kind if isinstance(self.kind, GoalKind) else GoalKind(self.kind)
        object.__setattr__(self, "kind", kind)
        ms = (self.manikins,) if isinstance(self.manikins, str) else tuple(self.manikins)
        object.__setattr__(self, "manikins", ms)
        object.__setattr__(self, "args", dict(self.args))
        for key in _REQUIRED[kind]:
            if key not in self.args:
                raise ValidationError(f"{kind.value} goal needs {key!r}", f"goals[{self.id}].{key}")
        if not ms:
            raise ValidationError("goal has no manikin", f"goals[{self.id}].manikins")

    @property
    def manikin(self):
        return self.manikins[0]

    def objects(self):
        keys = ("part", "tool", "object")
        return [self.args[k] for k in keys if k in self.args]

    def validate(self, world):
        for mid in self.manikins:
            if mid not in world.manikins:
                raise ValidationError(f"unknown manikin {mid!r}", f"goals[{self.id}].manikins")
        for oid in self.objects():
            if oid not in world.objects:
                raise ValidationError(f"unknown object {oid!r}", f"goals[{self.id}]")

    def to_dict(self):
        args = {k: (list(v) if isinstance(v, (tuple, np.ndarray)) else v) for k, v in self.args.items()}
        return {"id": self.id, "kind": self.kind.value, "manikins": list(self.manikins), "args": args}

    @classmethod
    def from_dict(cls, d, path="goal"):
        try:
            kind = GoalKind(d["kind"])
        except (KeyError, ValueError):
            raise ValidationError(f"unknown goal kind {d.get('kind')!r}", f"{path}.kind") from None
        ms = d.get("manikins", d.get("manikin"))
        if ms is None:
            raise ValidationError("goal has no manikin", f"{path}.manikins")
        return cls(str(d.get("id", path)), kind, ms, d.get("args", {}))


# --------------------------------------------------------------------------
# World queries used by the decision tables
# --------------------------------------------------------------------------

def _view(world, mid):
    return world.view(world.manikins[mid])


def heading(view, s):
    """Yaw of the root link about the vertical."""
    R = view.kin(s).R[view.sk.order[0]]
    return math.atan2(R[1, 0], R[0, 0])


def stand_point(view, s, location):
    """Where to stand to work at ``location``: ``stand_offset`` behind it along the heading."""
    yaw = heading(view, s)
    loc = np.asarray(location, dtype=float)
    off = view.profile.stand_offset
    return np.array([loc[0] - off * math.cos(yaw), loc[1] - off * math.sin(yaw), 0.0])


def in_place(view, s, point):
    return float(np.linalg.norm(view.root_xy(s) - np.asarray(point)[:2])) <= view.thresholds.walk_success


def holds(world, mid, hand, obj_id):
    att = world.manikins[mid].attachments.get(hand)
    return att is not None and att.object == obj_id


def held_by_anyone(world, obj_id):
    return bool(world.holders(obj_id))


def reachable(view, s, hand, point, stand=None):
    """Straight-line test: can the hand chain, with the root moved to ``stand``, reach ``point``?"""
    if stand is None and float(np.linalg.norm(view.hand_position(s, hand) - np.asarray(point))) \
            <= view.thresholds.grasp_distance:
        return True     # already under the hand, even with the arm near full stretch
    h = view.profile.hand(hand)
    base, reach = chain_reach(view.sk, h.link, h.point, view.profile.arm_dofs(view.sk, hand), view.kin(s))
    shift = np.zeros(3)
    if stand is not None:
        shift[:2] = np.asarray(stand)[:2] - view.root_xy(s)
    return float(np.linalg.norm(np.asarray(point) - (base + shift))) <= reach - view.thresholds.reach_margin


def _walkable(view, s, start, stand, goal):
    if not view.sk.free_flyer:
        raise UnplannableGoal(f"goal {goal.id}: fixed-base manikin cannot walk")
    if segment_blocked(start, stand, view.obstacles, view.thresholds.walk_clearance):
        raise UnplannableGoal(f"goal {goal.id}: straight path to {np.round(stand[:2], 4).tolist()} is blocked")


def _plan_stance(view, s, targets, location, goal, out):
    """Walk only when some (hand, point) target is out of reach from here.

    Returns the stand point the later reaches start from (None: stay put).
    """
    if all(reachable(view, s, hand, x) for hand, x in targets):
        return None
    stand = stand_point(view, s, location)
    if not in_place(view, s, stand):
        _walkable(view, s, view.root_xy(s), stand, goal)
        out.append(MovementRequest(Kind.WalkTo, stand))
    for hand, x in targets:
        if not reachable(view, s, hand, x, stand):
            raise UnplannableGoal(f"goal {goal.id}: {np.round(x, 4).tolist()} is out of reach of the {hand} hand")
    return stand


def extraction_point(world, goal):
    """Pull-out point; by default 0.1 m up and 0.1 m back from where the part sits now."""
    if "extraction" in goal.args:
        return np.asarray(goal.args["extraction"], dtype=float)
    return world.objects[goal.args["part"]].grasp_world() + np.array([-0.1, 0.0, 0.1])


def resolve_goal(goal, world):
    """Freeze world-dependent defaults so the goal predicate stops depending on the world."""
    if goal.kind is GoalKind.RemovePart and "extraction" not in goal.args:
        args = dict(goal.args, extraction=[float(x) for x in extraction_point(world, goal)])
        return Goal(goal.id, goal.kind, goal.manikins, args)
    return goal


def work_location(world, goal):
    if "location" in goal.args:
        return np.asarray(goal.args["location"], dtype=float)
    return world.objects[goal.args["part"]].grasp_world()


# --------------------------------------------------------------------------
# Goal predicates
# --------------------------------------------------------------------------

def goal_satisfied(goal, world, tol=None):
    th = world.thresholds
    if goal.kind is GoalKind.MoveTo:
        v = _view(world, goal.manikin)
        s = world.manikins[goal.manikin].state
        return in_place(v, s, goal.args["location"])
    if goal.kind is GoalKind.RemovePart:
        part = goal.args["part"]
        tol = th.reach_success if tol is None else tol
        return (not held_by_anyone(world, part)
                and float(np.linalg.norm(world.objects[part].grasp_world() - extraction_point(world, goal))) < tol)
    if goal.kind is GoalKind.PickAndPlace:
        obj = goal.args["object"]
        tol = th.reach_success if tol is None else tol
        place = np.asarray(goal.args["place"], dtype=float)
        return not held_by_anyone(world, obj) and float(np.linalg.norm(world.objects[obj].grasp_world() - place)) < tol
    if goal.kind is GoalKind.LiftTogether:
        tol = 0.01 if tol is None else tol
        target = np.asarray(goal.args["target"], dtype=float)
        return float(np.linalg.norm(world.objects[goal.args["object"]].position - target)) < tol
    raise ValueError(goal.kind)


# --------------------------------------------------------------------------
# Decomposition
# --------------------------------------------------------------------------

def decompose(goal, world, manikin=None):
    """Movement queue for ``manikin`` (default: the goal's first manikin)."""
    goal.validate(world)
    mid = goal.manikin if manikin is None else manikin
    if mid not in goal.manikins:
        raise ValidationError(f"manikin {mid!r} does not take part in goal {goal.id}")
    m = world.manikins[mid]
    view, s = world.view(m), m.state
    goal = resolve_goal(goal, world)
    if goal_satisfied(goal, world):
        return []
    out = []
    p = view.profile
    if goal.kind is GoalKind.MoveTo:
        loc = np.asarray(goal.args["location"], dtype=float)
        _walkable(view, s, view.root_xy(s), loc, goal)
        return [MovementRequest(Kind.WalkTo, (loc[0], loc[1], 0.0))]

    if goal.kind is GoalKind.RemovePart:
        part, tool = goal.args["part"], goal.args["tool"]
        tool_hand = goal.args.get("tool_hand", p.tool_hand)
        free_hand = goal.args.get("hand", p.free_hand)
        has_tool = holds(world, mid, tool_hand, tool)
        has_part = holds(world, mid, free_hand, part)
        ext = extraction_point(world, goal)
        targets = [(free_hand, ext)]
        if not has_part:
            targets.insert(0, (free_hand, world.objects[part].grasp_world()))
        if not has_tool:
            targets.insert(0, (tool_hand, world.objects[tool].grasp_world()))
        _plan_stance(view, s, targets, work_location(world, goal), goal, out)
        if not has_tool:
            out += [MovementRequest(Kind.Reach, tool, {"hand": tool_hand}),
                    MovementRequest(Kind.Grasp, tool, {"hand": tool_hand})]
        if not has_part:
            out += [MovementRequest(Kind.Reach, part, {"hand": free_hand}),
                    MovementRequest(Kind.Grasp, part, {"hand": free_hand})]
        out += [MovementRequest(Kind.Reach, ext, {"hand": free_hand, "carry": part}),
                MovementRequest(Kind.Release, part, {"hand": free_hand})]
        return out

    if goal.kind is GoalKind.PickAndPlace:
        obj = goal.args["object"]
        hand = goal.args.get("hand", p.tool_hand)
        place = np.asarray(goal.args["place"], dtype=float)
        grip = world.objects[obj].grasp_world()
        here = None
        if not holds(world, mid, hand, obj):
            here = _plan_stance(view, s, [(hand, grip)], grip, goal, out)
            on_it = float(np.linalg.norm(view.hand_position(s, hand) - grip)) <= view.thresholds.grasp_distance
            if here is not None or not on_it:
                out.append(MovementRequest(Kind.Reach, obj, {"hand": hand}))
            out.append(MovementRequest(Kind.Grasp, obj, {"hand": hand}))
        if not reachable(view, s, hand, place, here):
            stand = stand_point(view, s, place)
            _walkable(view, s, view.root_xy(s) if here is None else here[:2], stand, goal)
            out.append(MovementRequest(Kind.WalkTo, stand))
            if not reachable(view, s, hand, place, stand):
                raise UnplannableGoal(f"goal {goal.id}: place point is out of reach")
        out += [MovementRequest(Kind.Reach, place, {"hand": hand, "carry": obj}),
                MovementRequest(Kind.Release, obj, {"hand": hand})]
        return out

    if goal.kind is GoalKind.LiftTogether:
        obj = goal.args["object"]
        grasp = dict(goal.args.get("grasps", {})).get(mid, {})
        hand = grasp.get("hand", p.tool_hand)
        attach = tuple(grasp.get("attach", (0.0, 0.0, 0.0)))
        if holds(world, mid, hand, obj):
            return []       # the object-level controller does the lifting
        point = world.objects[obj].grasp_world(attach)
        if not reachable(view, s, hand, point):
            raise UnplannableGoal(f"goal {goal.id}: grasp point of {obj} is out of reach of {mid}")
        params = {"hand": hand, "attach": list(attach)}
        return [MovementRequest(Kind.Reach, obj, params), MovementRequest(Kind.Grasp, obj, params)]
    raise ValueError(goal.kind)


# --------------------------------------------------------------------------
# FSM and rules
# --------------------------------------------------------------------------

class BehaviorFsm:
    """Deterministic FSM: at most one successor per (state, event)."""

    def __init__(self, states, initial, transitions, emissions=None):
        self.states = frozenset(states)
        if initial not in self.states:
            raise ValidationError(f"unknown initial state {initial!r}")
        for (a, _), b in transitions.items():
            if a not in self.states or b not in self.states:
                raise ValidationError(f"transition {a!r} -> {b!r} uses an unknown state")
        self.current = initial
        self.transitions = dict(transitions)
        self.emissions = dict(emissions or {})
        self.history = [initial]

    def fire(self, event):
        """Follow ``event``; unknown events leave the state unchanged.  Returns the emissions."""
        nxt = self.transitions.get((self.current, event))
        if nxt is None:
            return None
        self.current = nxt
        self.history.append(nxt)
        return list(self.emissions.get(nxt, ()))

    def copy(self):
        out = BehaviorFsm(self.states, self.current, self.transitions, self.emissions)
        out.history = list(self.history)
        return out


def goal_fsm():
    """The executor every goal runner uses."""
    t = {
        ("idle", "start"): "executing",
        ("executing", "goal_met"): "done",
        ("executing", "replan"): "executing",
        ("executing", "switch"): "executing",
        ("executing", "abort"): "aborted",
        ("executing", "fallen"): "aborted",
        ("idle", "abort"): "aborted",
        ("done", "start"): "executing",
    }
    return BehaviorFsm({"idle", "executing", "done", "aborted"}, "idle", t)


class Action(enum.Enum):
    Replan = "Replan"
    Abort = "Abort"
    InsertMovement = "InsertMovement"
    SwitchGoal = "SwitchGoal"


def _field(event, key):
    if key in ("event", "manikin"):
        return event.get(key)
    detail = event.get("detail", {})
    if key == "kind":
        req = detail.get("request") or {}
        return req.get("kind")
    return detail.get(key)


def match_pattern(pattern):
    """Predicate over events: every key of ``pattern`` must equal the event's field."""
    pattern = dict(pattern)
    return lambda event: all(_field(event, k) == v for k, v in pattern.items())


@dataclass(frozen=True, eq=False)
class Rule:
    id: str
    event_pattern: object             # callable(event) -> bool
    action: Action
    priority: int
    request: MovementRequest | None = None   # InsertMovement
    goal: str | None = None                  # SwitchGoal
    pattern: dict | None = None               # source of event_pattern when built from config

    def __post_init__(self):
        object.__setattr__(self, "action", Action(self.action))
        if self.action is Action.InsertMovement and self.request is None:
            raise ValidationError(f"rule {self.id}: InsertMovement needs a request")
        if self.action is Action.SwitchGoal and self.goal is None:
            raise ValidationError(f"rule {self.id}: SwitchGoal needs a goal")

    def matches(self, event):
        return bool(self.event_pattern(event))

    @classmethod
    def from_dict(cls, d, path="rule"):
        try:
            pattern = dict(d["on"])
            action = Action(d["action"])
            priority = d["priority"]
        except KeyError as exc:
            raise ValidationError(f"missing {exc.args[0]!r}", path) from None
        except ValueError:
            raise ValidationError(f"unknown action {d.get('action')!r}", f"{path}.action") from None
        if not isinstance(priority, int) or isinstance(priority, bool):
            raise ValidationError("priority must be an integer", f"{path}.priority")
        req = MovementRequest.from_dict(d["request"]) if "request" in d else None
        return cls(str(d.get("id", path)), match_pattern(pattern), action, priority,
                   request=req, goal=d.get("goal"), pattern=pattern)


def check_rules(rules):
    seen = {}
    for r in rules:
        if r.priority in seen:
            raise ValidationError(f"rules {seen[r.priority]} and {r.id} share priority {r.priority}")
        seen[r.priority] = r.id
    return sorted(rules, key=lambda r: r.priority)


def apply_rules(event, rules, fsm, queue, replan=None, switch=None):
    """Fire the first rule (lowest priority number) that matches ``event``.

    ``replan()`` and ``switch(goal_id)`` supply fresh queues.  Returns
    ``(fsm, queue, rule)`` with ``rule`` None when nothing matched; the
    inputs are never mutated.
    """
    for rule in sorted(rules, key=lambda r: r.priority):
        if not rule.matches(event):
            continue
        fsm = fsm.copy()
        if rule.action is Action.Replan:
            fsm.fire("replan")
            queue = list(replan()) if replan is not None else list(queue)
        elif rule.action is Action.Abort:
            fsm.fire("abort")
            queue = []
        elif rule.action is Action.InsertMovement:
            queue = [rule.request] + list(queue)
        elif rule.action is Action.SwitchGoal:
            fsm.fire("switch")
            queue = list(switch(rule.goal)) if switch is not None else list(queue)
        return fsm, queue, rule
    return fsm, queue, None


# --------------------------------------------------------------------------
# Motion scale
# --------------------------------------------------------------------------

class Scope(enum.IntEnum):
    Hand = 0
    UpperExtremities = 1
    WholeBody = 2


class Extent(enum.IntEnum):
    Local = 0
    Room = 1
    Route = 2


class Strategy(enum.Enum):
    SingleCompositor = "SingleCompositor"
    AugmentedObject = "AugmentedObject"
    Crowd = "Crowd"


@dataclass(frozen=True)
class MotionScalePoint:
    skeleton_scope: Scope
    vh_count: int
    spatiotemporal: Extent
    shared_object: bool = False

    def __post_init__(self):
        if self.vh_count < 1:
            raise ValidationError("vh_count must be at least 1")

    def to_dict(self):
        return {"skeleton_scope": self.skeleton_scope.name, "vh_count": self.vh_count,
                "spatiotemporal": self.spatiotemporal.name, "shared_object": self.shared_object}


def extent_for(distance, th):
    if distance <= th.local_range:
        return Extent.Local
    if distance <= th.room_range:
        return Extent.Room
    return Extent.Route


def scope_for(distance, th):
    if distance <= th.forearm_reach:
        return Scope.Hand
    if distance <= th.standing_reach:
        return Scope.UpperExtremities
    return Scope.WholeBody


def goal_distance(goal, world):
    """How far the goal's work is from its first manikin."""
    m = world.manikins[goal.manikin]
    view, s = world.view(m), m.state
    if goal.kind is GoalKind.MoveTo:
        loc = np.asarray(goal.args["location"], dtype=float)[:2]
        return float(np.linalg.norm(loc - view.root_xy(s)))
    if goal.kind is GoalKind.RemovePart:
        target = world.objects[goal.args["part"]].grasp_world()
    else:
        target = world.objects[goal.args["object"]].grasp_world()
    hand = goal.args.get("hand", view.profile.tool_hand)
    return float(np.linalg.norm(target - view.hand_position(s, hand)))


def classify_motion_scale(goal, world):
    th = world.thresholds
    d = goal_distance(goal, world)
    if goal.kind in (GoalKind.MoveTo, GoalKind.LiftTogether):
        scope = Scope.WholeBody
    else:
        scope = scope_for(d, th)
    count = len(goal.manikins)
    shared = goal.kind is GoalKind.LiftTogether
    if shared:
        mass = world.objects[goal.args["object"]].mass
        count = max(2, count, math.ceil(mass / th.lift_capacity))
    return MotionScalePoint(scope, count, extent_for(d, th), shared)


def select_strategy(p, n_collab=4):
    if p.vh_count == 1:
        return Strategy.SingleCompositor
    if p.shared_object and p.vh_count <= n_collab:
        return Strategy.AugmentedObject
    return Strategy.Crowd


# --------------------------------------------------------------------------
# Runner used by the harness
# --------------------------------------------------------------------------

@dataclass(eq=False)
class GoalRunner:
    """Works through an ordered goal list for one manikin."""
    manikin: str
    goals: list
    rules: list = field(default_factory=list)
    library: dict = field(default_factory=dict)   # goal id -> Goal, for SwitchGoal
    fsm: BehaviorFsm = field(default_factory=goal_fsm)
    index: int = 0
    fired: list = field(default_factory=list)

    def __post_init__(self):
        self.rules = check_rules(self.rules)
        self.goals = list(self.goals)

    @property
    def goal(self):
        return self.goals[self.index] if self.index < len(self.goals) else None

    def _queue_for(self, world, goal):
        return decompose(goal, world, self.manikin)

    def _start(self, world):
        g = self.goal
        while g is not None:
            g = self.goals[self.index] = resolve_goal(g, world)
            queue = self._queue_for(world, g)
            self.fsm.fire("start")
            world.emit(self.manikin, "goal_started", {"goal": g.id, "queue": [r.to_dict() for r in queue]})
            if queue or not goal_satisfied(g, world):
                replace_queue(world, self.manikin, queue, "plan")
                return
            self._finish(world)
            g = self.goal

    def _finish(self, world):
        self.fsm.fire("goal_met")
        world.emit(self.manikin, "goal_done", {"goal": self.goal.id})
        self.index += 1

    def update(self, world, events):
        """Consume one tick's events, then advance the goal FSM."""
        m = world.manikins[self.manikin]
        if self.fsm.current == "aborted":
            return
        for ev in events:
            if ev.get("manikin") != self.manikin or self.fsm.current != "executing":
                continue
            fsm, queue, rule = apply_rules(
                ev, self.rules, self.fsm, m.queue,
                replan=lambda: self._queue_for(world, self.goal),
                switch=lambda gid: self._switch(world, gid))
            if rule is None:
                continue
            self.fired.append((world.time, rule.id))
            world.emit(self.manikin, "rule_fired", {"rule": rule.id, "action": rule.action.value,
                                                    "trigger": ev.get("event")})
            self.fsm = fsm
            if rule.action is Action.InsertMovement:
                if m.cstate.phase is Phase.Executing:
                    m.queue.insert(1, rule.request)
                else:
                    replace_queue(world, self.manikin, queue, rule.id)
            else:
                replace_queue(world, self.manikin, queue, rule.id)
            if self.fsm.current == "aborted":
                world.emit(self.manikin, "goal_aborted", {"goal": self.goal.id, "rule": rule.id})
                return
        if m.cstate.phase is Phase.Fallen and self.fsm.current == "executing":
            self.fsm.fire("fallen")
            world.emit(self.manikin, "goal_aborted", {"goal": self.goal.id, "reason": "fallen"})
            return
        if self.fsm.current in ("idle", "done"):
            if self.goal is not None:
                self._start(world)
            return
        if self.fsm.current == "executing" and not m.queue and m.cstate.phase is Phase.Idle:
            if goal_satisfied(self.goal, world):
                self._finish(world)
                if self.goal is not None:
                    self._start(world)

    def _switch(self, world, gid):
        if gid not in self.library:
            raise ValidationError(f"SwitchGoal to unknown goal {gid!r}")
        g = self.goals[self.index] = resolve_goal(self.library[gid], world)
        return self._queue_for(world, g)

    @property
    def done(self):
        return self.goal is None or self.fsm.current == "aborted"
