"""Scenario files: JSON with a ``spec: 1`` schema field.

:func:`parse_scenario` checks structure and cross references and returns a
:class:`ScenarioConfig`; :func:`build_world` turns a config into live
objects (world, goal runners, crowd) ready for the run loop.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..behavior import Goal, GoalKind, GoalRunner, Rule, Strategy, check_rules, classify_motion_scale, select_strategy
from ..collab import ObjectGains, RigidObject
from ..compositor import World, make_manikin
from ..controllers import Attachment, MovementRequest, Thresholds, WorldView, build_catalog
from ..crowd import CrowdAgent, CrowdParams, spawn_crowd
from ..errors import ParseError, ValidationError
from ..model import DATA_DIR, Hand, State, Transform, load_body, reference_humanoid, serial_chain
from ..solver import GRAVITY, IkProblem, IkStatus, solve_ik

SCHEMA_VERSION = 1
SCENARIO_DIR = DATA_DIR / "scenarios"
ROOT_DOFS = ("root_x", "root_y", "root_z", "root_rx", "root_ry", "root_rz")

_TOP_KEYS = {"spec", "name", "description", "skeletons", "sim", "thresholds", "manikins", "objects",
             "obstacles", "grasps", "goals", "rules", "schedule", "crowd", "collab"}


@dataclass
class SimConfig:
    dt: float = 1e-3
    duration: float = 1.0
    seed: int = 0
    gravity: tuple = tuple(GRAVITY)

    @property
    def ticks(self):
        # guard against 0.01 / 0.001 = 10.000000000000002
        return math.ceil(round(self.duration / self.dt, 9))


@dataclass
class ScenarioConfig:
    name: str
    sim: SimConfig
    thresholds: Thresholds
    skeletons: dict                  # name -> (Skeleton, BodyProfile)
    manikins: list                   # dicts: id, skeleton, root, q, controllers
    objects: list                    # RigidObject
    obstacles: tuple
    grasps: list                     # dicts: object, manikin, hand, attach
    goals: list                      # Goal
    rules: dict                      # manikin id -> [Rule]
    schedule: list                   # dicts with t, manikin and one action
    crowd: dict | None = None        # {"agents": [...], "params": CrowdParams}
    collab: dict = field(default_factory=dict)
    source: str | None = None
    raw: dict | None = field(default=None, repr=False)

    def with_overrides(self, seed=None, dt=None, duration=None):
        sim = replace(self.sim, **{k: v for k, v in (("seed", seed), ("dt", dt), ("duration", duration))
                                  if v is not None})
        _check_sim(sim)
        out = replace(self, sim=sim)
        if seed is not None and self.raw is not None and self.raw.get("crowd"):
            out.crowd = _parse_crowd(self.raw["crowd"], sim.seed)
        return out

    def entity_ids(self):
        ids = [m["id"] for m in self.manikins]
        if self.crowd:
            ids += [a.id for a in self.crowd["agents"]]
        return sorted(ids)


# --------------------------------------------------------------------------
# Small typed readers; each raises ValidationError naming its path
# --------------------------------------------------------------------------

def _num(v, path, positive=False, nonneg=False):
    if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
        raise ValidationError(f"expected a finite number, got {v!r}", path)
    if positive and not v > 0:
        raise ValidationError(f"must be > 0, got {v!r}", path)
    if nonneg and v < 0:
        raise ValidationError(f"must be >= 0, got {v!r}", path)
    return float(v)


def _vecn(v, n, path):
    if not isinstance(v, (list, tuple)) or len(v) != n:
        raise ValidationError(f"expected a list of {n} numbers", path)
    return tuple(_num(x, f"{path}[{i}]") for i, x in enumerate(v))


def _list(d, key, path):
    v = d.get(key, [])
    if not isinstance(v, list):
        raise ValidationError("expected a list", f"{path}{key}")
    return v


def _obj(v, path):
    if not isinstance(v, dict):
        raise ValidationError("expected an object", path)
    return v


def _check_sim(sim):
    if not sim.dt > 0:
        raise ValidationError(f"dt must be > 0, got {sim.dt}", "sim.dt")
    if not sim.duration > 0:
        raise ValidationError(f"duration must be > 0, got {sim.duration}", "sim.duration")


# --------------------------------------------------------------------------
# Sections
# --------------------------------------------------------------------------

def builtin_body(name):
    if name == "humanoid":
        return reference_humanoid()
    if name == "arm2":
        return load_body(serial_chain([1.0, 1.0]))
    if name == "arm2_limited":
        return load_body(serial_chain([1.0, 1.0], limits=[[-2 * math.pi, 2 * math.pi], [0.0, math.pi]]))
    raise ValidationError(f"unknown builtin skeleton {name!r}")


def _parse_skeletons(d, base):
    out = {}
    for name, ref in _obj(d.get("skeletons", {"humanoid": "builtin:humanoid"}), "skeletons").items():
        path = f"skeletons.{name}"
        try:
            if isinstance(ref, str) and ref.startswith("builtin:"):
                out[name] = builtin_body(ref.split(":", 1)[1])
            elif isinstance(ref, str):
                file = (base / ref) if base is not None else Path(ref)
                try:
                    spec = json.loads(file.read_text())
                except OSError as exc:
                    raise ValidationError(f"cannot read skeleton file {ref!r}: {exc.strerror}") from None
                except json.JSONDecodeError as exc:
                    raise ParseError(f"skeleton file {ref!r}: {exc.msg} at line {exc.lineno}", path) from None
                out[name] = load_body(spec)
            elif isinstance(ref, dict):
                out[name] = load_body(ref)
            else:
                raise ValidationError("skeleton must be 'builtin:<name>', a file path or an inline object")
        except ValidationError as exc:
            raise exc.under(path) from None
    if not out:
        raise ValidationError("no skeletons", "skeletons")
    return out


def _parse_manikins(d, skeletons):
    out, seen = [], set()
    for i, md in enumerate(_list(d, "manikins", "")):
        path = f"manikins[{i}]"
        _obj(md, path)
        mid = md.get("id", f"manikin:{i:04d}")
        if not isinstance(mid, str) or not mid:
            raise ValidationError("id must be a non-empty string", f"{path}.id")
        if mid in seen:
            raise ValidationError(f"duplicate manikin id {mid!r}", f"{path}.id")
        seen.add(mid)
        skn = md.get("skeleton", next(iter(skeletons)))
        if skn not in skeletons:
            raise ValidationError(f"unknown skeleton {skn!r}", f"{path}.skeleton")
        sk, _ = skeletons[skn]
        root = md.get("root")
        if root is not None:
            if not isinstance(root, list) or len(root) not in (2, 3):
                raise ValidationError("root must be [x, y] or [x, y, heading]", f"{path}.root")
            root = tuple(_num(x, f"{path}.root[{k}]") for k, x in enumerate(root))
            if not sk.free_flyer:
                raise ValidationError("root placement needs a free-flyer skeleton", f"{path}.root")
        q = _obj(md.get("q", {}), f"{path}.q")
        for name, v in q.items():
            if name not in sk.joint_by_name:
                raise ValidationError(f"unknown joint {name!r}", f"{path}.q.{name}")
            _num(v, f"{path}.q.{name}")
        ctrl = md.get("controllers")
        if ctrl is not None:
            try:
                build_catalog(ctrl)
            except ValidationError as exc:
                raise exc.under(path) from None
        out.append({"id": mid, "skeleton": skn, "root": root, "q": dict(q), "controllers": ctrl})
    return out


def _parse_objects(d):
    out, seen = [], set()
    for i, od in enumerate(_list(d, "objects", "")):
        path = f"objects[{i}]"
        _obj(od, path)
        oid = od.get("id")
        if not isinstance(oid, str) or not oid:
            raise ValidationError("id must be a non-empty string", f"{path}.id")
        if oid in seen:
            raise ValidationError(f"duplicate object id {oid!r}", f"{path}.id")
        seen.add(oid)
        mass = _num(od.get("mass"), f"{path}.mass", positive=True)
        inertia = od.get("inertia", [1e-3, 1e-3, 1e-3])
        try:
            I = np.array(inertia, dtype=float)
        except (TypeError, ValueError):
            raise ValidationError("inertia must be 3 numbers or a 3x3 matrix", f"{path}.inertia") from None
        if I.shape == (3,):
            I = np.diag(I)
        if I.shape != (3, 3):
            raise ValidationError("inertia must be 3 numbers or a 3x3 matrix", f"{path}.inertia")
        pos = _vecn(od.get("position", [0, 0, 0]), 3, f"{path}.position")
        rot = _vecn(od.get("rotvec", [0, 0, 0]), 3, f"{path}.rotvec")
        grasp = _vecn(od.get("grasp", [0, 0, 0]), 3, f"{path}.grasp")
        try:
            out.append(RigidObject(oid, mass, I, Transform.from_rotvec(rot, pos), grasp=grasp))
        except ValidationError as exc:
            raise exc.under(path) from None
    return out


def _parse_goals(d, manikins, objects):
    out, seen = [], set()
    mids = {m["id"] for m in manikins}
    oids = {o.id for o in objects}
    for i, gd in enumerate(_list(d, "goals", "")):
        path = f"goals[{i}]"
        _obj(gd, path)
        gd = dict(gd)
        gd.setdefault("id", f"goal:{i:04d}")
        g = Goal.from_dict(gd, path)
        if g.id in seen:
            raise ValidationError(f"duplicate goal id {g.id!r}", f"{path}.id")
        seen.add(g.id)
        for mid in g.manikins:
            if mid not in mids:
                raise ValidationError(f"unknown manikin {mid!r}", f"{path}.manikins")
        for key in ("part", "tool", "object"):
            if key in g.args and g.args[key] not in oids:
                raise ValidationError(f"unknown object {g.args[key]!r}", f"{path}.args.{key}")
        for key in ("location", "place", "target", "extraction"):
            if key in g.args:
                _vecn(g.args[key], 3, f"{path}.args.{key}")
        out.append(g)
    return out


def _parse_rules(d, manikins, goal_ids):
    out = {m["id"]: [] for m in manikins}
    for i, rd in enumerate(_list(d, "rules", "")):
        path = f"rules[{i}]"
        _obj(rd, path)
        rd = dict(rd)
        rd.setdefault("id", f"rule:{i:04d}")
        rule = Rule.from_dict(rd, path)
        if rule.goal is not None and rule.goal not in goal_ids:
            raise ValidationError(f"unknown goal {rule.goal!r}", f"{path}.goal")
        targets = rd.get("manikins", list(out))
        for mid in ([targets] if isinstance(targets, str) else targets):
            if mid not in out:
                raise ValidationError(f"unknown manikin {mid!r}", f"{path}.manikins")
            out[mid].append(rule)
    for mid, rules in out.items():
        check_rules(rules)
    return out


def _parse_grasps(d, manikins, objects, skeletons):
    by_m = {m["id"]: m for m in manikins}
    oids = {o.id for o in objects}
    out, used = [], set()
    for i, gd in enumerate(_list(d, "grasps", "")):
        path = f"grasps[{i}]"
        _obj(gd, path)
        if gd.get("object") not in oids:
            raise ValidationError(f"unknown object {gd.get('object')!r}", f"{path}.object")
        if gd.get("manikin") not in by_m:
            raise ValidationError(f"unknown manikin {gd.get('manikin')!r}", f"{path}.manikin")
        _, prof = skeletons[by_m[gd["manikin"]]["skeleton"]]
        hand = gd.get("hand", prof.tool_hand)
        if hand not in prof.hands:
            raise ValidationError(f"unknown hand {hand!r}", f"{path}.hand")
        if (gd["manikin"], hand) in used:
            raise ValidationError(f"hand {hand!r} of {gd['manikin']} grasps twice", f"{path}.hand")
        used.add((gd["manikin"], hand))
        attach = _vecn(gd.get("attach", [0, 0, 0]), 3, f"{path}.attach")
        out.append({"object": gd["object"], "manikin": gd["manikin"], "hand": hand, "attach": attach})
    return out


def _dof_index(sk, name, path):
    if name in sk.joint_by_name:
        return sk.joint_by_name[name]
    if sk.free_flyer and name in ROOT_DOFS:
        return sk.n_joints + ROOT_DOFS.index(name)
    raise ValidationError(f"unknown dof {name!r}", path)


def _parse_schedule(d, manikins, skeletons):
    by_m = {m["id"]: m for m in manikins}
    out = []
    for i, sd in enumerate(_list(d, "schedule", "")):
        path = f"schedule[{i}]"
        _obj(sd, path)
        t = _num(sd.get("t"), f"{path}.t", nonneg=True)
        mid = sd.get("manikin")
        if mid not in by_m:
            raise ValidationError(f"unknown manikin {mid!r}", f"{path}.manikin")
        actions = [k for k in ("impulse", "request", "fail") if k in sd]
        if len(actions) != 1:
            raise ValidationError("exactly one of impulse, request, fail", path)
        entry = {"t": t, "manikin": mid, "action": actions[0]}
        if "impulse" in sd:
            sk, _ = skeletons[by_m[mid]["skeleton"]]
            imp = np.zeros(sk.dof)
            for name, v in _obj(sd["impulse"], f"{path}.impulse").items():
                imp[_dof_index(sk, name, f"{path}.impulse.{name}")] = _num(v, f"{path}.impulse.{name}")
            entry["impulse"] = imp
        elif "request" in sd:
            try:
                entry["request"] = MovementRequest.from_dict(_obj(sd["request"], f"{path}.request"))
            except (KeyError, ValueError) as exc:
                raise ValidationError(f"bad request: {exc}", f"{path}.request") from None
        out.append(entry)
    return sorted(out, key=lambda e: e["t"])


def _parse_crowd(cd, seed):
    cd = _obj(cd, "crowd")
    params = CrowdParams.from_dict(_obj(cd.get("params", {}), "crowd.params"))
    agents = []
    if "spawn" in cd:
        sp = _obj(cd["spawn"], "crowd.spawn")
        try:
            n = int(sp["n"])
            region = tuple(_vecn(c, 2, f"crowd.spawn.region[{k}]") for k, c in enumerate(sp["region"]))
            goal_region = tuple(_vecn(c, 2, f"crowd.spawn.goal_region[{k}]")
                                for k, c in enumerate(sp["goal_region"]))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"spawn needs n, region and goal_region ({exc})", "crowd.spawn") from None
        speed = sp.get("max_speed", [1.2, 1.5])
        agents += spawn_crowd(n, region, goal_region, seed, float(sp.get("min_spacing", 0.5)),
                              tuple(speed) if isinstance(speed, list) else float(speed))
    for i, ad in enumerate(cd.get("agents", [])):
        path = f"crowd.agents[{i}]"
        agents.append(CrowdAgent(ad.get("id", f"agent:x{i:04d}"), _vecn(ad["position"], 2, f"{path}.position"),
                                 _vecn(ad.get("velocity", [0, 0]), 2, f"{path}.velocity"),
                                 _vecn(ad["goal"], 2, f"{path}.goal"),
                                 _num(ad.get("max_speed", 1.3), f"{path}.max_speed", positive=True)))
    ids = [a.id for a in agents]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate agent id", "crowd.agents")
    return {"agents": agents, "params": params}


def parse_scenario(source):
    """Load and validate a scenario from a path, a JSON string or a dict."""
    base, name = None, "scenario"
    if isinstance(source, dict):
        d = copy.deepcopy(source)
    else:
        text = None
        if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
            path = Path(source)
            if not path.exists() and (SCENARIO_DIR / path).exists():
                path = SCENARIO_DIR / path
            try:
                text = path.read_text()
            except OSError as exc:
                raise ParseError(f"cannot read {source}: {exc.strerror}") from None
            base, name = path.parent, path.stem
        else:
            text = source
        if not text.strip():
            raise ParseError("empty scenario file")
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{exc.msg} at line {exc.lineno} column {exc.colno}") from None
    if not isinstance(d, dict):
        raise ParseError("scenario must be a JSON object")
    if d.get("spec") != SCHEMA_VERSION:
        raise ValidationError(f"unsupported schema version {d.get('spec')!r} (expected {SCHEMA_VERSION})", "spec")
    for key in d:
        if key not in _TOP_KEYS:
            raise ValidationError(f"unknown section {key!r}", key)

    simd = _obj(d.get("sim", {}), "sim")
    sim = SimConfig(
        dt=_num(simd.get("dt", 1e-3), "sim.dt"),
        duration=_num(simd.get("duration", 1.0), "sim.duration"),
        seed=int(simd.get("seed", 0)),
        gravity=_vecn(simd.get("gravity", list(GRAVITY)), 3, "sim.gravity"),
    )
    _check_sim(sim)
    thresholds = Thresholds.from_dict(_obj(d.get("thresholds", {}), "thresholds"))
    skeletons = _parse_skeletons(d, base)
    manikins = _parse_manikins(d, skeletons)
    objects = _parse_objects(d)
    obstacles = tuple(_vecn(o, 3, f"obstacles[{i}]") for i, o in enumerate(_list(d, "obstacles", "")))
    grasps = _parse_grasps(d, manikins, objects, skeletons)
    goals = _parse_goals(d, manikins, objects)
    rules = _parse_rules(d, manikins, {g.id for g in goals})
    schedule = _parse_schedule(d, manikins, skeletons)
    crowd = _parse_crowd(d["crowd"], sim.seed) if d.get("crowd") else None
    collab = _obj(d.get("collab", {}), "collab")
    if "gains" in collab:
        try:
            collab = dict(collab, gains=ObjectGains(**collab["gains"]))
        except TypeError as exc:
            raise ValidationError(str(exc), "collab.gains") from None
    if not manikins and not crowd:
        raise ValidationError("scenario has no manikins and no crowd", "manikins")
    return ScenarioConfig(str(d.get("name", name)), sim, thresholds, skeletons, manikins, objects,
                          obstacles, grasps, goals, rules, schedule, crowd, collab,
                          source=str(source) if not isinstance(source, dict) else None, raw=d)


# --------------------------------------------------------------------------
# Building live objects
# --------------------------------------------------------------------------

def _place_grasp(world, g):
    """Put the hand on its grasp point by IK and weld the object to it."""
    m = world.manikins[g["manikin"]]
    obj = world.objects[g["object"]]
    h = m.profile.hand(g["hand"])
    target = obj.pose.apply(g["attach"])
    prob = IkProblem(Hand(h.link, h.point), target, tol=1e-6, max_iters=500,
                     dofs=tuple(m.profile.arm_dofs(m.sk, g["hand"])), best_effort=False)
    res = solve_ik(m.sk, m.state.q, prob)
    if res.status is not IkStatus.Converged:
        raise ValidationError(f"grasp point {target.tolist()} is out of reach ({res.status.value})",
                              f"grasps[{g['manikin']}/{g['hand']}]")
    m.state = State(res.q, np.zeros(m.sk.dof))
    m.hold_ref = res.q.copy()
    frame = WorldView(m.sk, m.profile).hand_frame(m.state, g["hand"])
    m.attachments[g["hand"]] = Attachment(obj.id, frame.inverse().compose(obj.pose), g["attach"])


@dataclass(eq=False)
class Simulation:
    """Everything a run mutates."""
    config: ScenarioConfig
    world: World
    runners: dict                # manikin id -> GoalRunner
    strategies: dict             # goal id -> (MotionScalePoint, Strategy)
    agents: list
    groups: list
    next_group: int = 0
    collab_targets: dict = field(default_factory=dict)   # object id -> target Transform


def build_world(cfg):
    world = World(thresholds=cfg.thresholds, gravity=np.array(cfg.sim.gravity, dtype=float),
                  dt=cfg.sim.dt, obstacles=cfg.obstacles)
    for md in cfg.manikins:
        sk, prof = cfg.skeletons[md["skeleton"]]
        q = np.array(prof.default_posture, dtype=float)
        for name, v in md["q"].items():
            q[sk.joint_by_name[name]] = v
        catalog = build_catalog(md["controllers"]) if md["controllers"] else None
        world.manikins[md["id"]] = make_manikin(md["id"], sk, prof, q=q, root=md["root"], catalog=catalog)
    for obj in cfg.objects:
        world.objects[obj.id] = obj
    shared = {g["object"] for g in cfg.grasps}
    shared |= {g.args["object"] for g in cfg.goals if g.kind is GoalKind.LiftTogether}
    world.shared_objects = shared
    for g in cfg.grasps:
        _place_grasp(world, g)

    strategies = {}
    goals_of = {mid: [] for mid in world.manikins}
    for g in cfg.goals:
        point = classify_motion_scale(g, world)
        strategy = select_strategy(point, cfg.thresholds.n_collab)
        if strategy is Strategy.Crowd:
            raise ValidationError(f"goal {g.id} needs the crowd strategy; declare it in the crowd section",
                                  f"goals[{g.id}]")
        strategies[g.id] = (point, strategy)
        for mid in g.manikins:
            goals_of[mid].append(g)
    library = {g.id: g for g in cfg.goals}
    runners = {mid: GoalRunner(mid, goals_of[mid], list(cfg.rules.get(mid, [])), library)
               for mid in sorted(world.manikins)}
    agents = list(cfg.crowd["agents"]) if cfg.crowd else []
    sim = Simulation(cfg, world, runners, strategies, agents, [])
    for oid in sorted(shared):
        sim.collab_targets[oid] = world.objects[oid].pose
    return sim


def bundled_scenarios():
    return sorted(SCENARIO_DIR.glob("*.json"))
