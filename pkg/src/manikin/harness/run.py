"""The global tick loop.

Order inside one tick: scheduled actions, behavior layer, compositor ticks
in manikin id order, augmented-object groups, crowd, logging.  Nothing here
reads a clock or an unseeded generator, so a config and seed fully
determine the output bytes.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from ..behavior import GoalKind, goal_satisfied
from ..collab import GraspPoint, augment, collab_tick
from ..compositor import inject_disturbance, inject_failure, tick
from ..crowd import assign, check_partition, crowd_tick, update_groups
from ..errors import ManikinError, SimulationError
from ..model import Transform
from .analysis import energy_expenditure
from .log import Row, TrajectoryLog, collab_to_csv, export_log
from .scenario import build_world

log = logging.getLogger(__name__)


def _apply_scheduled(sim, entry):
    world = sim.world
    mid = entry["manikin"]
    if entry["action"] == "impulse":
        inject_disturbance(world, mid, entry["impulse"])
    elif entry["action"] == "fail":
        if not inject_failure(world, mid, "injected"):
            world.emit(mid, "injection_skipped", {"reason": "no active controller"})
    else:
        world.manikins[mid].queue.append(entry["request"])
        world.emit(mid, "request_queued", {"request": entry["request"].to_dict()})


def _collab_step(sim, out, t):
    world = sim.world
    cfg = sim.config
    gains = cfg.collab.get("gains")
    weights = cfg.collab.get("weights")
    for oid in sorted(world.shared_objects):
        holders = sorted(world.holders(oid))
        if not holders:
            continue
        obj = world.objects[oid]
        grasps = []
        for mid, hand in holders:
            att = world.manikins[mid].attachments[hand]
            point = att.point if att.point is not None else tuple(att.rel.inverse().translation)
            grasps.append(GraspPoint(mid, hand, tuple(point)))
        # a lift starts once everybody named in the goal holds the object
        for g in cfg.goals:
            if g.kind is GoalKind.LiftTogether and g.args["object"] == oid:
                if all(any(h[0] == mid for h in holders) for mid in g.manikins):
                    target = np.asarray(g.args["target"], dtype=float)
                    if not np.array_equal(sim.collab_targets[oid].translation, target):
                        sim.collab_targets[oid] = Transform(sim.collab_targets[oid].rotation, target)
                        world.emit(g.manikin, "lift_started", {"goal": g.id, "object": oid})
        kw = {"gravity": world.gravity, "dt": world.dt}
        if gains is not None:
            kw["gains"] = gains
        if weights is not None:
            kw["weights"] = [float(weights.get(mid, 1.0)) for mid, _ in holders]
        ao = augment(obj, grasps)
        res = collab_tick(world.manikins, [mid for mid, _ in holders], ao, sim.collab_targets[oid], **kw)
        world.objects[oid] = res.object
        for ev in res.events:
            world.emit(holders[0][0], ev["event"], ev["detail"])
        forces = tuple((g.manikin, g.hand) + tuple(float(x) for x in res.forces[3 * i:3 * i + 3])
                       for i, g in enumerate(ao.grasps))
        out.collab.append((t, oid, forces))


def _crowd_step(sim):
    p = sim.config.crowd["params"]
    sim.agents, sim.groups, sim.next_group = crowd_tick(
        sim.agents, sim.groups, sim.world.obstacles, sim.world.dt, p, sim.next_group)
    return check_partition(sim.agents, sim.groups)


def _log_tick(sim, out, t):
    entries = []
    for mid, m in sim.world.manikins.items():
        ctrl = m.controller(m.cstate.active).name if m.cstate.active is not None else ""
        entries.append(Row(t, mid, m.cstate.phase.value, ctrl,
                           tuple(float(x) for x in m.state.q), tuple(float(x) for x in m.state.qd)))
    if sim.agents:
        beh = {g.id: g.behavior.value for g in sim.groups}
        for a in sim.agents:
            entries.append(Row(t, a.id, beh.get(a.group, ""), f"group:{a.group}", a.position, a.velocity))
    entries.sort(key=lambda r: r.entity)
    out.rows.extend(entries)
    for mid in sorted(sim.world.manikins):
        out.torques.append((t, mid, tuple(float(x) for x in sim.world.manikins[mid].last_tau)))


def run(cfg, overrides=None, sim_hook=None):
    """Simulate ``cfg`` for its full duration and return the trajectory log.

    ``overrides`` may set ``seed``, ``dt`` and ``duration``.  ``sim_hook(sim, k)``
    is called after every tick (tests use it to inspect live state).
    """
    cfg = cfg.with_overrides(**(overrides or {}))
    sim = build_world(cfg)
    world = sim.world
    dt, n = cfg.sim.dt, cfg.sim.ticks
    out = TrajectoryLog()
    for gid, (point, strategy) in sim.strategies.items():
        goal = next(g for g in cfg.goals if g.id == gid)
        world.emit(goal.manikin, "strategy", {"goal": gid, "scale": point.to_dict(), "strategy": strategy.value})
    partition_ok = True
    if sim.agents:
        p = cfg.crowd["params"]
        sim.groups, sim.next_group = update_groups(sim.agents, p.r_group, p.goal_tol, (), 0, p.default_behavior)
        sim.agents = assign(sim.agents, sim.groups)

    schedule, si, cursor = cfg.schedule, 0, 0
    log.info("running %s: %d ticks of %g s, %d manikin(s), %d agent(s)",
             cfg.name, n, dt, len(world.manikins), len(sim.agents))
    for k in range(n):
        world.time = k * dt
        try:
            while si < len(schedule) and schedule[si]["t"] <= world.time + 0.5 * dt:
                _apply_scheduled(sim, schedule[si])
                si += 1
            batch = world.events[cursor:]
            cursor = len(world.events)
            for mid in sorted(sim.runners):
                sim.runners[mid].update(world, batch)
            for mid in sorted(world.manikins):
                tick(world, mid)
            t = (k + 1) * dt
            _collab_step(sim, out, t)
            if sim.agents:
                partition_ok &= _crowd_step(sim)
        except ManikinError as exc:
            raise SimulationError(k, world.time, exc) from exc
        _log_tick(sim, out, t)
        if sim_hook is not None:
            sim_hook(sim, k)
    world.time = n * dt
    out.events = [_plain(e) for e in world.events]
    out.summary = _summary(sim, out, partition_ok)
    out.sim = sim
    return out


def _plain(x):
    """Events as JSON-ready builtins (numpy scalars and arrays converted)."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, np.generic):
        return x.item()
    return x


def _summary(sim, out, partition_ok):
    cfg, world = sim.config, sim.world
    s = {"scenario": cfg.name, "seed": cfg.sim.seed, "dt": cfg.sim.dt, "duration": cfg.sim.duration,
         "ticks": cfg.sim.ticks, "entities": out.entities(), "rows": len(out.rows)}
    final, torque_max, energy = {}, {}, {}
    for mid in sorted(world.manikins):
        m = world.manikins[mid]
        final[mid] = {"phase": m.cstate.phase.value, "queue": len(m.queue), "blocked": m.blocked,
                      "activation_violations": m.stats["activation_violations"],
                      "holding": {h: a.object for h, a in sorted(m.attachments.items())}}
        taus = np.array([tau for _, tau in out.torques_of(mid)])
        names = [j.name for j in m.sk.joints]
        torque_max[mid] = {nm: float(np.max(np.abs(taus[:, i]))) for i, nm in enumerate(names)} if len(taus) else {}
        energy[mid] = energy_expenditure(out, mid, cfg.sim.dt, m.sk.n_joints)[0]
    s["final"] = final
    s["torque_max"] = torque_max
    s["energy"] = energy
    s["goals"] = {}
    for g in cfg.goals:
        runner = sim.runners[g.manikin]
        live = next((x for x in runner.goals if x.id == g.id), g)
        s["goals"][g.id] = {"kind": g.kind.value, "satisfied": bool(goal_satisfied(live, world)),
                            "strategy": sim.strategies[g.id][1].value}
    s["behavior"] = {mid: {"state": r.fsm.current, "rules_fired": [rid for _, rid in r.fired]}
                     for mid, r in sorted(sim.runners.items())}
    if sim.agents:
        s["crowd"] = {"agents": len(sim.agents), "groups": len(sim.groups), "partition_ok": partition_ok}
    return _plain(s)


def write_outputs(out, directory):
    """trajectory.csv (+ events/torques sidecars), collab.csv and summary.json."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = export_log(out, "csv", d / "trajectory.csv")
    if out.collab:
        (d / "collab.csv").write_text(collab_to_csv(out.collab))
        files.append(d / "collab.csv")
    (d / "summary.json").write_text(json.dumps(out.summary, sort_keys=True, indent=1) + "\n")
    files.append(d / "summary.json")
    return files
