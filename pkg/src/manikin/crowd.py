"""Crowd layer: 2-D particle agents with steering, and groups that form and
dissolve every tick as connected components of a proximity/goal graph.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import pdist, squareform

from .errors import RegionTooSmall, ValidationError


class Behavior(enum.Enum):
    Seek = "Seek"
    Queue = "Queue"
    Evacuate = "Evacuate"


@dataclass(frozen=True)
class CrowdAgent:
    id: str
    position: tuple
    velocity: tuple
    goal: tuple
    max_speed: float
    group: int | None = None

    def __post_init__(self):
        for name in ("position", "velocity", "goal"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != 2:
                raise ValidationError(f"agent {self.id}: {name} must have 2 components")
            object.__setattr__(self, name, v)
        if not self.max_speed > 0:
            raise ValidationError(f"agent {self.id}: max_speed must be positive")


@dataclass(frozen=True)
class CrowdGroup:
    id: int
    members: frozenset
    behavior: Behavior = Behavior.Seek
    age: int = 0

    def __post_init__(self):
        if not self.members:
            raise ValidationError(f"group {self.id} is empty")
        object.__setattr__(self, "members", frozenset(self.members))
        object.__setattr__(self, "behavior", Behavior(self.behavior))


@dataclass(frozen=True)
class CrowdParams:
    w_goal: float = 1.0
    w_sep: float = 2.0
    w_coh: float = 0.3
    r_sep: float = 1.0            # separation acts inside this distance (m)
    r_group: float = 2.0          # grouping radius (m)
    goal_tol: float = 1.0         # goals closer than this are compatible (m)
    tau: float = 0.1              # velocity relaxation time (s)
    slow_radius: float = 0.3      # arrival slow-down starts here (m)
    bottlenecks: tuple = ()       # ((x, y), ...)
    bottleneck_radius: float = 3.0
    dwell: int = 50               # ticks a group must exist before it starts queueing
    queue_speed: float = 0.5      # speed factor while queueing
    default_behavior: Behavior = Behavior.Seek

    @classmethod
    def from_dict(cls, d, path="crowd.params"):
        names = {f for f in cls.__dataclass_fields__}
        kw = {}
        for k, v in d.items():
            if k not in names:
                raise ValidationError(f"unknown crowd parameter {k!r}", path)
            if k == "bottlenecks":
                v = tuple(tuple(float(x) for x in b) for b in v)
            elif k == "default_behavior":
                try:
                    v = Behavior(v)
                except ValueError:
                    raise ValidationError(f"unknown behavior {v!r}", f"{path}.{k}") from None
            elif k == "dwell":
                v = int(v)
            else:
                v = float(v)
                if not math.isfinite(v) or v < 0:
                    raise ValidationError("must be a finite non-negative number", f"{path}.{k}")
            kw[k] = v
        out = cls(**kw)
        if out.r_group <= 0 or out.tau <= 0:
            raise ValidationError("r_group and tau must be positive", path)
        return out


# --------------------------------------------------------------------------
# Grouping
# --------------------------------------------------------------------------

def compatibility(agents, r_g, goal_tol):
    """Boolean adjacency: close together and heading to nearby goals."""
    pos = np.array([a.position for a in agents]).reshape(-1, 2)
    goals = np.array([a.goal for a in agents]).reshape(-1, 2)
    if len(agents) < 2:
        return np.zeros((len(agents), len(agents)), dtype=bool)
    near = squareform(pdist(pos)) <= r_g
    same = squareform(pdist(goals)) <= goal_tol
    adj = near & same
    np.fill_diagonal(adj, False)
    return adj


def update_groups(agents, r_g, goal_tol, previous=(), next_id=None, default_behavior=Behavior.Seek):
    """Re-partition ``agents`` into groups.

    A component keeps the id (and behavior and age) of the previous group
    whose members it holds the plurality of; contested components go to the
    previous group with the larger overlap, then the lower id.  Returns
    ``(groups, next_id)`` with groups ordered by their smallest member.
    """
    if not r_g > 0:
        raise ValidationError("grouping radius must be positive")
    agents = sorted(agents, key=lambda a: a.id)
    if next_id is None:
        next_id = max((g.id for g in previous), default=-1) + 1
    if not agents:
        return [], next_id
    ids = [a.id for a in agents]
    n_comp, labels = connected_components(csr_matrix(compatibility(agents, r_g, goal_tol)), directed=False)
    # relabel components by first appearance so the order follows agent ids
    order = {}
    for lab in labels:
        order.setdefault(int(lab), len(order))
    comps = [[] for _ in range(n_comp)]
    for aid, lab in zip(ids, labels):
        comps[order[int(lab)]].append(aid)
    where = {aid: i for i, members in enumerate(comps) for aid in members}

    claims = {}
    for g in sorted(previous, key=lambda g: g.id):
        counts = {}
        for aid in g.members:
            if aid in where:
                counts[where[aid]] = counts.get(where[aid], 0) + 1
        if not counts:
            continue
        best = max(counts.items(), key=lambda kv: (kv[1], -kv[0]))
        comp, overlap = best
        if comp not in claims or overlap > claims[comp][0]:
            claims[comp] = (overlap, g)

    groups = []
    for i, members in enumerate(comps):
        if i in claims:
            old = claims[i][1]
            groups.append(CrowdGroup(old.id, frozenset(members), old.behavior, old.age))
        else:
            groups.append(CrowdGroup(next_id, frozenset(members), default_behavior, 0))
            next_id += 1
    return groups, next_id


def check_partition(agents, groups):
    ids = [a.id for a in agents]
    seen = {}
    for g in groups:
        if not g.members:
            return False
        for aid in g.members:
            if aid in seen:
                return False
            seen[aid] = g.id
    if set(seen) != set(ids):
        return False
    return all(a.group == seen[a.id] for a in agents)


def assign(agents, groups):
    where = {aid: g.id for g in groups for aid in g.members}
    return [replace(a, group=where.get(a.id)) for a in agents]


# --------------------------------------------------------------------------
# Steering
# --------------------------------------------------------------------------

def steering(pos, vel, goals, vmax, anchors, behavior_speed, obstacles, params):
    """Per-agent acceleration (n x 2): goal attraction + separation + cohesion.

    ``anchors`` is each agent's group centroid (its own position when alone).
    """
    p = params
    to_goal = goals - pos
    dist = np.linalg.norm(to_goal, axis=1)
    speed = vmax * behavior_speed * np.minimum(1.0, dist / p.slow_radius)
    unit = np.divide(to_goal, dist[:, None], out=np.zeros_like(to_goal), where=dist[:, None] > 1e-12)
    acc = p.w_goal * (unit * speed[:, None] - vel) / p.tau

    if len(pos) > 1:
        diff = pos[:, None, :] - pos[None, :, :]
        d = np.linalg.norm(diff, axis=2)
        np.fill_diagonal(d, np.inf)
        close = d < p.r_sep
        # push grows without bound as the gap closes
        mag = np.where(close, (p.r_sep / np.maximum(d, 1e-9) - 1.0), 0.0)
        push = (diff / np.where(np.isfinite(d), np.maximum(d, 1e-9), 1.0)[:, :, None]) * mag[:, :, None]
        acc += p.w_sep * (vmax / p.tau)[:, None] * push.sum(axis=1)

    acc += p.w_coh * (anchors - pos)

    for ox, oy, r in obstacles:
        diff = pos - np.array([ox, oy])
        d = np.linalg.norm(diff, axis=1)
        gap = np.maximum(d - r, 1e-3)
        mag = np.where(gap < p.r_sep, p.r_sep / gap - 1.0, 0.0)
        acc += p.w_sep * (vmax / p.tau * mag / np.maximum(d, 1e-9))[:, None] * diff
    return acc


def _clamp(v, vmax):
    s = np.linalg.norm(v, axis=1)
    scale = np.where(s > vmax, vmax / np.where(s > 0, s, 1.0), 1.0)
    return v * scale[:, None]


def crowd_tick(agents, groups, obstacles, dt, params=CrowdParams(), next_id=None):
    """Advance every agent by ``dt`` and regroup.  Returns ``(agents, groups, next_id)``."""
    if not dt > 0:
        raise ValidationError("dt must be positive")
    agents = sorted(agents, key=lambda a: a.id)
    if not agents:
        return [], [], next_id
    p = params
    pos = np.array([a.position for a in agents])
    vel = np.array([a.velocity for a in agents])
    goals = np.array([a.goal for a in agents])
    vmax = np.array([a.max_speed for a in agents])

    by_id = {g.id: g for g in groups}
    index = {a.id: i for i, a in enumerate(agents)}
    centroid = {gid: pos[sorted(index[m] for m in g.members)].mean(axis=0) for gid, g in by_id.items()}
    anchors = np.array([centroid[a.group] if a.group in centroid else pos[i] for i, a in enumerate(agents)])

    # behavior switching happens before steering so the new mode acts this tick
    bn = np.array(p.bottlenecks, dtype=float).reshape(-1, 2)
    new_groups = []
    factor = np.ones(len(agents))
    for gid in sorted(by_id):
        g = by_id[gid]
        near = len(bn) > 0 and float(np.min(np.linalg.norm(bn - centroid[gid], axis=1))) <= p.bottleneck_radius
        beh = g.behavior
        if beh is Behavior.Seek and near and g.age >= p.dwell:
            beh = Behavior.Queue
        elif beh is Behavior.Queue and not near:
            beh = Behavior.Seek
        new_groups.append(CrowdGroup(g.id, g.members, beh, g.age + 1))
        if beh is Behavior.Queue:
            for m in g.members:
                factor[index[m]] = p.queue_speed

    acc = steering(pos, vel, goals, vmax, anchors, factor, obstacles, p)
    vel = _clamp(vel + acc * dt, vmax)
    pos = pos + vel * dt
    moved = [replace(a, position=tuple(pos[i]), velocity=tuple(vel[i])) for i, a in enumerate(agents)]
    groups, next_id = update_groups(moved, p.r_group, p.goal_tol, new_groups, next_id, p.default_behavior)
    return assign(moved, groups), groups, next_id


# --------------------------------------------------------------------------
# Spawning
# --------------------------------------------------------------------------

HEX_DENSITY = math.pi / (2.0 * math.sqrt(3.0))


def spawn_crowd(n, region, goal_region, seed, min_spacing=0.5, max_speed=(1.2, 1.5), attempts=200):
    """``n`` agents uniformly in ``region`` at least ``min_spacing`` apart.

    Regions are ``((xmin, ymin), (xmax, ymax))``.  ``max_speed`` is a value or
    a ``(lo, hi)`` range sampled uniformly.
    """
    if n < 1:
        raise ValidationError("n must be at least 1")
    (x0, y0), (x1, y1) = region
    (gx0, gy0), (gx1, gy1) = goal_region
    if x1 < x0 or y1 < y0 or gx1 < gx0 or gy1 < gy0:
        raise ValidationError("region corners out of order")
    area = (x1 - x0 + min_spacing) * (y1 - y0 + min_spacing)
    if n > 1 and n * math.pi * (min_spacing / 2) ** 2 > HEX_DENSITY * area:
        raise RegionTooSmall(f"{n} agents cannot fit {min_spacing} m apart in {region}")
    rng = np.random.default_rng(seed)
    pts = np.empty((0, 2))
    for _ in range(n * attempts):
        if len(pts) == n:
            break
        c = rng.uniform((x0, y0), (x1, y1))
        if len(pts) == 0 or np.min(np.linalg.norm(pts - c, axis=1)) >= min_spacing:
            pts = np.vstack([pts, c])
    if len(pts) < n:
        raise RegionTooSmall(f"placed only {len(pts)} of {n} agents {min_spacing} m apart")
    goals = rng.uniform((gx0, gy0), (gx1, gy1), size=(n, 2))
    if np.ndim(max_speed) == 0:
        speeds = np.full(n, float(max_speed))
    else:
        speeds = rng.uniform(max_speed[0], max_speed[1], size=n)
    width = max(4, len(str(n - 1)))
    return [CrowdAgent(f"agent:{i:0{width}d}", tuple(pts[i]), (0.0, 0.0), tuple(goals[i]), float(speeds[i]))
            for i in range(n)]
