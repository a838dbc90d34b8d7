"""Ergonomic analysis: vision cones, reach envelopes, hand distances, energy."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from ..controllers import WorldView
from ..errors import DegenerateCone, UnknownHand, ValidationError
from ..model import State, Transform, kinematics
from ..solver import IkProblem, IkStatus, solve_ik


# --------------------------------------------------------------------------
# Vision
# --------------------------------------------------------------------------

def head_pose(sk, profile, q):
    """Eye frame: the head link rotation placed at the eye point."""
    if profile.head is None:
        raise ValidationError("body profile has no head")
    kin = kinematics(sk, np.asarray(q, dtype=float))
    i = sk.link_idx(profile.head.link)
    return Transform(kin.R[i], kin.R[i] @ profile.head.point + kin.p[i])


def vision_cone_test(pose, half_angle, range_, point, gaze=(1.0, 0.0, 0.0)):
    """True iff ``point`` lies within ``range_`` of the eye and inside the cone.

    ``gaze`` is the viewing direction in the head frame.  Occlusion is not
    modeled.
    """
    if not 0.0 < half_angle < math.pi / 2:
        raise DegenerateCone(f"half angle {half_angle} outside (0, pi/2)")
    if not range_ > 0:
        raise DegenerateCone(f"range {range_} must be positive")
    axis = pose.rotation @ np.asarray(gaze, dtype=float)
    axis = axis / np.linalg.norm(axis)
    v = np.asarray(point, dtype=float) - pose.translation
    d = float(np.linalg.norm(v))
    if d > range_:
        return False
    if d == 0.0:
        return True
    # compare cosines to avoid acos; both sides are exact at the boundary up to rounding
    return float(axis @ v) >= d * math.cos(half_angle)


# --------------------------------------------------------------------------
# Reach envelope
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid:
    lo: tuple
    hi: tuple
    cell: float

    def __post_init__(self):
        lo = tuple(float(x) for x in self.lo)
        hi = tuple(float(x) for x in self.hi)
        if len(lo) != len(hi) or len(lo) not in (2, 3):
            raise ValidationError("grid bounds must both be 2-D or both 3-D")
        if not self.cell > 0 or any(h <= l for l, h in zip(lo, hi)):
            raise ValidationError("grid needs cell > 0 and hi > lo on every axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "cell", float(self.cell))

    @property
    def shape(self):
        return tuple(int(math.ceil(round((h - l) / self.cell, 9))) for l, h in zip(self.lo, self.hi))

    def center(self, idx):
        return np.array([l + (i + 0.5) * self.cell for l, i in zip(self.lo, idx)])

    def index_of(self, point):
        return tuple(int(math.floor((float(p) - l) / self.cell)) for p, l in zip(point, self.lo))

    def cells(self):
        return list(np.ndindex(*self.shape))

    @classmethod
    def parse(cls, text):
        """``"xmin,ymin[,zmin]:xmax,ymax[,zmax]:cell"``."""
        try:
            lo, hi, cell = text.split(":")
            return cls(tuple(float(x) for x in lo.split(",")), tuple(float(x) for x in hi.split(",")), float(cell))
        except ValueError:
            raise ValidationError(f"bad grid spec {text!r}; expected lo:hi:cell") from None


def reach_envelope(sk, q0, hand, grid, plane_z=0.0, damping=0.05, tol=1e-4, max_iters=200, dofs=None,
                   limit_weighting=True):
    """Grid cells whose centers the hand reaches by IK from ``q0``.

    2-D grids lie in the plane ``z = plane_z``.  ``hand`` is a :class:`Hand`.
    Returns a sorted list of index tuples.
    """
    q0 = np.asarray(q0, dtype=float)
    out = []
    for idx in grid.cells():
        c = grid.center(idx)
        target = c if len(c) == 3 else np.array([c[0], c[1], plane_z])
        prob = IkProblem(hand, target, damping=damping, tol=tol, max_iters=max_iters,
                         dofs=dofs, best_effort=False, limit_weighting=limit_weighting)
        if solve_ik(sk, q0, prob).status is IkStatus.Converged:
            out.append(tuple(int(i) for i in idx))
    return out


def envelope_to_json(grid, cells):
    return json.dumps({"lo": list(grid.lo), "hi": list(grid.hi), "cell": grid.cell,
                       "cells": [list(c) for c in cells]}, sort_keys=True)


# --------------------------------------------------------------------------
# Distances and energy
# --------------------------------------------------------------------------

def hand_position(sk, profile, q, hand):
    if hand not in profile.hands:
        raise UnknownHand(f"unknown hand {hand!r}")
    view = WorldView(sk, profile)
    return view.hand_position(State(np.asarray(q, dtype=float), np.zeros(sk.dof)), hand)


def hand_target_distance(sk, profile, source, hand, point, entity=None):
    """Distance from the hand to ``point``.

    ``source`` is a joint vector (returns a float) or a trajectory log, in
    which case the rows of ``entity`` give ``(series, minimum)``.
    """
    point = np.asarray(point, dtype=float)
    if hasattr(source, "rows"):
        rows = source.rows if entity is None else source.entity(entity)
        series = np.array([np.linalg.norm(hand_position(sk, profile, r.q, hand) - point) for r in rows])
        return series, (float(series.min()) if len(series) else math.inf)
    q = source.q if isinstance(source, State) else source
    return float(np.linalg.norm(hand_position(sk, profile, q, hand) - point))


def power_series(log, entity, joints=None):
    """``(t, P)`` with ``P = sum_j |tau_j qd_j|`` per logged tick of ``entity``."""
    qd = {r.t: r.qd for r in log.rows if r.entity == entity}
    ts, ps = [], []
    for t, tau in log.torques_of(entity):
        v = np.asarray(qd[t], dtype=float)
        tau = np.asarray(tau, dtype=float)
        n = len(tau) if joints is None else joints
        ts.append(t)
        ps.append(float(np.sum(np.abs(tau[:n] * v[:n]))))
    return np.array(ts), np.array(ps)


def energy_expenditure(log, entity=None, dt=None, joints=None):
    """Mechanical work magnitude ``sum_ticks sum_joints |tau qd| dt``.

    ``joints`` limits the sum to the first ``joints`` coordinates (the
    actuated ones; free-flyer coordinates come last).  Returns
    ``(total, cumulative series)``; zero for an empty log.
    """
    entities = [entity] if entity is not None else sorted({e for _, e, _ in log.torques})
    total, series = 0.0, np.zeros(0)
    for e in entities:
        t, p = power_series(log, e, joints)
        if not len(t):
            continue
        step = dt if dt is not None else log.summary.get("dt")
        if step is None:
            step = float(t[0]) if len(t) == 1 else float(t[1] - t[0])
        cum = np.cumsum(p * step)
        total += float(cum[-1])
        series = cum if not len(series) else series + cum
    return total, series
