#!/usr/bin/env python3
"""Regenerate src/manikin/data/humanoid.json.

18 revolute joints (2 trunk, 2 neck, 4 per arm, 3 per leg) on a free-flyer
pelvis.  Segment masses and lengths are round numbers for a ~80 kg adult.
PD gains are frozen from the joint-space inertia at the default posture:
kp = w^2 M_jj, kd = 2 zeta w M_jj.
"""
import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from manikin.model import load_profile, load_skeleton  # noqa: E402
from manikin.solver import mass_matrix  # noqa: E402

OMEGA, ZETA = 12.0, 1.0


def box(m, a, b, c):
    return [m * (b * b + c * c) / 12, m * (a * a + c * c) / 12, m * (a * a + b * b) / 12]


def rod(m, length, r):
    across = m * (3 * r * r + length * length) / 12
    return [across, across, 0.5 * m * r * r]


SMALL = [1e-3, 1e-3, 1e-3]

links = [
    dict(id=0, name="pelvis", mass=10.0, com=[0, 0, 0], inertia=box(10.0, 0.2, 0.3, 0.2)),
    dict(id=1, name="waist", mass=0.5, com=[0, 0, 0], inertia=SMALL),
    dict(id=2, name="torso", mass=30.0, com=[0, 0, 0.25], inertia=box(30.0, 0.2, 0.35, 0.5)),
    dict(id=3, name="neck", mass=0.5, com=[0, 0, 0.03], inertia=SMALL),
    dict(id=4, name="head", mass=5.0, com=[0, 0, 0.1], inertia=[0.02, 0.02, 0.02]),
]
joints = [
    dict(id=0, name="waist_pitch", parent_link=0, child_link=1, axis=[0, 1, 0],
         limits=[-0.5, 1.6], rest_offset=[0, 0, 0.1]),
    dict(id=1, name="waist_roll", parent_link=1, child_link=2, axis=[1, 0, 0], limits=[-0.5, 0.5]),
    dict(id=2, name="neck_pitch", parent_link=2, child_link=3, axis=[0, 1, 0],
         limits=[-0.8, 0.8], rest_offset=[0, 0, 0.5]),
    dict(id=3, name="neck_yaw", parent_link=3, child_link=4, axis=[0, 0, 1],
         limits=[-1.3, 1.3], rest_offset=[0, 0, 0.05]),
]

lid, jid = 5, 4
for side, s in (("r", -1.0), ("l", 1.0)):
    roll = [-1.6, 0.3] if side == "r" else [-0.3, 1.6]
    names = ["shoulder1", "shoulder2", "upperarm", "forearm"]
    ids = list(range(lid, lid + 4))
    links += [
        dict(id=ids[0], name=f"{side}_{names[0]}", mass=0.3, com=[0, 0, 0], inertia=SMALL),
        dict(id=ids[1], name=f"{side}_{names[1]}", mass=0.3, com=[0, 0, 0], inertia=SMALL),
        dict(id=ids[2], name=f"{side}_{names[2]}", mass=2.5, com=[0, 0, -0.15],
             inertia=rod(2.5, 0.3, 0.045), child_attach=[0, 0, -0.3]),
        dict(id=ids[3], name=f"{side}_{names[3]}", mass=2.0, com=[0, 0, -0.17],
             inertia=rod(2.0, 0.4, 0.04), child_attach=[0, 0, -0.4]),
    ]
    joints += [
        dict(id=jid, name=f"{side}_shoulder_pitch", parent_link=2, child_link=ids[0],
             axis=[0, 1, 0], limits=[-3.0, 1.0], rest_offset=[0, 0.2 * s, 0.45]),
        dict(id=jid + 1, name=f"{side}_shoulder_roll", parent_link=ids[0], child_link=ids[1],
             axis=[1, 0, 0], limits=roll),
        dict(id=jid + 2, name=f"{side}_shoulder_yaw", parent_link=ids[1], child_link=ids[2],
             axis=[0, 0, 1], limits=[-1.3, 1.3]),
        dict(id=jid + 3, name=f"{side}_elbow", parent_link=ids[2], child_link=ids[3],
             axis=[0, 1, 0], limits=[-2.5, 0.0]),
    ]
    lid, jid = lid + 4, jid + 4

for side, s in (("r", -1.0), ("l", 1.0)):
    roll = [-0.6, 0.4] if side == "r" else [-0.4, 0.6]
    ids = list(range(lid, lid + 3))
    links += [
        dict(id=ids[0], name=f"{side}_hip", mass=0.5, com=[0, 0, 0], inertia=SMALL),
        dict(id=ids[1], name=f"{side}_thigh", mass=8.0, com=[0, 0, -0.2],
             inertia=rod(8.0, 0.45, 0.07), child_attach=[0, 0, -0.45]),
        dict(id=ids[2], name=f"{side}_shank", mass=4.0, com=[0, 0, -0.2],
             inertia=rod(4.0, 0.45, 0.05), child_attach=[0, 0, -0.45]),
    ]
    joints += [
        dict(id=jid, name=f"{side}_hip_pitch", parent_link=0, child_link=ids[0],
             axis=[0, 1, 0], limits=[-1.6, 0.5], rest_offset=[0, 0.1 * s, -0.05]),
        dict(id=jid + 1, name=f"{side}_hip_roll", parent_link=ids[0], child_link=ids[1],
             axis=[1, 0, 0], limits=roll),
        dict(id=jid + 2, name=f"{side}_knee", parent_link=ids[1], child_link=ids[2],
             axis=[0, 1, 0], limits=[0.0, 2.4]),
    ]
    lid, jid = lid + 3, jid + 3

for link in links:
    link["inertia"] = np.diag(link["inertia"]).tolist()

foot = [[x, y, -0.45] for x in (-0.05, 0.10) for y in (-0.04, 0.04)]
profile = {
    "hands": {
        "right": {"link": "r_forearm", "point": [0, 0, -0.4], "base": "r_shoulder_pitch"},
        "left": {"link": "l_forearm", "point": [0, 0, -0.4], "base": "l_shoulder_pitch"},
    },
    "feet": [{"link": "r_shank", "points": foot}, {"link": "l_shank", "points": foot}],
    "head": {"link": "head", "eye": [0.08, 0, 0.1], "gaze": [1, 0, 0]},
    "default_posture": {"r_elbow": -0.3, "l_elbow": -0.3},
    "root_height": 0.95,
    "support": [j["name"] for j in joints if "hip" in j["name"] or "knee" in j["name"]],
    "ground_clamp_height": 0.15,
    "fallen_height": 0.4,
    "tool_hand": "right",
    "free_hand": "left",
    "stand_offset": 0.35,
    "balance": {"kp_com": 40.0, "kd_com": 12.0, "joint_damping": 0.5},
    "gait": {"legs": [["r_hip_pitch", "r_knee"], ["l_hip_pitch", "l_knee"]],
             "hip": 0.3, "knee": 0.5, "stride": 0.6},
}
spec = {"spec": 1, "name": "reference-humanoid-18", "root_link": 0, "free_flyer": True,
        "links": links, "joints": joints, "profile": profile}

sk = load_skeleton(spec)
prof = load_profile(sk, profile)
M = mass_matrix(sk, prof.default_posture)
diag = np.diag(M)[:sk.n_joints]
profile["kp"] = {j.name: round(float(OMEGA ** 2 * d), 4) for j, d in zip(sk.joints, diag)}
profile["kd"] = {j.name: round(float(2 * ZETA * OMEGA * d), 4) for j, d in zip(sk.joints, diag)}

out = ROOT / "src" / "manikin" / "data" / "humanoid.json"
out.write_text(json.dumps(spec, indent=1) + "\n")
print(f"wrote {out} ({sk.n_joints} joints, dof {sk.dof}, mass {sk.total_mass:.1f} kg)")
