import math

import numpy as np
import pytest
from scipy.optimize import brentq

from manikin.model import load_body, load_skeleton, reference_humanoid, serial_chain


@pytest.fixture(scope="session")
def arm2():
    return load_skeleton(serial_chain([1.0, 1.0]))


@pytest.fixture(scope="session")
def arm1():
    return load_skeleton(serial_chain([1.0]))


@pytest.fixture(scope="session")
def double_pendulum():
    # planar pendulum swinging in the x-z plane, q = 0 hanging straight down
    return load_skeleton(serial_chain([1.0, 1.0], masses=[1.0, 1.0], axis=(0, 1, 0),
                                      direction=(0, 0, -1), radius=0.02))


@pytest.fixture(scope="session")
def point_pendulum():
    return load_skeleton(serial_chain([1.0], masses=[1.0], axis=(0, 1, 0),
                                      direction=(0, 0, -1), point_mass=True))


@pytest.fixture(scope="session")
def humanoid():
    return reference_humanoid()


@pytest.fixture(scope="session")
def limited_arm():
    return load_body(serial_chain([1.0, 1.0], limits=[[-2 * math.pi, 2 * math.pi], [0.0, math.pi]]))


def random_q(sk, rng, spread=1.0):
    """Random configuration inside the joint limits (free-flyer coordinates drawn too)."""
    lo, hi = sk.lower, sk.upper
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    q = np.zeros(sk.dof)
    q[:sk.n_joints] = mid + spread * half * rng.uniform(-1, 1, sk.n_joints)
    if sk.free_flyer:
        q[sk.n_joints:sk.n_joints + 3] = rng.uniform(-1, 1, 3)
        q[sk.n_joints + 3:] = rng.uniform(-1, 1, 3)
    return q


MID = "manikin:0000"
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def one_manikin_world(sk, prof, q=None, requests=(), objects=None, obstacles=(), dt=1e-3, root=None):
    from manikin.compositor import World, make_manikin
    m = make_manikin(MID, sk, prof, q=q, root=root)
    m.queue = list(requests)
    return World(manikins={MID: m}, objects=dict(objects or {}), obstacles=tuple(obstacles), dt=dt)


def run_ticks(world, seconds, until=None, hook=None):
    """Tick every manikin; returns the time at which ``until(world)`` first held, else None."""
    from manikin.compositor import tick
    start = world.time
    for k in range(int(round(seconds / world.dt))):
        world.time = start + k * world.dt
        for mid in sorted(world.manikins):
            tick(world, mid)
        if hook is not None:
            hook(world)
        if until is not None and until(world):
            world.time = start + (k + 1) * world.dt
            return world.time
    world.time = start + round(seconds / world.dt) * world.dt
    return None


def events(world, name):
    return [e for e in world.events if e["event"] == name]


def cup(position, mass=0.3):
    from manikin.collab import RigidObject
    from manikin.model import Transform
    return RigidObject("cup", mass, np.eye(3) * 1e-3, Transform.from_translation(position))


def catalog_by_name():
    from manikin.controllers import default_catalog
    return {c.name: c for c in default_catalog()}


def at_rest(sk, q):
    from manikin.model import State
    return State(np.asarray(q, dtype=float), np.zeros(sk.dof))


def succeeded(world):
    return bool(events(world, "succeeded"))


def waist_for_com_shift(sk, prof, dx):
    """Waist pitch that moves the COM ground projection by ``dx`` along x."""
    from manikin.controllers import WorldView
    view = WorldView(sk, prof)
    wp = sk.joint_by_name["waist_pitch"]

    def com_x(a):
        q = prof.default_posture.copy()
        q[wp] = a
        return view.com(at_rest(sk, q))[0]

    base = com_x(0.0)
    a = brentq(lambda a: com_x(a) - (base + dx), -1.0, 1.0)
    q = prof.default_posture.copy()
    q[wp] = a
    return q


_RUNS = {}


def scenario_run(name, **overrides):
    """Run a bundled scenario once per session (per override set) and cache the log."""
    from manikin.harness import parse_scenario, run
    key = (name, tuple(sorted(overrides.items())))
    if key not in _RUNS:
        _RUNS[key] = run(parse_scenario(f"{name}.json"), overrides)
    return _RUNS[key]
