"""Command line entry point: ``manikin run|validate|envelope|decompose``.

Exit codes: 0 success, 1 invalid input (parse or validation error), 2 any
other failure during the command.  ``MANIKIN_LOG_LEVEL`` (DEBUG, INFO,
WARNING, ...) sets the diagnostic verbosity on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .behavior import decompose
from .errors import ManikinError, ParseError, ValidationError
from .harness import Grid, build_world, parse_scenario, reach_envelope, run, write_outputs
from .harness.analysis import envelope_to_json

log = logging.getLogger("manikin")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _setup_logging():
    level = os.environ.get("MANIKIN_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def cmd_run(args):
    cfg = parse_scenario(args.scenario)
    overrides = {k: v for k, v in (("seed", args.seed), ("dt", args.dt), ("duration", args.duration))
                 if v is not None}
    out = run(cfg, overrides)
    files = write_outputs(out, args.out)
    for f in files:
        print(f)
    return EXIT_OK


def cmd_validate(args):
    cfg = parse_scenario(args.scenario)
    sim = build_world(cfg)
    print(f"ok {cfg.name}: {len(cfg.manikins)} manikin(s), {len(cfg.objects)} object(s), "
          f"{len(cfg.goals)} goal(s), {len(sim.agents)} crowd agent(s), {cfg.sim.ticks} ticks")
    return EXIT_OK


def _pick_manikin(cfg, sim, mid):
    if mid is None:
        if not cfg.manikins:
            raise ValidationError("scenario has no manikins", "manikins")
        mid = cfg.manikins[0]["id"]
    if mid not in sim.world.manikins:
        raise ValidationError(f"unknown manikin {mid!r}", "--manikin")
    return sim.world.manikins[mid]


def cmd_envelope(args):
    cfg = parse_scenario(args.scenario)
    sim = build_world(cfg)
    m = _pick_manikin(cfg, sim, args.manikin)
    grid = Grid.parse(args.grid)
    hand = m.profile.hand(args.hand)
    cells = reach_envelope(m.sk, m.state.q, hand, grid, plane_z=args.plane_z,
                           dofs=tuple(m.profile.arm_dofs(m.sk, args.hand)))
    text = envelope_to_json(grid, cells)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    log.info("%d of %d cells reachable", len(cells), len(grid.cells()))
    return EXIT_OK


def cmd_decompose(args):
    cfg = parse_scenario(args.scenario)
    sim = build_world(cfg)
    goal = next((g for g in cfg.goals if g.id == args.goal), None)
    if goal is None:
        raise ValidationError(f"unknown goal {args.goal!r}", "--goal")
    queue = decompose(goal, sim.world, args.manikin)
    print(json.dumps([r.to_dict() for r in queue], indent=1))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="manikin", description="Virtual manikin scenario simulation")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario and write trajectory, events and summary")
    r.add_argument("--scenario", required=True)
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--seed", type=int)
    r.add_argument("--dt", type=float)
    r.add_argument("--duration", type=float)
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="parse and check a scenario without running it")
    v.add_argument("--scenario", required=True)
    v.set_defaults(func=cmd_validate)

    e = sub.add_parser("envelope", help="reach envelope of one hand over a grid")
    e.add_argument("--scenario", required=True)
    e.add_argument("--hand", required=True)
    e.add_argument("--grid", required=True, help="xmin,ymin[,zmin]:xmax,ymax[,zmax]:cell")
    e.add_argument("--manikin", help="manikin id (default: the first one)")
    e.add_argument("--plane-z", type=float, default=0.0, help="height of a 2-D grid")
    e.add_argument("--out", help="write the JSON here instead of stdout")
    e.set_defaults(func=cmd_envelope)

    d = sub.add_parser("decompose", help="print the movement queue a goal expands to")
    d.add_argument("--scenario", required=True)
    d.add_argument("--goal", required=True)
    d.add_argument("--manikin", help="manikin id (default: the goal's first manikin)")
    d.set_defaults(func=cmd_decompose)
    return p


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ValidationError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ManikinError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
