"""Trajectory logs and their file formats.

CSV floats are written with ``repr`` (shortest round-trip form), so reading
a file back gives the exact same doubles.  Entities with fewer coordinates
than the widest one leave the extra cells empty.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import IoError, ParseError


@dataclass(frozen=True)
class Row:
    t: float
    entity: str
    phase: str
    controller: str
    q: tuple
    qd: tuple


@dataclass
class TrajectoryLog:
    rows: list = field(default_factory=list)
    torques: list = field(default_factory=list)   # (t, entity, tau tuple) per manikin tick
    events: list = field(default_factory=list)
    collab: list = field(default_factory=list)    # (t, object, ((manikin, hand, fx, fy, fz), ...))
    summary: dict = field(default_factory=dict)

    def entity(self, eid):
        return [r for r in self.rows if r.entity == eid]

    def entities(self):
        return sorted({r.entity for r in self.rows})

    def torques_of(self, eid):
        return [(t, tau) for t, e, tau in self.torques if e == eid]

    def __eq__(self, other):
        return (isinstance(other, TrajectoryLog) and self.rows == other.rows
                and self.torques == other.torques and self.events == other.events)


def _fmt(x):
    return repr(float(x))


def width(rows):
    return max((len(r.q) for r in rows), default=0)


def csv_header(n):
    return ["t", "entity", "phase", "controller"] + [f"q_{i}" for i in range(n)] + [f"qd_{i}" for i in range(n)]


def rows_to_csv(rows):
    n = width(rows)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_header(n))
    for r in rows:
        pad = [""] * (n - len(r.q))
        w.writerow([_fmt(r.t), r.entity, r.phase, r.controller]
                   + [_fmt(x) for x in r.q] + pad + [_fmt(x) for x in r.qd] + pad)
    return buf.getvalue()


def rows_from_csv(text):
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty trajectory file") from None
    if header[:4] != ["t", "entity", "phase", "controller"] or (len(header) - 4) % 2:
        raise ParseError("unexpected trajectory header")
    n = (len(header) - 4) // 2
    rows = []
    for line, rec in enumerate(reader, start=2):
        if len(rec) != len(header):
            raise ParseError(f"line {line}: expected {len(header)} fields, got {len(rec)}")
        q = tuple(float(x) for x in rec[4:4 + n] if x != "")
        qd = tuple(float(x) for x in rec[4 + n:] if x != "")
        rows.append(Row(float(rec[0]), rec[1], rec[2], rec[3], q, qd))
    return rows


def torques_to_csv(torques):
    n = max((len(tau) for _, _, tau in torques), default=0)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "entity"] + [f"tau_{i}" for i in range(n)])
    for t, e, tau in torques:
        w.writerow([_fmt(t), e] + [_fmt(x) for x in tau] + [""] * (n - len(tau)))
    return buf.getvalue()


def torques_from_csv(text):
    reader = csv.reader(io.StringIO(text))
    next(reader, None)
    return [(float(rec[0]), rec[1], tuple(float(x) for x in rec[2:] if x != "")) for rec in reader]


def events_to_jsonl(events):
    return "".join(json.dumps(e, sort_keys=True) + "\n" for e in events)


def events_from_jsonl(text):
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def collab_to_csv(collab):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "object", "manikin", "hand", "fx", "fy", "fz"])
    for t, obj, forces in collab:
        for mid, hand, fx, fy, fz in forces:
            w.writerow([_fmt(t), obj, mid, hand, _fmt(fx), _fmt(fy), _fmt(fz)])
    return buf.getvalue()


def _write(path, text):
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror}") from None


def export_log(log, fmt, path):
    """Write ``log`` as ``csv`` (trajectory, plus events next to it) or ``jsonl`` (events only).

    For ``csv`` the events go to the same stem with ``.events.jsonl`` and the
    torques to ``.torques.csv``.  Returns the list of files written.
    """
    path = Path(path)
    if fmt == "csv":
        stem = path.with_suffix("")
        files = [path, stem.with_name(stem.name + ".events.jsonl"), stem.with_name(stem.name + ".torques.csv")]
        _write(files[0], rows_to_csv(log.rows))
        _write(files[1], events_to_jsonl(log.events))
        _write(files[2], torques_to_csv(log.torques))
        return files
    if fmt == "jsonl":
        _write(path, events_to_jsonl(log.events))
        return [path]
    raise ValueError(f"unknown format {fmt!r}")


def _read(path):
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror}") from None


def import_log(path):
    """Inverse of ``export_log(log, "csv", path)``; sidecars are optional."""
    path = Path(path)
    stem = path.with_suffix("")
    log = TrajectoryLog(rows=rows_from_csv(_read(path)))
    ev = stem.with_name(stem.name + ".events.jsonl")
    if ev.exists():
        log.events = events_from_jsonl(_read(ev))
    tq = stem.with_name(stem.name + ".torques.csv")
    if tq.exists():
        log.torques = torques_from_csv(_read(tq))
    return log
