"""Line-delimited record files for runs, ensembles, and trajectories.

Every file starts with a kind/version line, carries metadata as
`key value` lines, and stores numeric payloads one record per line with
floats printed to 17 significant digits so reading a file back yields
bit-identical values.  The formats are deliberately boring: whitespace
delimited, no quoting, streamable.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .analysis import Ensemble
from .engine import RunResult
from .errors import RecordError

__all__ = [
    "fmt",
    "read_ensemble",
    "read_json",
    "read_run",
    "read_trajectory",
    "write_ensemble",
    "write_json",
    "write_lines",
    "write_run",
    "write_trajectory",
    "write_transmitted",
]

ENSEMBLE_KIND = "ppvc-ensemble 1"
RUN_KIND = "ppvc-run 1"
TRAJ_KIND = "ppvc-traj 1"


def fmt(x: float) -> str:
    """Decimal text for a float that round-trips exactly."""
    return format(float(x), ".17g")


def _parse_header(lines, kind):
    if not lines or lines[0].strip() != kind:
        raise RecordError("expected a '%s' file" % kind)
    meta = {}
    body_start = 1
    for i, line in enumerate(lines[1:], start=1):
        parts = line.split(None, 1)
        if not parts:
            body_start = i + 1
            continue
        if parts[0] in ("run", "final", "state"):
            body_start = i
            break
        meta[parts[0]] = parts[1].strip() if len(parts) > 1 else ""
        body_start = i + 1
    return meta, body_start


def _require(meta, key, path):
    if key not in meta:
        raise RecordError("%s: missing '%s' in header" % (path, key))
    return meta[key]


def write_ensemble(path, ensemble: Ensemble, seed: int) -> None:
    """One line per run: `run <index> <seed> <final coordinates...>`."""
    out = [ENSEMBLE_KIND,
           "digest %s" % ensemble.config_digest,
           "dim %d" % ensemble.dim,
           "runs %d" % ensemble.n_runs,
           "seed %d" % seed]
    for idx, row in enumerate(ensemble.finals):
        out.append("run %d %d %s" % (idx, seed, " ".join(fmt(v) for v in row)))
    _atomic_write(path, "\n".join(out) + "\n")


def read_ensemble(path):
    """Returns (Ensemble, seed)."""
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    meta, start = _parse_header(lines, ENSEMBLE_KIND)
    dim = int(_require(meta, "dim", path))
    runs = int(_require(meta, "runs", path))
    seed = int(_require(meta, "seed", path))
    finals = np.empty((runs, dim))
    count = 0
    for line in lines[start:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] != "run" or len(parts) != 3 + dim:
            raise RecordError("%s: malformed record line %r" % (path, line))
        idx = int(parts[1])
        if not 0 <= idx < runs:
            raise RecordError("%s: run index %d out of range" % (path, idx))
        finals[idx] = [float(v) for v in parts[3:]]
        count += 1
    if count != runs:
        raise RecordError("%s: expected %d records, found %d"
                          % (path, runs, count))
    return Ensemble(finals=finals, config_digest=meta.get("digest", "")), seed


def write_run(path, result: RunResult, config_digest: str = "") -> None:
    """Final normal states of one run, one agent per line."""
    finals = np.asarray(result.final)
    out = [RUN_KIND,
           "digest %s" % config_digest,
           "schedule_digest %s" % result.schedule_digest,
           "seed %d" % result.seed,
           "run_index %d" % result.run_index,
           "dim %d" % finals.shape[1],
           "agents %d" % finals.shape[0],
           "degenerate_centerpoints %d" % result.n_degenerate]
    for i, row in enumerate(finals):
        out.append("final %d %s" % (i, " ".join(fmt(v) for v in row)))
    _atomic_write(path, "\n".join(out) + "\n")


def read_run(path):
    """Returns (finals array, metadata dict)."""
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    meta, start = _parse_header(lines, RUN_KIND)
    dim = int(_require(meta, "dim", path))
    nbar = int(_require(meta, "agents", path))
    finals = np.empty((nbar, dim))
    seen = 0
    for line in lines[start:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] != "final" or len(parts) != 2 + dim:
            raise RecordError("%s: malformed record line %r" % (path, line))
        finals[int(parts[1])] = [float(v) for v in parts[2:]]
        seen += 1
    if seen != nbar:
        raise RecordError("%s: expected %d agents, found %d"
                          % (path, nbar, seen))
    return finals, meta


def _write_states(path, arr, result: RunResult) -> None:
    steps, nbar, dim = arr.shape
    out = [TRAJ_KIND,
           "seed %d" % result.seed,
           "run_index %d" % result.run_index,
           "dim %d" % dim,
           "agents %d" % nbar,
           "steps %d" % steps]
    for t in range(steps):
        for i in range(nbar):
            out.append("state %d %d %s"
                       % (t, i, " ".join(fmt(v) for v in arr[t, i])))
    _atomic_write(path, "\n".join(out) + "\n")


def write_trajectory(path, result: RunResult) -> None:
    """States per (iteration, agent); iteration 0 is the initial state."""
    if result.trajectory is None:
        raise RecordError("run has no retained trajectory")
    _write_states(path, result.trajectory, result)


def write_transmitted(path, result: RunResult) -> None:
    """Transmitted (noise-masked) values per (iteration, agent)."""
    if result.transmitted is None:
        raise RecordError("run has no retained transmitted values")
    _write_states(path, result.transmitted, result)


def read_trajectory(path):
    """Returns (trajectory array (steps, agents, dim), metadata dict)."""
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    meta, start = _parse_header(lines, TRAJ_KIND)
    dim = int(_require(meta, "dim", path))
    nbar = int(_require(meta, "agents", path))
    steps = int(_require(meta, "steps", path))
    traj = np.empty((steps, nbar, dim))
    seen = 0
    for line in lines[start:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] != "state" or len(parts) != 3 + dim:
            raise RecordError("%s: malformed record line %r" % (path, line))
        traj[int(parts[1]), int(parts[2])] = [float(v) for v in parts[3:]]
        seen += 1
    if seen != steps * nbar:
        raise RecordError("%s: expected %d records, found %d"
                          % (path, steps * nbar, seen))
    return traj, meta


def write_lines(path, lines) -> None:
    _atomic_write(path, "\n".join(lines) + "\n")


def write_json(path, obj) -> None:
    _atomic_write(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


def read_json(path):
    with open(path, "r", encoding="ascii") as fh:
        return json.load(fh)


def _atomic_write(path, text) -> None:
    tmp = "%s.tmp.%d" % (path, os.getpid())
    with open(tmp, "w", encoding="ascii") as fh:
        fh.write(text)
    os.replace(tmp, path)
