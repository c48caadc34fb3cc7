"""File formats for run directories.

A run directory holds:

``trajectory.csv``
    t, xi, xidot, xiddot, F_fric, n_active, ledger_p, ledger_e
``ledger.csv``
    t, ledger_p, ledger_e, rel_p, rel_e, n_steps
``events.csv``
    one row per support window, columns :data:`EVENT_COLUMNS`
``summary.json``
    config, run metadata and the run summary

CSV files have a single header line and a fixed column order; floats are
written with 17 significant digits so identical runs give identical bytes.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import FileFormatError

TRAJECTORY_COLUMNS = ("t", "xi", "xidot", "xiddot", "F_fric", "n_active", "ledger_p", "ledger_e")
LEDGER_COLUMNS = ("t", "ledger_p", "ledger_e", "rel_p", "rel_e", "n_steps")
EVENT_COLUMNS = (
    "pid", "ordinal", "tau", "t_exit", "delta", "eta", "sigma",
    "vin_x", "vin_y", "vin_z", "vout_x", "vout_y", "vout_z", "dp_x", "dp_y", "dp_z",
    "r_min", "zeta", "vb_max", "seeded_t", "weight", "truncated",
)
ORACLE_COLUMNS = ("V", "eta", "dv_par", "dv_perp", "r_min", "delta", "p_drift_max", "ok")
INT_COLUMNS = {"n_active", "n_steps", "pid", "ordinal", "truncated", "ok"}


def fmt(x):
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


def write_csv(path, columns, data):
    """Write a dict of equal-length columns (or a list of row dicts)."""
    path = Path(path)
    if isinstance(data, dict):
        n = len(data[columns[0]]) if columns else 0
        rows = ([data[c][i] for c in columns] for i in range(n))
    else:
        rows = ([r[c] for c in columns] for r in data)
    with path.open("w", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def read_csv(path, columns=None):
    """Read a CSV written by :func:`write_csv` into a dict of numpy columns."""
    path = Path(path)
    if not path.is_file():
        raise FileFormatError(f"missing required file {path.name}", path=str(path))
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FileFormatError(f"{path.name} is empty", path=str(path)) from None
        if columns is not None and tuple(header) != tuple(columns):
            raise FileFormatError(f"{path.name}: unexpected header {header}", path=str(path))
        rows = list(reader)
    out = {}
    try:
        for j, name in enumerate(header):
            col = [r[j] for r in rows]
            out[name] = np.array(col, dtype=np.int64 if name in INT_COLUMNS else float) if col else \
                np.zeros(0, dtype=np.int64 if name in INT_COLUMNS else float)
    except (ValueError, IndexError) as exc:
        raise FileFormatError(f"{path.name}: malformed row ({exc})", path=str(path)) from None
    return out


def jsonable(obj):
    """Recursively convert numpy types and non-finite floats for JSON."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_json(path, obj):
    Path(path).write_text(json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n")


def read_json(path):
    path = Path(path)
    if not path.is_file():
        raise FileFormatError(f"missing required file {path.name}", path=str(path))
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path.name}: invalid JSON ({exc})", path=str(path)) from None


# ---------------------------------------------------------------------------
# trajectories and events


def event_columns(events):
    ev = events
    cols = {name: ev[name] for name in ("pid", "ordinal", "tau", "t_exit", "eta", "sigma", "vin_x", "vin_y",
                                         "vin_z", "vout_x", "vout_y", "vout_z", "r_min", "seeded_t", "weight")}
    cols["delta"] = ev["t_exit"] - ev["tau"]
    cols["dp_x"] = ev["vout_x"] - ev["vin_x"]
    cols["dp_y"] = ev["vout_y"] - ev["vin_y"]
    cols["dp_z"] = ev["vout_z"] - ev["vin_z"]
    cols["zeta"] = ev["vb_min"]
    cols["vb_max"] = ev["vb_max"]
    cols["truncated"] = ev["truncated"].astype(np.int64)
    return cols


def events_from_columns(cols):
    from .kinetics import EVENT_DTYPE

    n = len(cols["pid"])
    ev = np.zeros(n, dtype=EVENT_DTYPE)
    for name in EVENT_DTYPE.names:
        if name == "vb_min":
            ev[name] = cols["zeta"]
        elif name == "truncated":
            ev[name] = cols["truncated"].astype(bool)
        else:
            ev[name] = cols[name]
    return ev


def write_run(directory, traj, summary=None, config=None):
    """Write trajectory, ledger, event CSVs and summary JSON into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    tcols = {"t": traj.t, "xi": traj.xi, "xidot": traj.xidot, "xiddot": traj.xiddot, "F_fric": traj.F_fric,
             "n_active": traj.n_active, "ledger_p": traj.ledger_p, "ledger_e": traj.ledger_e}
    write_csv(d / "trajectory.csv", TRAJECTORY_COLUMNS, tcols)
    rp, re = traj.rel_ledgers()
    write_csv(d / "ledger.csv", LEDGER_COLUMNS, {"t": traj.t, "ledger_p": traj.ledger_p, "ledger_e": traj.ledger_e,
                                                 "rel_p": rp, "rel_e": re, "n_steps": traj.n_steps})
    write_csv(d / "events.csv", EVENT_COLUMNS, event_columns(traj.events))
    meta = {k: v for k, v in traj.meta.items() if k != "retired_audit"}
    meta["retired_audit_count"] = len(traj.meta.get("retired_audit", []))
    doc = {"meta": meta, "summary": summary or {}}
    if config is not None:
        from .config import to_dict

        doc["config"] = to_dict(config)
    write_json(d / "summary.json", doc)


def read_run(directory):
    """Rebuild a :class:`Trajectory` from a run directory."""
    from .kinetics import Trajectory

    d = Path(directory)
    if not d.is_dir():
        raise FileFormatError(f"run directory {d} does not exist", path=str(d))
    tc = read_csv(d / "trajectory.csv", TRAJECTORY_COLUMNS)
    lc = read_csv(d / "ledger.csv", LEDGER_COLUMNS)
    ec = read_csv(d / "events.csv", EVENT_COLUMNS)
    doc = read_json(d / "summary.json")
    if "meta" not in doc:
        raise FileFormatError("summary.json: missing 'meta' section", path=str(d / "summary.json"))
    if len(lc["t"]) != len(tc["t"]):
        raise FileFormatError("ledger.csv and trajectory.csv lengths differ", path=str(d / "ledger.csv"))
    traj = Trajectory(tc["t"], tc["xi"], tc["xidot"], tc["xiddot"], tc["F_fric"], tc["n_active"],
                      tc["ledger_p"], tc["ledger_e"], lc["n_steps"], events_from_columns(ec), dict(doc["meta"]))
    return traj, doc


def write_oracle(path, rows):
    write_csv(path, ORACLE_COLUMNS, rows)


def read_oracle(path):
    return read_csv(path, ORACLE_COLUMNS)
