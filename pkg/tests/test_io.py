import json
import math

import numpy as np
import pytest

from runaway_lab import io
from runaway_lab.errors import FileFormatError
from runaway_lab.kinetics import run

from conftest import small_bump_config


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    cfg = small_bump_config()
    tr = run(cfg)
    io.write_run(d, tr, {"note": 1.5}, cfg)
    return d, tr


def test_headers_and_precision(run_dir):
    d, tr = run_dir
    lines = (d / "trajectory.csv").read_text().splitlines()
    assert lines[0] == ",".join(io.TRAJECTORY_COLUMNS)
    assert len(lines) == len(tr.t) + 1
    assert (d / "events.csv").read_text().splitlines()[0] == ",".join(io.EVENT_COLUMNS)


def test_round_trip_is_exact(run_dir):
    d, tr = run_dir
    back, doc = io.read_run(d)
    for name in ("t", "xi", "xidot", "xiddot", "F_fric", "n_active", "ledger_p", "ledger_e", "n_steps"):
        assert np.array_equal(getattr(back, name), getattr(tr, name)), name
    assert back.events.tobytes() == tr.events.tobytes()
    assert doc["summary"] == {"note": 1.5}
    assert doc["config"]["fluid"]["rho0"] == 0.1


def test_seventeen_digits_round_trip():
    x = [0.1, 1 / 3, math.pi * 1e-300, 2.0**-1074, 1e308]
    assert [float(io.fmt(v)) for v in x] == x
    assert io.fmt(True) == "1" and io.fmt(np.int64(7)) == "7"


@pytest.mark.parametrize("missing", ["trajectory.csv", "events.csv", "ledger.csv", "summary.json"])
def test_missing_file_named(run_dir, tmp_path, missing):
    d, _ = run_dir
    for f in d.iterdir():
        if f.name != missing:
            (tmp_path / f.name).write_bytes(f.read_bytes())
    with pytest.raises(FileFormatError) as exc:
        io.read_run(tmp_path)
    assert missing in str(exc.value)


def test_bad_header_and_rows(tmp_path):
    p = tmp_path / "trajectory.csv"
    p.write_text("t,x\n1,2\n")
    with pytest.raises(FileFormatError, match="trajectory.csv"):
        io.read_csv(p, io.TRAJECTORY_COLUMNS)
    p.write_text(",".join(io.TRAJECTORY_COLUMNS) + "\n1,2,three\n")
    with pytest.raises(FileFormatError, match="malformed"):
        io.read_csv(p, io.TRAJECTORY_COLUMNS)
    (tmp_path / "summary.json").write_text("{not json")
    with pytest.raises(FileFormatError, match="summary.json"):
        io.read_json(tmp_path / "summary.json")


def test_jsonable_handles_numpy_and_nan(tmp_path):
    io.write_json(tmp_path / "x.json", {"a": np.float64(np.nan), "b": np.arange(3), "c": (np.bool_(True),)})
    assert json.loads((tmp_path / "x.json").read_text()) == {"a": None, "b": [0, 1, 2], "c": [True]}


def test_oracle_table_round_trip(tmp_path):
    rows = [{"V": 5.0, "eta": 0.5, "dv_par": 1e-3, "dv_perp": 0.3, "r_min": 0.5, "delta": 0.3,
             "p_drift_max": 0.3, "ok": True}]
    io.write_oracle(tmp_path / "o.csv", rows)
    back = io.read_oracle(tmp_path / "o.csv")
    assert back["dv_perp"][0] == 0.3 and back["ok"][0] == 1
