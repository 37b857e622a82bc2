import copy
import json
import logging

import numpy as np
import pytest

from qsslab import io
from qsslab.diagnostics import diagnose_failure
from qsslab.errors import CaseError
from qsslab.simulators import Termination, Trajectory
from qsslab.state import EventRecord


def small_trajectory(status="horizon-reached", reason=""):
    ev = EventRecord(0.5, "tap", "LTC1", "LTC1 tap 1.0000 -> 0.9500", np.array([1.0]), np.array([0.95]))
    W = np.array([[1.0, 0.1, 1.0 / 3.0], [0.9, 0.2, 2.0 / 3.0], [0.8, np.pi, 1e-17]])
    return Trajectory(["z", "x", "y", "tap"], ["zc", "x", "y", "zd"], ["pu", "rad", "pu", "pu"],
                      [0.0, 0.5, 1.0], W, [[1.0], [0.95], [0.95]], [ev], Termination(status, 1.0, reason),
                      "long-term", norms=np.full((3, 3), 1e-12), phase=[0, 0, 1], metadata={"k": 1})


def test_list_bundled_cases():
    assert io.list_bundled_cases() == ["cause2_hopf", "ieee14_stable", "ieee9_stressed", "toy_fold",
                                       "toy_tikhonov"]


def test_nine_bus_contents(sys9):
    assert sys9.network.n_bus == 9
    assert len(sys9.machines) == 3 and len(sys9.governors) == 3
    assert all(sys9.machines.has_oxl)
    assert sys9.loads.buses == [5]
    doc = sys9.case_document["devices"]["ltcs"][0]
    assert (doc["v0"], doc["d"], doc["r"], doc["dT0"], doc["dTk"]) == (1.015, 0.015, 0.05, 30.0, 10.0)


def test_fourteen_bus_contents(sys14):
    assert sys14.network.n_bus == 14
    tg_machines = sorted(t["generator"] for t in sys14.case_document["devices"]["governors"])
    assert tg_machines == ["G1", "G3"]
    assert sorted(sys14.loads.buses) == [9, 10, 14]
    assert sys14.case_document["devices"]["ltcs"][0]["v0"] == 1.005


def test_toy_cases_parse():
    t = io.parse_case("toy_tikhonov")
    assert t.epsilon == 0.01 and t.scenario.horizon == 10.0
    f = io.parse_case("cases/toy_fold")
    assert f.layout.names("y") == ("x",)


def test_all_violations_reported(sys9):
    doc = copy.deepcopy(sys9.case_document)
    doc["schema_version"] = 7
    doc["branches"][0]["x"] = "wide"
    doc["devices"]["generators"][1]["H"] = -1.0
    doc["scenario"]["events"][0]["target"] = "no-such-line"
    doc["bogus"] = 1
    with pytest.raises(CaseError) as info:
        io.parse_case_document(doc)
    locs = " ".join(loc for loc, _ in info.value.violations)
    for part in ("schema_version", "branches[0]", "generators[1]", "events[0]", "bogus"):
        assert part in locs
    assert len(info.value.violations) >= 5


def test_unknown_device_kind_named(sys9):
    doc = copy.deepcopy(sys9.case_document)
    doc["devices"]["flux_capacitors"] = [{}]
    with pytest.raises(CaseError, match="flux_capacitors"):
        io.parse_case_document(doc)


def test_static_only_case_warns(sys9, caplog):
    doc = copy.deepcopy(sys9.case_document)
    doc["devices"] = {}
    doc["scenario"]["events"] = []
    with caplog.at_level(logging.WARNING):
        s = io.parse_case_document(doc)
    assert "no dynamic devices" in caplog.text
    assert s.layout.nx == 0


def test_missing_case_file():
    with pytest.raises(FileNotFoundError):
        io.parse_case("cases/does_not_exist")


def test_bad_json(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{ nope", encoding="utf-8")
    with pytest.raises(CaseError, match="invalid JSON"):
        io.parse_case(p)


def test_trajectory_round_trip(tmp_path):
    traj = small_trajectory()
    csv_path, side = io.write_trajectory(traj, tmp_path / "run.csv")
    assert side.name == "run.events.json"
    back = io.read_trajectory(csv_path)
    assert back == traj
    assert back.events[0].to_dict() == traj.events[0].to_dict()
    assert back.metadata == {"k": 1}


def test_csv_layout(tmp_path):
    path, _ = io.write_trajectory(small_trajectory(), tmp_path / "run.csv")
    raw = path.read_bytes()
    assert b"\r\n" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "time,z,x,y,tap"
    assert lines[3].split(",")[2] == "3.1415926535897931"


def test_diverged_termination_survives(tmp_path, sysc2, runsc2, diagc2):
    lt, qss = runsc2
    io.write_trajectory(lt, tmp_path / "lt.csv")
    io.write_trajectory(qss, tmp_path / "qss.csv")
    lt2, qss2 = io.read_trajectory(tmp_path / "lt.csv"), io.read_trajectory(tmp_path / "qss.csv")
    assert lt2.termination == lt.termination and lt2.termination.status == "diverged"
    assert lt2.termination.reason
    again = diagnose_failure(sysc2, lt2, qss2)
    assert json.dumps(again.to_dict(), sort_keys=True) == json.dumps(diagc2.to_dict(), sort_keys=True)


def test_dump_json_is_stable(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    io.dump_json({"b": 1, "a": [1.5, None]}, a)
    io.dump_json({"a": [1.5, None], "b": 1}, b)
    assert a.read_bytes() == b.read_bytes()


def test_output_dir_env(monkeypatch, tmp_path):
    monkeypatch.setenv("QSSLAB_OUTPUT_DIR", str(tmp_path))
    assert io.output_dir() == tmp_path
    assert io.output_dir("x") == io.output_dir("x")
