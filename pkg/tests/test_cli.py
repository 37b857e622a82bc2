import io as stdio
import json
import re
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from qsslab.cli import EXIT_MISSING, EXIT_OK, EXIT_SCHEMA, merge, run_cli


def cli(*argv):
    out, err = stdio.StringIO(), stdio.StringIO()
    code = run_cli(list(argv), out, err)
    return code, out.getvalue(), err.getvalue()


def printed_paths(text):
    return [Path(m) for m in re.findall(r"^wrote (.+)$", text, flags=re.M)]


def test_powerflow_writes_table(tmp_path):
    code, out, _ = cli("powerflow", "--case", "cases/ieee9_stressed", "--out", str(tmp_path))
    assert code == EXIT_OK
    paths = printed_paths(out)
    assert paths and all(p.exists() for p in paths)
    lines = paths[0].read_text().splitlines()
    assert lines[0].startswith("bus,kind,vm") and len(lines) == 10


def test_compare_stable_case(tmp_path):
    code, out, _ = cli("compare", "--case", "cases/ieee14_stable", "--out", str(tmp_path))
    assert code == EXIT_OK
    assert "verdict: both-stable-same-sep" in out
    paths = printed_paths(out)
    assert len(paths) == 5 and all(p.exists() for p in paths)
    rep = json.loads((tmp_path / "ieee14_stable.divergence.json").read_text())
    assert rep["verdict"] == "both-stable-same-sep"


def test_simulate_toy(tmp_path):
    code, out, _ = cli("simulate", "--model", "qss", "--case", "cases/toy_tikhonov", "--out", str(tmp_path))
    assert code == EXIT_OK
    assert (tmp_path / "toy_tikhonov.qss.csv").exists()
    assert (tmp_path / "toy_tikhonov.qss.events.json").exists()


def test_simulate_transient_initial_point(tmp_path):
    code, out, _ = cli("simulate", "--model", "transient", "--case", "cases/ieee14_stable", "--out", str(tmp_path),
                       "--config", '{"scenario": {"transient": {"horizon": 0.5}}}')
    assert code == EXIT_OK
    assert "initial operating point" in out


def test_freeze_flag_needs_transient(tmp_path):
    code, _, err = cli("simulate", "--model", "qss", "--freeze-at-event", "1", "--case", "cases/toy_fold",
                       "--out", str(tmp_path))
    assert code != EXIT_OK and "transient" in err


def test_classify_initial_point(tmp_path):
    code, out, _ = cli("classify-point", "--case", "cases/ieee14_stable", "--out", str(tmp_path))
    assert code == EXIT_OK and "stable-component" in out
    doc = json.loads((tmp_path / "ieee14_stable.classification.json").read_text())
    assert doc["in_gamma_s"] is True


def test_missing_case_exit_code(tmp_path):
    code, _, err = cli("powerflow", "--case", str(tmp_path / "nope.json"), "--out", str(tmp_path))
    assert code == EXIT_MISSING and "not found" in err


def test_schema_error_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema_version": 1, "buses": [{"id": 1, "kind": "nowhere"}], "branches": []}))
    code, _, err = cli("powerflow", "--case", str(bad), "--out", str(tmp_path))
    assert code == EXIT_SCHEMA and "buses[0]" in err


def test_config_override_merged(tmp_path):
    code, out, _ = cli("simulate", "--model", "full", "--case", "cases/toy_tikhonov", "--out", str(tmp_path),
                       "--config", '{"scenario": {"horizon": 0.5}}')
    assert code == EXIT_OK
    assert "at t = 0.5000 s" in out


def test_unknown_flag_rejected():
    with pytest.raises(SystemExit):
        run_cli(["powerflow", "--case", "x", "--colour"], stdio.StringIO(), stdio.StringIO())


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("QSSLAB_OUTPUT_DIR", str(tmp_path / "env"))
    code, _, _ = cli("powerflow", "--case", "cases/ieee14_stable")
    assert code == EXIT_OK
    assert (tmp_path / "env" / "ieee14_stable.powerflow.csv").exists()


def test_merge_examples():
    assert merge({"a": {"b": 1, "c": 2}}, {"a": {"c": 3}}) == {"a": {"b": 1, "c": 3}}
    assert merge({"a": [1, 2]}, {"a": [3]}) == {"a": [3]}


json_leaf = st.one_of(st.integers(), st.text(max_size=3), st.booleans())
json_doc = st.recursive(json_leaf, lambda c: st.dictionaries(st.text(max_size=3), c, max_size=3), max_leaves=8)


@given(base=st.dictionaries(st.text(max_size=3), json_doc, max_size=4),
       over=st.dictionaries(st.text(max_size=3), json_doc, max_size=4))
def test_merge_properties(base, over):
    m = merge(base, over)
    assert set(m) == set(base) | set(over)
    for k, v in over.items():
        if not (isinstance(v, dict) and isinstance(base.get(k), dict)):
            assert m[k] == v
    assert merge(m, over) == m


def test_transient_frozen_after_event(tmp_path):
    code, out, _ = cli("simulate", "--model", "transient", "--freeze-at-event", "1", "--case", "cases/ieee14_stable",
                       "--out", str(tmp_path), "--config", '{"scenario": {"transient": {"horizon": 2.0}}}')
    assert code == EXIT_OK
    assert "controller event 1 (tap" in out and "equilibrium type 0" in out
    assert all(p.exists() for p in printed_paths(out))
