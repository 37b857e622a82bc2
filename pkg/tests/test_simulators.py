import copy

import numpy as np
import pytest

from qsslab.errors import ConvergenceError, SingularityError
from qsslab.io import parse_case_document
from qsslab.manifold import solve_transient_sep
from qsslab.model import ToySystem, fold_system, tikhonov_system
from qsslab.simulators import (IntegratorConfig, config_for, process_discrete_events, run_long_term, run_qss,
                               run_transient, solve_constraint)


def linear_toy():
    # f = z - x, g = x - y
    res = lambda w, zd: np.array([0.0, w[0] - w[1], w[1] - w[2]])
    jac = lambda w, zd: np.array([[0.0, 0, 0], [1, -1, 0], [0, 1, -1]])
    return ToySystem({"zc": ["z"], "x": ["x"], "y": ["y"]}, res, jac, [2.0, 0.0, 0.0])


def with_ltcs(system, ltcs):
    doc = copy.deepcopy(system.case_document)
    doc["devices"]["ltcs"] = ltcs
    return parse_case_document(doc)


def ltc(name, branch, bus):
    return {"name": name, "branch": branch, "bus": bus, "v0": 0.9, "d": 0.01, "r": 0.05, "r_max": 1.2,
            "r_min": 0.8, "dT0": 30.0, "dTk": 10.0}


def test_solve_constraint_linear_toy():
    x, y = solve_constraint(linear_toy(), [2.0], [], [0.0], [0.0])
    np.testing.assert_allclose([x[0], y[0]], [2.0, 2.0])


def test_solve_constraint_fixed_point_needs_no_steps():
    x, y, it = solve_constraint(linear_toy(), [2.0], [], [2.0], [2.0], return_iterations=True)
    assert it == 0 and x[0] == 2.0 and y[0] == 2.0


def test_solve_constraint_quadratic_branch():
    s = fold_system(z0=4.0, x0=1.0)
    # hand Newton from x = 1: 2.5, 2.05, 2.0006...
    _, y = solve_constraint(s, [4.0], [], [], [1.0])
    assert y[0] == pytest.approx(2.0, abs=1e-12)


def test_solve_constraint_singular_start():
    s = fold_system(z0=4.0, x0=0.0)
    with pytest.raises(SingularityError):
        solve_constraint(s, [4.0], [], [], [0.0])


def test_solve_constraint_no_root():
    s = fold_system(z0=-1.0)
    # damped Newton either stalls or runs into the fold at x = 0
    with pytest.raises((ConvergenceError, SingularityError)):
        solve_constraint(s, [-1.0], [], [], [1.0], max_iterations=20)


def test_qss_tikhonov_closed_form():
    s = tikhonov_system(epsilon=0.01, z0=1.0)
    cfg = IntegratorConfig(step=0.01, horizon=2.0, stop_at_sep=False)
    traj = run_qss(s, config=cfg)
    z, x = traj.column("z"), traj.column("x")
    np.testing.assert_allclose(x, z, atol=1e-10)
    np.testing.assert_allclose(z, np.exp(-traj.times), atol=1e-5)


def test_zero_horizon_single_sample(sys9):
    traj = run_long_term(sys9, config=config_for(sys9, "long_term", {"horizon": 0.0}))
    assert len(traj) == 1
    np.testing.assert_array_equal(traj.W[0], sys9.initial_state().w)


def test_fold_qss_hits_singularity():
    traj = run_qss(fold_system(rate=1.0, z0=1.0), config=IntegratorConfig(step=0.01, horizon=2.0))
    assert traj.termination.status == "singularity"
    assert traj.termination.time == pytest.approx(1.0, abs=0.02)


def test_quiescent_system_has_no_events(sys14):
    s0 = sys14.initial_state()
    zd, changed, records = process_discrete_events(sys14, s0, 0.0)
    assert not changed and records == []
    np.testing.assert_array_equal(zd, s0.zd)


def test_one_tap_step_at_initial_delay(sys9):
    s = with_ltcs(sys9, [ltc("LTCa", "9-6", 6)])
    s0 = s.initial_state()
    zd1, changed, rec = process_discrete_events(s, s0, 0.0)
    assert changed and [r.kind for r in rec] == ["ltc-arm"]
    zd2, _, rec = process_discrete_events(s, s0.replace(zd=zd1), 30.0)
    assert [r.kind for r in rec] == ["tap"]
    tap = s.layout.names("zd").index("LTCa.tap")
    assert zd2[tap] - zd1[tap] == pytest.approx(0.05)  # voltage above band: ratio raised


def test_simultaneous_taps_one_record_each(sys9):
    s = with_ltcs(sys9, [ltc("LTCa", "9-6", 6), ltc("LTCb", "4-5", 5)])
    s0 = s.initial_state()
    zd1, _, _ = process_discrete_events(s, s0, 0.0)
    zd2, _, rec = process_discrete_events(s, s0.replace(zd=zd1), 30.0)
    assert sorted((r.kind, r.device) for r in rec) == [("tap", "LTCa"), ("tap", "LTCb")]
    # both records describe the same atomic transition
    np.testing.assert_array_equal(rec[0].zd_after, rec[1].zd_after)


def test_transient_stays_at_sep(sys14):
    s0 = sys14.initial_state()
    sep = solve_transient_sep(sys14, s0.zc, s0.zd, s0.x, s0.y)
    cfg = config_for(sys14, "transient", {"horizon": 3.0, "stop_at_sep": False})
    traj = run_transient(sys14, sep.zc, sep.zd, sep.x, sep.y, config=cfg)
    assert traj.termination.status == "horizon-reached"
    assert np.max(np.abs(traj.W - traj.W[0])) < 1e-6


def test_transient_keeps_slow_states_frozen(sysc2):
    s0 = sysc2.initial_state()
    x = s0.x.copy()
    x[0] += 0.01
    traj = run_transient(sysc2, s0.zc, s0.zd, x, s0.y, config=config_for(sysc2, "transient", {"horizon": 1.0}))
    zc = traj.partition_slice("zc")
    assert np.all(traj.W[:, zc] == s0.zc)


def test_inconsistent_transient_start_projected(sys14):
    s0 = sys14.initial_state()
    y = s0.y * 1.01
    traj = run_transient(sys14, s0.zc, s0.zd, s0.x, y, config=config_for(sys14, "transient", {"horizon": 0.1}))
    assert traj.norms[0, 2] <= 1e-8


def test_fourteen_bus_runs_converge(runs14):
    lt, qss = runs14
    assert lt.termination.status == "converged-to-sep"
    assert qss.termination.status == "converged-to-sep"


def test_discrete_state_constant_between_events(runs9):
    for traj in runs9:
        change = np.flatnonzero(np.any(np.diff(traj.ZD, axis=0) != 0, axis=1))
        event_times = {round(e.time, 9) for e in traj.events}
        for i in change:
            assert round(traj.times[i + 1], 9) in event_times


def test_qss_voltages_in_band(sys9, runs9):
    _, qss = runs9
    assert qss.termination.status == "converged-to-sep"
    v = sys9.bus_voltage_magnitudes(qss.W[-1])
    assert np.all((v >= 0.95) & (v <= 1.05))


def test_nine_bus_controller_events(runs9):
    lt, _ = runs9
    taps = [e for e in lt.structural_events() if e.kind == "tap"]
    assert len(taps) >= 2
    assert taps[1].time - taps[0].time == pytest.approx(10.0)


def test_cause_two_long_term_diverges(runsc2):
    lt, qss = runsc2
    assert lt.termination.status == "diverged"
    assert not qss.termination.failed


def test_runs_are_deterministic():
    s = tikhonov_system(epsilon=0.05)
    cfg = IntegratorConfig(step=0.01, horizon=1.0)
    assert run_long_term(s, config=cfg) == run_long_term(s, config=cfg)


def test_config_layering(sys14):
    cfg = config_for(sys14, "qss", {"step": 0.2})
    assert cfg.horizon == sys14.scenario.horizon
    assert cfg.step == 0.2 and cfg.jacobian_refresh == "on-event"
    with pytest.raises(ValueError, match="unknown"):
        config_for(sys14, "qss", {"stepp": 0.2})


@pytest.mark.parametrize("kw", [dict(step=0.0), dict(horizon=-1.0), dict(jacobian_refresh="never")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        IntegratorConfig(**kw)
