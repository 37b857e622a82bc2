import numpy as np
import pytest

from qsslab.diagnostics import (check_condition_one, check_condition_two, check_region_membership,
                                compare_trajectories, default_checkpoints, diagnose_failure, diagnostic_settings)
from qsslab.errors import ComparisonError
from qsslab.manifold import solve_transient_sep
from qsslab.simulators import Termination, Trajectory


def shifted(traj, dt):
    return Trajectory(traj.names, traj.partitions, traj.units, traj.times + dt, traj.W, traj.ZD, [],
                      traj.termination, traj.model)


def test_self_comparison(runs14):
    lt, _ = runs14
    rep = compare_trajectories(lt, lt)
    assert rep.verdict == "both-stable-same-sep"
    assert rep.final_deviation == 0.0 and rep.first_divergence_time is None
    assert max(rep.max_deviation.values()) == 0.0


def test_fourteen_bus_pair_agrees(runs14):
    rep = compare_trajectories(*runs14)
    assert rep.verdict == "both-stable-same-sep"
    assert rep.final_deviation <= 1e-3


def test_disjoint_ranges_rejected(runs14):
    lt, _ = runs14
    with pytest.raises(ComparisonError, match="overlap"):
        compare_trajectories(lt, shifted(lt, 1e4))


def test_membership_of_sep_itself(sys14):
    s0 = sys14.initial_state()
    m = check_region_membership(sys14, s0)
    assert m.verdict == "inside" and m.distance == pytest.approx(0.0, abs=1e-9)
    assert m.sep.type == 0


def test_membership_without_equilibrium_is_inconclusive(sys14):
    s0 = sys14.initial_state()
    # an absurd slow state: the load recovery terms leave no feasible operating point
    zc = s0.zc.copy()
    names = sys14.layout.names("zc")
    for k, n in enumerate(names):
        if n.endswith(".xp"):
            zc[k] = 50.0
    m = check_region_membership(sys14, s0.replace(zc=zc))
    assert m.verdict in ("inconclusive", "outside")
    if m.verdict == "inconclusive":
        assert m.reason.startswith("no-sep")


def test_nine_bus_first_tap_point_inside(sys9, runs9):
    lt, _ = runs9
    ev = lt.structural_events()[0]
    m = check_region_membership(sys9, lt.state(lt.index_at(ev.time)))
    assert m.verdict == "inside"


def test_condition_one_all_inside_on_stable_run(diag14):
    assert diag14.condition_one
    assert all(m.verdict == "inside" for m in diag14.condition_one)
    post = [m for m in diag14.condition_one if m.post_event]
    assert post, "checkpoints after controller events expected"


def test_condition_one_empty_checkpoints(sys14, runs14, caplog):
    assert check_condition_one(sys14, runs14[0], checkpoints=[]) == []
    assert "vacuously" in caplog.text


def test_default_checkpoints_cover_events(runs14):
    lt, _ = runs14
    idx = default_checkpoints(lt, 5.0)
    times = lt.times[idx]
    for e in lt.events:
        if e.structural:
            assert np.any(np.abs(times - e.time) < 1e-9)
    assert np.all(np.diff(idx) > 0)


def test_condition_two_on_stable_run(diag14):
    c2 = diag14.condition_two
    assert c2.passed and c2.samples
    assert all(s.in_gamma_s for s in c2.samples)


def test_condition_two_single_sample(sys14):
    s0 = sys14.initial_state()
    lay = sys14.layout
    parts = ["zc"] * lay.nz + ["x"] * lay.nx + ["y"] * lay.ny + ["zd"] * lay.nd
    names = lay.w_names + lay.names("zd")
    traj = Trajectory(names, parts, ["pu"] * len(names), [0.0], s0.w[None], s0.zd[None], [],
                      Termination("horizon-reached", 0.0), "qss", phase=[1])
    rep = check_condition_two(sys14, traj)
    assert rep.passed and len(rep.samples) == 1


def test_stable_scenario_diagnosis_none(diag14):
    assert diag14.cause == "none"
    assert diag14.divergence.verdict == "both-stable-same-sep"


def test_cause_two_diagnosis(diagc2):
    assert diagc2.divergence.verdict == "full-diverged-qss-stable"
    assert diagc2.cause == "cause-II"
    assert diagc2.evidence["cause-II"]["equilibrium_type"] == 2
    assert diagc2.time <= diagc2.divergence.first_divergence_time


def test_diagnosis_never_none_when_full_model_fails(diagc2, diag9):
    for d in (diagc2, diag9):
        if d.divergence.verdict == "full-diverged-qss-stable":
            assert d.cause != "none"


def test_summary_mentions_cause(diagc2, diag14):
    assert "cause-II" in diagc2.summary()
    assert "Diagnosis: none" in diag14.summary()


def test_inside_verdicts_survive_step_halving(sys14, diag14):
    base = diagnostic_settings(sys14)
    step = 0.5 * 0.002 if base["rollout_step"] is None else 0.5 * base["rollout_step"]
    for m in diag14.condition_one[::4][:3]:
        again = check_region_membership(sys14, m.point, settings={"rollout_step": step})
        assert again.verdict == m.verdict


def test_diagnosis_serializes_deterministically(diag14, diagc2):
    import json

    for d in (diag14, diagc2):
        a = json.dumps(d.to_dict(), sort_keys=True)
        b = json.dumps(d.to_dict(), sort_keys=True)
        assert a == b


def test_unknown_setting_rejected():
    with pytest.raises(ValueError, match="unknown"):
        diagnostic_settings(overrides={"horizon": 3})

