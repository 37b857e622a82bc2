"""Checks of the two sufficient conditions for QSS validity and failure attribution.

Condition one: every checkpoint of the long-term run lies inside the
stability region of the transient equilibrium at its frozen slow state.
Membership is tested point-wise by a transient-model rollout.  Condition
two: every sample of the QSS run lies on the stable component of the
constraint manifold.  :func:`diagnose_failure` combines both with a
comparison of the paired trajectories.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dae import assemble_jacobian
from .errors import ComparisonError, QssLabError
from .manifold import ManifoldClassification, TransientSep, classify_constraint_point, solve_transient_sep
from .simulators import Trajectory, config_for, run_transient
from .state import PartitionedState

logger = logging.getLogger(__name__)

DIAGNOSTIC_DEFAULTS = {
    "checkpoint_interval": 5.0,
    "rollout_horizon": 30.0,
    "rollout_step": None,  # the transient engine step unless set
    "rollout_tolerance": 1e-5,
    "separation_tolerance": 0.05,
    "match_tolerance": 1e-3,
    "membership_dwell": 1.0,
    "perturbation": 1e-4,
}


def diagnostic_settings(system=None, overrides=None) -> dict:
    """Defaults, then the case's ``scenario.diagnostics``, then ``overrides``."""
    out = dict(DIAGNOSTIC_DEFAULTS)
    if system is not None:
        out.update(getattr(system.scenario, "diagnostics", {}) or {})
    out.update(overrides or {})
    unknown = sorted(set(out) - set(DIAGNOSTIC_DEFAULTS))
    if unknown:
        raise ValueError(f"unknown diagnostic settings: {', '.join(unknown)}")
    return out


def _f(v):
    return None if v is None else float(v)


# ---------------------------------------------------------------------------
# region membership


@dataclass
class RegionMembership:
    """Outcome of one stability-region test.

    ``verdict`` is ``inside``, ``outside`` or ``inconclusive``; ``reason``
    explains outside and inconclusive verdicts.
    """

    point: PartitionedState
    sep: TransientSep | None
    verdict: str
    reason: str
    horizon: float
    distance: float
    rollout_status: str = ""
    rollout_time: float = 0.0
    event_index: int = 0
    post_event: bool = False
    rollout: Trajectory | None = field(default=None, repr=False, compare=False)

    @property
    def time(self) -> float:
        return float(self.point.t)

    def to_dict(self) -> dict:
        return {
            "time": self.time,
            "verdict": self.verdict,
            "reason": self.reason,
            "horizon": float(self.horizon),
            "distance": float(self.distance),
            "rollout_status": self.rollout_status,
            "rollout_time": float(self.rollout_time),
            "event_index": self.event_index,
            "post_event": self.post_event,
            "sep_type": None if self.sep is None else self.sep.type,
        }


def _fast_distance(system, w, sep_w):
    lay = system.layout
    d = np.abs(w[lay.nz:] - sep_w[lay.nz:])
    return float(np.max(d)) if d.size else 0.0


def check_region_membership(system, point: PartitionedState, config=None, settings=None,
                            keep_rollout: bool = False) -> RegionMembership:
    """Is ``point`` inside the stability region of its transient equilibrium?

    The equilibrium is solved at the point's frozen ``(zc, zd)`` starting
    from its own fast part.  A transient rollout from ``(x, y)`` then decides:
    ``inside`` when it settles on that equilibrium, ``outside`` on divergence,
    a singular constraint or a different resting point, ``inconclusive``
    when the horizon runs out first.
    """
    s = diagnostic_settings(system, settings)
    horizon = float(s["rollout_horizon"])
    try:
        sep = solve_transient_sep(system, point.zc, point.zd, point.x, point.y)
    except QssLabError as exc:
        return RegionMembership(point, None, "inconclusive", f"no-sep: {exc}", horizon, float("nan"))
    cfg = config or config_for(system, "transient")
    changes = {"horizon": horizon, "target_tolerance": float(s["rollout_tolerance"]),
               "target_dwell": float(s["membership_dwell"])}
    if s["rollout_step"] is not None:
        changes["step"] = float(s["rollout_step"])
    cfg = cfg.replace(**changes)
    sep_w = sep.w(system)
    traj = run_transient(system, point.zc, point.zd, point.x, point.y, cfg, target=sep_w, t0=point.t)
    term = traj.termination
    dist = _fast_distance(system, traj.W[-1], sep_w)
    tol = float(s["rollout_tolerance"])
    if term.status == "converged-to-sep":
        if dist <= 10 * tol:
            verdict, reason = "inside", ""
        else:
            verdict, reason = "outside", f"different-attractor: settled {dist:.3e} from the equilibrium"
    elif term.status in ("diverged", "singularity"):
        verdict, reason = "outside", term.reason
    elif term.status == "horizon-reached":
        verdict, reason = "inconclusive", f"horizon: still {dist:.3e} from the equilibrium after {horizon:g} s"
    else:
        verdict, reason = "inconclusive", f"solver: {term.reason}"
    return RegionMembership(point, sep, verdict, reason, horizon, dist, term.status,
                            float(term.time - point.t), rollout=traj if keep_rollout else None)


def _event_count(trajectory, t):
    return sum(1 for e in trajectory.structural_events() if e.time <= t + 1e-9)


def default_checkpoints(trajectory: Trajectory, interval: float = 5.0):
    """Sample indices right after every state-changing event plus every ``interval`` seconds."""
    idx = set()
    for e in trajectory.events:
        if not e.structural:
            continue
        k = trajectory.index_at(e.time)
        if abs(trajectory.times[k] - e.time) < 1e-9:
            idx.add(k)
    if interval and interval > 0 and len(trajectory):
        t0, t1 = trajectory.times[0], trajectory.times[-1]
        for t in np.arange(t0, t1 + 1e-9, interval):
            idx.add(trajectory.index_at(t))
    good = [k for k in sorted(idx) if np.all(np.isfinite(trajectory.W[k]))]
    return good


def check_condition_one(system, trajectory: Trajectory, checkpoints=None, settings=None):
    """Region membership at the checkpoints of a long-term run.

    ``checkpoints`` is a list of sample indices (default: after every
    structural event plus every ``checkpoint_interval`` seconds).  Returns a
    list of :class:`RegionMembership` in time order; the condition holds when
    every entry is ``inside``.
    """
    s = diagnostic_settings(system, settings)
    if len(trajectory) == 0:
        raise ValueError("trajectory has no samples")
    if checkpoints is None:
        checkpoints = default_checkpoints(trajectory, s["checkpoint_interval"])
    if not checkpoints:
        logger.warning("no checkpoints selected; condition one holds vacuously")
        return []
    event_times = {round(e.time, 9) for e in trajectory.structural_events()}
    out = []
    for k in checkpoints:
        m = check_region_membership(system, trajectory.state(k), settings=s)
        m.event_index = _event_count(trajectory, trajectory.times[k])
        m.post_event = round(float(trajectory.times[k]), 9) in event_times
        out.append(m)
    return out


def condition_one_holds(memberships) -> bool:
    return all(m.verdict == "inside" for m in memberships)


# ---------------------------------------------------------------------------
# condition two


@dataclass
class ClassifiedSample:
    time: float
    index: int
    verdict: str
    k: int
    in_gamma_s: bool
    max_real: float
    inverse_condition: float
    event_index: int

    def to_dict(self) -> dict:
        return {"time": self.time, "index": self.index, "verdict": self.verdict, "k": self.k,
                "in_gamma_s": self.in_gamma_s, "max_real": self.max_real,
                "inverse_condition": self.inverse_condition, "event_index": self.event_index}


@dataclass
class ConditionTwoReport:
    """Classification of every QSS-phase sample of a run."""

    samples: list
    first_exit: ClassifiedSample | None
    exit_classification: ManifoldClassification | None = None

    @property
    def passed(self) -> bool:
        return self.first_exit is None

    def counts(self) -> dict:
        out = {}
        for c in self.samples:
            out[c.verdict] = out.get(c.verdict, 0) + 1
        return dict(sorted(out.items()))

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "counts": self.counts(),
            "first_exit": None if self.first_exit is None else self.first_exit.to_dict(),
            "exit_classification": None if self.exit_classification is None
            else self.exit_classification.to_dict(),
            "samples": [c.to_dict() for c in self.samples],
        }


def check_condition_two(system, trajectory: Trajectory) -> ConditionTwoReport:
    """Classify every QSS-phase sample; the condition holds when all are in Γ_s."""
    from .simulators import PHASES

    qss = PHASES.index("qss")
    rows = np.flatnonzero(trajectory.phase == qss)
    if rows.size == 0:
        logger.warning("trajectory has no QSS-phase samples; condition two holds vacuously")
    samples, first, first_cls = [], None, None
    for i in rows:
        w = trajectory.W[i]
        if not np.all(np.isfinite(w)):
            continue
        cls = classify_constraint_point(assemble_jacobian(system, (w, trajectory.ZD[i])))
        ev = cls.schur_eigenvalues if cls.schur_eigenvalues is not None else cls.eigenvalues
        c = ClassifiedSample(float(trajectory.times[i]), int(i), cls.verdict, cls.k, cls.in_gamma_s,
                             float(np.max(ev.real)) if ev.size else float("-inf"),
                             float(cls.inverse_condition), _event_count(trajectory, trajectory.times[i]))
        samples.append(c)
        if first is None and not cls.in_gamma_s:
            first, first_cls = c, cls
    return ConditionTwoReport(samples, first, first_cls)


# ---------------------------------------------------------------------------
# paired comparison

VERDICTS = ("both-stable-same-sep", "both-stable-different-sep", "full-diverged-qss-stable",
            "qss-failed-full-stable", "both-failed")


@dataclass
class DivergenceReport:
    """Deviation between two runs over their shared variables and common time span."""

    verdict: str
    first_divergence_time: float | None
    max_deviation: dict
    final_deviation: float | None
    times: np.ndarray = field(repr=False)
    deviation: np.ndarray = field(repr=False)
    shared: tuple = ()
    tolerance: float = 1e-3

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "first_divergence_time": _f(self.first_divergence_time),
            "final_deviation": _f(self.final_deviation),
            "tolerance": self.tolerance,
            "max_deviation": {k: float(v) for k, v in self.max_deviation.items()},
        }


def _full_first(a, b):
    if a.model != "long-term" and b.model == "long-term":
        return b, a
    return a, b


def compare_trajectories(traj_a: Trajectory, traj_b: Trajectory, tolerance: float = 1e-3,
                         separation_tolerance: float = 0.05) -> DivergenceReport:
    """Compare two runs of the same system (typically long-term and QSS).

    The second run is interpolated at the sample times of the first inside
    their common span.  The divergence time is the first instant the slow
    states separate by more than ``separation_tolerance``, or the end of a
    failed run if earlier.  "Same equilibrium" requires the final states to
    agree within ``tolerance`` on every shared variable.
    """
    full, qss = _full_first(traj_a, traj_b)
    shared = tuple(n for n in full.w_names if n in qss.w_names)
    if not shared:
        raise ComparisonError("the trajectories share no variables")
    lo = max(full.times[0], qss.times[0])
    hi = min(full.times[-1], qss.times[-1])
    if hi < lo:
        raise ComparisonError(f"time ranges do not overlap ([{full.times[0]:g}, {full.times[-1]:g}] "
                              f"vs [{qss.times[0]:g}, {qss.times[-1]:g}])")
    ia = [full.w_names.index(n) for n in shared]
    ib = [qss.w_names.index(n) for n in shared]
    mask = (full.times >= lo - 1e-12) & (full.times <= hi + 1e-12)
    times = full.times[mask]
    A = full.W[mask][:, ia]
    B = qss.interpolate(times)[:, ib]
    dev = np.abs(A - B)
    finite = np.where(np.isfinite(dev), dev, np.inf)
    max_dev = {n: float(np.max(finite[:, j])) if times.size else 0.0 for j, n in enumerate(shared)}

    slow = [j for j, n in enumerate(shared) if full.partitions[full.names.index(n)] == "zc"]
    cols = slow or list(range(len(shared)))
    sep_rows = np.flatnonzero(np.max(finite[:, cols], axis=1) > separation_tolerance) if times.size else []
    onset = float(times[sep_rows[0]]) if len(sep_rows) else None
    for tr in (full, qss):
        if tr.termination.failed:
            onset = tr.termination.time if onset is None else min(onset, tr.termination.time)

    fa, fb = full.termination.failed, qss.termination.failed
    final_dev = None
    if fa and fb:
        verdict = "both-failed"
    elif fa:
        verdict = "full-diverged-qss-stable"
    elif fb:
        verdict = "qss-failed-full-stable"
    else:
        final_dev = float(np.max(np.abs(full.W[-1, ia] - qss.W[-1, ib])))
        verdict = "both-stable-same-sep" if final_dev <= tolerance else "both-stable-different-sep"
        if verdict == "both-stable-same-sep" and onset is not None:
            onset = None if np.max(finite[-1, cols]) <= separation_tolerance else onset
    return DivergenceReport(verdict, onset, max_dev, final_dev, times, dev, shared, tolerance)


# ---------------------------------------------------------------------------
# diagnosis


def _where(k):
    return "before any controller event" if not k else f"after controller event {k}"


@dataclass
class FailureDiagnosis:
    """Attributed cause: ``none``, ``cause-I``, ``cause-II`` or ``indeterminate``."""

    cause: str
    event_index: int | None
    time: float | None
    evidence: dict
    condition_one: list
    condition_two: ConditionTwoReport
    divergence: DivergenceReport

    @property
    def condition_one_passed(self) -> bool:
        return condition_one_holds(self.condition_one)

    def to_dict(self) -> dict:
        return {
            "cause": self.cause,
            "event_index": self.event_index,
            "time": _f(self.time),
            "evidence": self.evidence,
            "condition_one": {"passed": self.condition_one_passed,
                              "checkpoints": [m.to_dict() for m in self.condition_one]},
            "condition_two": self.condition_two.to_dict(),
            "divergence": self.divergence.to_dict(),
        }

    def summary(self) -> str:
        d = self.divergence
        head = (f"Long-term and QSS runs: {d.verdict}"
                + (f", separating at t = {d.first_divergence_time:.4f} s." if d.first_divergence_time is not None
                   else "."))
        c1 = ("Condition one holds at all checkpoints." if self.condition_one_passed else
              f"Condition one fails at {sum(m.verdict != 'inside' for m in self.condition_one)} "
              f"of {len(self.condition_one)} checkpoints.")
        c2 = ("Condition two holds on every QSS sample." if self.condition_two.passed else
              f"Condition two fails first at t = {self.condition_two.first_exit.time:.4f} s "
              f"({self.condition_two.first_exit.verdict}).")
        if self.cause == "none":
            tail = "Diagnosis: none; the QSS approximation is supported."
        elif self.cause == "indeterminate":
            tail = f"Diagnosis: indeterminate ({self.evidence.get('reason', '')})."
        elif self.cause == "cause-I":
            tail = (f"Diagnosis: cause-I; at t = {self.time:.4f} s ({_where(self.event_index)}) the long-term "
                    "state is outside the stability region of the transient equilibrium.")
        else:
            tail = (f"Diagnosis: cause-II; at t = {self.time:.4f} s ({_where(self.event_index)}) the "
                    f"QSS state leaves the stable component (equilibrium type "
                    f"{self.evidence.get('cause-II', {}).get('equilibrium_type')}).")
        return " ".join([head, c1, c2, tail])


def diagnose_failure(system, long_term: Trajectory, qss: Trajectory, settings=None,
                     checkpoints=None) -> FailureDiagnosis:
    """Compare the paired runs, check both conditions and attribute any failure.

    Cause I: a checkpoint whose transient equilibrium is stable lies outside
    its region, no later than the divergence time.  Cause II: the QSS run
    leaves the stable component, or a checkpoint's transient equilibrium is
    unstable.  The earlier violation wins; on a tie cause II is reported and
    both are kept in the evidence.
    """
    s = diagnostic_settings(system, settings)
    div = compare_trajectories(long_term, qss, s["match_tolerance"], s["separation_tolerance"])
    c1 = check_condition_one(system, long_term, checkpoints=checkpoints, settings=s)
    c2 = check_condition_two(system, qss)
    onset = div.first_divergence_time
    evidence = {"verdict": div.verdict}

    cause1 = None
    for m in c1:
        if m.verdict == "outside" and m.sep is not None and m.sep.type == 0:
            cause1 = m
            break
    if cause1 is not None and onset is not None and cause1.time > onset + 1e-9:
        evidence["late_region_exit"] = cause1.to_dict()
        cause1 = None

    cause2 = None  # (time, event index, type, source)
    if c2.first_exit is not None:
        fe = c2.first_exit
        cause2 = (fe.time, fe.event_index, fe.k, "qss-sample", fe.to_dict())
    for m in c1:
        if m.sep is not None and m.sep.type >= 1:
            if cause2 is None or m.time < cause2[0] - 1e-9:
                cause2 = (m.time, m.event_index, m.sep.type, "checkpoint-equilibrium", m.to_dict())
            break

    if cause1 is not None:
        evidence["cause-I"] = {"event_index": cause1.event_index, "time": cause1.time,
                               "membership": cause1.to_dict()}
    if cause2 is not None:
        evidence["cause-II"] = {"event_index": cause2[1], "time": cause2[0], "equilibrium_type": cause2[2],
                                "source": cause2[3], "detail": cause2[4]}

    if cause1 is not None and (cause2 is None or cause1.time < cause2[0] - 1e-9):
        return FailureDiagnosis("cause-I", cause1.event_index, cause1.time, evidence, c1, c2, div)
    if cause2 is not None:
        if cause1 is not None:
            evidence["tie"] = True
        return FailureDiagnosis("cause-II", cause2[1], cause2[0], evidence, c1, c2, div)

    holds = condition_one_holds(c1) and c2.passed
    if holds and div.verdict == "both-stable-same-sep":
        return FailureDiagnosis("none", None, None, evidence, c1, c2, div)
    reasons = []
    if not condition_one_holds(c1):
        bad = [m for m in c1 if m.verdict != "inside"]
        reasons.append(f"{len(bad)} checkpoint(s) not inside (first at t = {bad[0].time:.4f} s: "
                       f"{bad[0].verdict}{', ' + bad[0].reason if bad[0].reason else ''})")
    if div.verdict != "both-stable-same-sep":
        reasons.append(f"trajectory verdict {div.verdict} without a detected cause")
    evidence["reason"] = "; ".join(reasons) or "conditions hold but the runs disagree"
    return FailureDiagnosis("indeterminate", None, None, evidence, c1, c2, div)


__all__ = [
    "ClassifiedSample", "ConditionTwoReport", "DIAGNOSTIC_DEFAULTS", "DivergenceReport", "FailureDiagnosis",
    "RegionMembership", "VERDICTS", "check_condition_one", "check_condition_two", "check_region_membership",
    "compare_trajectories", "condition_one_holds", "default_checkpoints", "diagnose_failure",
    "diagnostic_settings",
]
