"""Time-domain engines for the long-term, transient and QSS models.

All three share one implicit trapezoidal integrator with Newton inner solves.
They differ only in which residual rows are treated as differential:

=============  ======================  ==================
model          differential rows       algebraic rows
=============  ======================  ==================
long-term      ``h_c`` and ``f``       ``g``
transient      ``f`` (``zc`` frozen)   ``g``
QSS            ``h_c``                 ``f`` and ``g``
=============  ======================  ==================

``zd`` is frozen between event instants.  At an instant, timed network
events are applied first, then every device's discrete map is evaluated on
the same pre-event state, then the algebraic part is re-solved so that the
stored sample is the consistent post-event point.
"""
from __future__ import annotations

import dataclasses
import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import ConvergenceError, SingularityError
from .state import EventRecord, PartitionedState

logger = logging.getLogger(__name__)

TERMINATIONS = ("horizon-reached", "converged-to-sep", "diverged", "newton-failure", "singularity")
PHASES = ("long-term", "qss", "transient")
_T_EPS = 1e-9


@dataclass(frozen=True)
class IntegratorConfig:
    """Settings of one engine run.  Unknown keys are rejected by :meth:`from_dict`."""

    step: float = 0.05
    min_step: float | None = None
    horizon: float = 100.0
    tolerance: float = 1e-8
    max_iterations: int = 12
    jacobian_refresh: str = "on-slow-convergence"
    angle_bound: float = np.pi
    state_bound: float = 5.0
    oscillation_window: float = 1.0
    oscillation_windows: int = 3
    oscillation_growth: float = 1.1
    oscillation_floor: float = 0.05
    sep_tolerance: float = 1e-6
    sep_dwell: float = 10.0
    stop_at_sep: bool = True
    target_tolerance: float = 1e-5
    target_dwell: float = 1.0
    optimal_multiplier: bool = True

    REFRESH_POLICIES = ("every-step", "on-event", "on-slow-convergence")

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step must be positive")
        if not self.horizon >= 0:
            raise ValueError("horizon must be non-negative")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.jacobian_refresh not in self.REFRESH_POLICIES:
            raise ValueError(f"unknown jacobian_refresh {self.jacobian_refresh!r}")
        if self.min_step is None:
            object.__setattr__(self, "min_step", self.step / 64)

    def replace(self, **changes) -> "IntegratorConfig":
        if "step" in changes and "min_step" not in changes:
            changes["min_step"] = None
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, data: dict, base: "IntegratorConfig | None" = None) -> "IntegratorConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown integrator settings: {', '.join(unknown)}")
        return (base or cls()).replace(**data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


DEFAULTS = {
    "long_term": IntegratorConfig(step=0.05),
    "qss": IntegratorConfig(step=0.1, jacobian_refresh="on-event"),
    "transient": IntegratorConfig(step=0.002, horizon=30.0, sep_dwell=2.0),
}


def config_for(system, model: str, overrides: dict | None = None) -> IntegratorConfig:
    """Engine defaults, then the case's settings, then ``overrides``."""
    key = {"full": "long_term", "long-term": "long_term"}.get(model, model)
    cfg = DEFAULTS[key]
    if key != "transient":
        cfg = cfg.replace(horizon=system.scenario.horizon)
    cfg = IntegratorConfig.from_dict(getattr(system.scenario, key, {}) or {}, cfg)
    return IntegratorConfig.from_dict(overrides or {}, cfg)


@dataclass(frozen=True)
class Termination:
    status: str
    time: float
    reason: str = ""

    def __post_init__(self):
        if self.status not in TERMINATIONS:
            raise ValueError(f"unknown termination {self.status!r}")

    @property
    def failed(self) -> bool:
        return self.status in ("diverged", "newton-failure", "singularity")

    def to_dict(self) -> dict:
        return {"status": self.status, "time": float(self.time), "reason": self.reason}

    @classmethod
    def from_dict(cls, d) -> "Termination":
        return cls(d["status"], float(d["time"]), d.get("reason", ""))


class Trajectory:
    """Time-stamped states of one run with its event log and termination.

    Samples are stored as dense arrays: ``W`` (samples x len(w)), ``ZD``
    (samples x len(zd)).  ``norms`` holds the in-run ``(h_c, f, g)`` infinity
    norms at every sample and ``phase`` the model active at each sample.
    """

    def __init__(self, names, partitions, units, times, W, ZD, events, termination,
                 model, norms=None, phase=None, epsilon=1.0, metadata=None):
        self.names = tuple(names)
        self.partitions = tuple(partitions)
        self.units = tuple(units)
        self.times = np.asarray(times, dtype=float)
        self.W = np.asarray(W, dtype=float).reshape(len(self.times), -1)
        self.ZD = np.asarray(ZD, dtype=float).reshape(len(self.times), -1)
        self.events = list(events)
        self.termination = termination
        self.model = model
        ns = len(self.times)
        self.norms = np.full((ns, 3), np.nan) if norms is None else np.asarray(norms, dtype=float).reshape(ns, 3)
        self.phase = np.zeros(ns, dtype=int) if phase is None else np.asarray(phase, dtype=int)
        self.epsilon = epsilon
        self.metadata = dict(metadata or {})
        if ns > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("sample times must be strictly increasing")

    # -- views ----------------------------------------------------------------
    def __len__(self):
        return len(self.times)

    @property
    def w_names(self):
        return tuple(n for n, p in zip(self.names, self.partitions) if p != "zd")

    @property
    def zd_names(self):
        return tuple(n for n, p in zip(self.names, self.partitions) if p == "zd")

    def partition_slice(self, part):
        idx = [i for i, p in enumerate(p for p in self.partitions if p != "zd") if p == part]
        return np.array(idx, dtype=int)

    def state(self, i: int) -> PartitionedState:
        zc = self.W[i, self.partition_slice("zc")]
        x = self.W[i, self.partition_slice("x")]
        y = self.W[i, self.partition_slice("y")]
        return PartitionedState(zc=zc, zd=self.ZD[i], x=x, y=y, t=float(self.times[i]), epsilon=self.epsilon)

    @property
    def samples(self):
        return [(float(t), self.state(i)) for i, t in enumerate(self.times)]

    @property
    def final_state(self) -> PartitionedState:
        return self.state(len(self) - 1)

    def column(self, name) -> np.ndarray:
        if name in self.w_names:
            return self.W[:, self.w_names.index(name)]
        return self.ZD[:, self.zd_names.index(name)]

    def index_at(self, t: float) -> int:
        """Last sample with time <= t."""
        return int(np.clip(np.searchsorted(self.times, t + _T_EPS, side="right") - 1, 0, len(self) - 1))

    def interpolate(self, times) -> np.ndarray:
        """Linear interpolation of ``w`` at ``times`` (rows)."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        out = np.empty((times.size, self.W.shape[1]))
        for j in range(self.W.shape[1]):
            out[:, j] = np.interp(times, self.times, self.W[:, j])
        return out

    def structural_events(self):
        """Controller actions (tap moves, limiter activation); event ``k`` is entry ``k - 1``."""
        return [e for e in self.events if e.structural and e.kind in ("tap", "oxl-activate")]

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (self.names == other.names and self.partitions == other.partitions
                and self.units == other.units and np.array_equal(self.times, other.times)
                and np.array_equal(self.W, other.W) and np.array_equal(self.ZD, other.ZD)
                and [e.to_dict() for e in self.events] == [e.to_dict() for e in other.events]
                and self.termination == other.termination and self.model == other.model
                and np.array_equal(self.norms, other.norms, equal_nan=True)
                and np.array_equal(self.phase, other.phase))


# ---------------------------------------------------------------------------
# constraint solve


def _lu(M):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lu, piv = sla.lu_factor(M, check_finite=False)
    d = np.abs(np.diag(lu))
    scale = d.max() if d.size else 1.0
    if not np.all(np.isfinite(lu)) or (d.size and d.min() <= 1e-14 * max(scale, 1e-300)):
        raise SingularityError("singular iteration matrix",
                               condition=float(d.min() / scale) if d.size and scale > 0 else 0.0)
    return lu, piv


def _optimal_multiplier(a, b):
    """Step length minimizing ``|(1-mu) a + mu^2 b|^2`` over (0, 1]."""
    g0, g1, g2 = a @ a, a @ b, b @ b
    roots = np.roots([2 * g2, -3 * g1, 2 * g1 + g0, -g0])
    cand = [1.0] + [r.real for r in roots if abs(r.imag) < 1e-12 and 0 < r.real <= 1]
    phi = [np.sum(((1 - m) * a + m * m * b) ** 2) for m in cand]
    return float(max(cand[int(np.argmin(phi))], 0.05))


def _newton(fun, jac, u0, tolerance, max_iterations, optimal_multiplier=True):
    """Damped Newton on ``fun(u) = 0``; returns ``(u, iterations)``."""
    u = np.array(u0, dtype=float)
    F = fun(u)
    for it in range(max_iterations + 1):
        if not np.all(np.isfinite(F)):
            raise ConvergenceError("non-finite residual during Newton iteration",
                                   residual=np.inf, iterations=it)
        err = float(np.max(np.abs(F))) if F.size else 0.0
        if err <= tolerance:
            return u, it
        if it == max_iterations:
            break
        lu = _lu(jac(u))
        du = -sla.lu_solve(lu, F, check_finite=False)
        u1 = u + du
        F1 = fun(u1)
        if optimal_multiplier and np.all(np.isfinite(F1)) and np.max(np.abs(F1)) >= err:
            mu = _optimal_multiplier(F, F1)
            u1 = u + mu * du
            F1 = fun(u1)
        u, F = u1, F1
    raise ConvergenceError(f"Newton did not converge in {max_iterations} iterations "
                           f"(residual {err:.3e})", residual=err, iterations=max_iterations)


def _as_w(system, zc, x, y):
    lay = system.layout
    w = np.empty(lay.n)
    w[lay.zc_slice] = zc
    w[lay.x_slice] = x
    w[lay.y_slice] = y
    return w


def solve_constraint(system, zc, zd, x, y, tolerance=1e-10, max_iterations=30,
                     optimal_multiplier=True, return_iterations=False):
    """Point of the constraint manifold ``f = 0, g = 0`` at fixed ``(zc, zd)``.

    Newton's method from the guess ``(x, y)``, damped by the optimal
    multiplier when a full step does not reduce the residual.  Raises
    :class:`SingularityError` on a singular iteration matrix and
    :class:`ConvergenceError` on stagnation.
    """
    lay = system.layout
    zd = np.asarray(zd, dtype=float)
    w = _as_w(system, zc, x, y)
    fast = np.arange(lay.nz, lay.n)

    def fun(u):
        w[fast] = u
        return system.residual(w, zd)[fast]

    def jac(u):
        w[fast] = u
        return system.jacobian(w, zd)[np.ix_(fast, fast)]

    u, it = _newton(fun, jac, w[fast].copy(), tolerance, max_iterations, optimal_multiplier)
    w[fast] = u
    out = (w[lay.x_slice].copy(), w[lay.y_slice].copy())
    return (*out, it) if return_iterations else out


def _solve_algebraic(system, w, zd, rows, tolerance, max_iterations=30):
    """Solve ``F[rows](w) = 0`` for ``w[rows]`` with the rest held fixed."""
    w = np.array(w, dtype=float)

    def fun(u):
        w[rows] = u
        return system.residual(w, zd)[rows]

    def jac(u):
        w[rows] = u
        return system.jacobian(w, zd)[np.ix_(rows, rows)]

    u, _ = _newton(fun, jac, w[rows].copy(), tolerance, max_iterations)
    w[rows] = u
    return w


# ---------------------------------------------------------------------------
# discrete events


def process_discrete_events(system, state, tau):
    """Evaluate every device's discrete map at ``state`` and slow time ``tau``.

    All devices see the same pre-event state.  Returns ``(zd_new, changed,
    records)`` with one :class:`EventRecord` per device transition.
    """
    if isinstance(state, PartitionedState):
        w, zd = state.w, np.asarray(state.zd)
    else:
        w, zd = (np.asarray(a, dtype=float) for a in state)
    zd_new, raw = system.discrete_update(w, zd, tau)
    changed = not np.array_equal(zd_new, zd)
    records = [EventRecord(time=float(tau), kind=k, device=d, description=desc,
                           zd_before=np.array(zd), zd_after=np.array(zd_new)) for k, d, desc in raw]
    return zd_new, changed, records


# ---------------------------------------------------------------------------
# integrator core


class _StepFailure(Exception):
    pass


class _Engine:
    def __init__(self, system, config: IntegratorConfig, model: str):
        self.system = system
        self.cfg = config
        self.model = model
        lay = system.layout
        self.lay = lay
        self.i_zc = np.arange(0, lay.nz)
        self.i_x = np.arange(lay.nz, lay.nz + lay.nx)
        self.i_y = np.arange(lay.nz + lay.nx, lay.n)
        self.angle = system.angle_mask[self.i_x]
        self._lu = None
        self._lu_h = None
        self._slow = False
        self.sigma_ref = None
        self.set_phase("transient" if model == "transient" else "long-term")

    def set_phase(self, phase):
        self.phase = phase
        if phase == "long-term":
            self.D, self.A = np.r_[self.i_zc, self.i_x], self.i_y
        elif phase == "transient":
            self.D, self.A = self.i_x, self.i_y
        else:
            self.D, self.A = self.i_zc, np.r_[self.i_x, self.i_y]
        self.U = np.r_[self.D, self.A]
        self.invalidate()

    def invalidate(self):
        self._lu = None

    # one trapezoidal step; raises _StepFailure
    def step(self, w_prev, F_prev, zd, h):
        D = self.D
        w = w_prev.copy()
        if D.size:
            w[D] = w_prev[D] + h * F_prev[D]  # explicit predictor
        try:
            return self._iterate(w, w_prev, F_prev, zd, h, self.cfg.jacobian_refresh)
        except _StepFailure:
            # a stale iteration matrix is the usual culprit: retry with full Newton
            return self._iterate(w, w_prev, F_prev, zd, h, "every-step")

    def _iterate(self, w, w_prev, F_prev, zd, h, policy):
        cfg = self.cfg
        D, A, U = self.D, self.A, self.U
        wk = w.copy()
        prev_err = np.inf
        for it in range(cfg.max_iterations + 1):
            F = self.system.residual(wk, zd)
            R = np.concatenate([wk[D] - w_prev[D] - 0.5 * h * (F[D] + F_prev[D]), F[A]])
            if not np.all(np.isfinite(R)):
                break
            err = float(np.max(np.abs(R))) if R.size else 0.0
            if err <= cfg.tolerance:
                self._slow = it > 4
                return wk, F
            if it == cfg.max_iterations or (it > 2 and err > 10 * prev_err):
                break
            if (self._lu is None or self._lu_h != h or policy == "every-step"
                    or (policy == "on-slow-convergence" and (self._slow or err > 0.25 * prev_err))):
                self._factor(wk, zd, h)
                self._slow = False
            wk[U] -= sla.lu_solve(self._lu, R, check_finite=False)
            prev_err = err
        self._lu = None
        raise _StepFailure()

    def _factor(self, w, zd, h):
        J = self.system.jacobian(w, zd)
        D, U = self.D, self.U
        top = -0.5 * h * J[np.ix_(D, U)]
        top[np.arange(D.size), np.arange(D.size)] += 1.0
        M = np.vstack([top, J[np.ix_(self.A, U)]])
        try:
            self._lu = _lu(M)
        except SingularityError:
            self._lu = None
            raise _StepFailure()
        self._lu_h = h

    def norms(self, F):
        lay = self.lay

        def inf(v):
            return float(np.max(np.abs(v))) if v.size else 0.0

        return inf(F[lay.zc_slice]), inf(F[lay.x_slice]), inf(F[lay.y_slice])


class _Recorder:
    def __init__(self):
        self.times, self.W, self.ZD, self.norms, self.phase = [], [], [], [], []

    def add(self, t, w, zd, norms, phase):
        if self.times and t <= self.times[-1] + _T_EPS:
            # post-event state replaces the pre-event sample at the same instant
            self.times.pop(), self.W.pop(), self.ZD.pop(), self.norms.pop(), self.phase.pop()
        self.times.append(float(t))
        self.W.append(np.array(w))
        self.ZD.append(np.array(zd))
        self.norms.append(norms)
        self.phase.append(PHASES.index(phase))


class _Watch:
    """Divergence and equilibrium detectors."""

    def __init__(self, engine, w0, t0, target=None):
        self.e = engine
        cfg = engine.cfg
        self.cfg = cfg
        self.x0 = w0[engine.i_x].copy()
        self.quiet_since = None
        self.near_since = None
        self.win_start = t0
        self.win_min = None
        self.win_max = None
        self.win_first = None
        self.amps = []
        self.target = target

    def reset_reference(self, w):
        self.x0 = w[self.e.i_x].copy()

    def divergence(self, t, w):
        e, cfg = self.e, self.cfg
        if not np.all(np.isfinite(w)):
            return "non-finite state"
        if e.phase == "qss":
            return None
        dx = np.abs(w[e.i_x] - self.x0)
        if np.any(dx[e.angle] > cfg.angle_bound):
            k = int(np.flatnonzero(dx[e.angle] > cfg.angle_bound)[0])
            name = e.lay.names("x")[np.flatnonzero(e.angle)[k]]
            return f"angle {name} moved more than {cfg.angle_bound:.4g} rad (loss of synchronism)"
        other = ~e.angle
        if np.any(dx[other] > cfg.state_bound):
            k = int(np.flatnonzero(dx[other] > cfg.state_bound)[0])
            name = e.lay.names("x")[np.flatnonzero(other)[k]]
            return f"state {name} left the study region (|change| > {cfg.state_bound:g})"
        xs = w[e.i_x][other]
        if xs.size:
            if self.win_min is None:
                self.win_first = xs.copy()
            self.win_min = xs.copy() if self.win_min is None else np.minimum(self.win_min, xs)
            self.win_max = xs.copy() if self.win_max is None else np.maximum(self.win_max, xs)
            if t - self.win_start >= cfg.oscillation_window - _T_EPS:
                # swing beyond the net drift, so a monotone transition is not an oscillation
                swing = self.win_max - self.win_min - np.abs(xs - self.win_first)
                self.amps.append(float(np.max(swing)))
                self.win_start = t
                self.win_min = self.win_max = None
                n = cfg.oscillation_windows
                if len(self.amps) > n:
                    a = self.amps[-(n + 1):]
                    if a[-1] > cfg.oscillation_floor and all(
                            a[i + 1] > cfg.oscillation_growth * a[i] for i in range(n)):
                        return f"fast-state oscillation growing over {n} consecutive windows"
        return None

    def converged(self, t, w, F, quiet_ok):
        e, cfg = self.e, self.cfg
        if self.target is not None:
            d = float(np.max(np.abs(w[e.U] - self.target[e.U])))
            if d < cfg.target_tolerance:
                self.near_since = t if self.near_since is None else self.near_since
                if t - self.near_since >= cfg.target_dwell - _T_EPS:
                    return f"within {cfg.target_tolerance:g} of the target equilibrium"
            else:
                self.near_since = None
        rate = float(np.max(np.abs(F[e.D]))) if e.D.size else 0.0
        if rate < cfg.sep_tolerance and quiet_ok:
            self.quiet_since = t if self.quiet_since is None else self.quiet_since
            if t - self.quiet_since >= cfg.sep_dwell - _T_EPS:
                return f"rates below {cfg.sep_tolerance:g} for {cfg.sep_dwell:g} s"
        else:
            self.quiet_since = None
        return None


def _sigma_min(system, w, zd):
    from .dae import assemble_jacobian

    try:
        A = assemble_jacobian(system, (w, zd)).fast_block
        return float(np.linalg.svd(A, compute_uv=False)[-1]) if A.size else np.inf
    except Exception:  # evaluation can fail at the edge of validity
        return np.nan


def _near_singular(system, w, zd, sigma_ref, drop=1e-2):
    """Newton failures in the QSS phase count as singularity when the constraint
    Jacobian is numerically singular or its smallest singular value has
    collapsed relative to the start of the QSS phase."""
    from .dae import assemble_jacobian
    from .manifold import is_singular

    try:
        flag, _ = is_singular(assemble_jacobian(system, (w, zd)).fast_block)
    except Exception:
        return False
    if flag:
        return True
    smin = _sigma_min(system, w, zd)
    return bool(sigma_ref is not None and np.isfinite(sigma_ref) and smin < drop * sigma_ref)


def _simulate(system, w0, zd0, t0, cfg: IntegratorConfig, model: str, events=(),
              qss_start=None, target=None, pre_step=None):
    eng = _Engine(system, cfg, model)
    rec = _Recorder()
    log = []
    w = np.array(w0, dtype=float)
    zd = np.array(zd0, dtype=float)
    t = float(t0)
    t_end = t0 + cfg.horizon
    pending = [ev for ev in events]
    frozen = model == "transient"

    def reanchor(w, zd):
        if eng.phase == "qss":
            x, y = solve_constraint(system, w[eng.i_zc], zd, w[eng.i_x], w[eng.i_y],
                                    tolerance=cfg.tolerance * 0.1,
                                    optimal_multiplier=cfg.optimal_multiplier)
            w = w.copy()
            w[eng.i_x], w[eng.i_y] = x, y
            return w
        return _solve_algebraic(system, w, zd, eng.i_y, cfg.tolerance * 0.1)

    def apply_instant(t, w, zd):
        changed = False
        while pending and pending[0].time <= t + _T_EPS:
            ev = pending.pop(0)
            zd_new, (kind, dev, desc) = system.apply_timed_event(zd, ev)
            log.append(EventRecord(t, kind, dev, desc, zd.copy(), zd_new.copy()))
            zd, changed = zd_new, True
        if changed:
            w = reanchor(w, zd)
        if qss_start is not None and eng.phase == "long-term" and t >= qss_start - _T_EPS:
            eng.set_phase("qss")
            w = reanchor(w, zd)
            eng.sigma_ref = _sigma_min(system, w, zd)
            changed = True
        if not frozen:
            zd_new, any_change, recs = process_discrete_events(system, (w, zd), t)
            if any_change:
                log.extend(recs)
                zd = zd_new
                changed = True
                w = reanchor(w, zd)
        if changed:
            eng.invalidate()
        return w, zd

    def finish(status, reason):
        term = Termination(status, t, reason)
        lay = system.layout
        names = lay.w_names + lay.names("zd")
        parts = ("zc",) * lay.nz + ("x",) * lay.nx + ("y",) * lay.ny + ("zd",) * lay.nd
        units = lay.w_units + lay.units("zd")
        return Trajectory(names, parts, units, rec.times, rec.W, rec.ZD, log, term, model,
                          norms=rec.norms, phase=rec.phase, epsilon=system.epsilon,
                          metadata={"config": cfg.to_dict(), "system": getattr(system, "name", "")})

    # consistent start
    try:
        if eng.phase == "long-term" or eng.phase == "transient":
            F0 = system.residual(w, zd)
            if F0[eng.i_y].size and np.max(np.abs(F0[eng.i_y])) > cfg.tolerance:
                w = _solve_algebraic(system, w, zd, eng.i_y, cfg.tolerance * 0.1)
        w, zd = apply_instant(t, w, zd)
    except (ConvergenceError, SingularityError) as exc:
        rec.add(t, w, zd, eng.norms(system.residual(w, zd)), eng.phase)
        return finish("singularity" if isinstance(exc, SingularityError) else "newton-failure",
                      f"inconsistent initial point: {exc}")
    F = system.residual(w, zd)
    rec.add(t, w, zd, eng.norms(F), eng.phase)
    watch = _Watch(eng, w, t, target)
    if cfg.horizon <= 0:
        return finish("horizon-reached", "zero-length horizon")

    while t < t_end - _T_EPS:
        h_nom = pre_step if (pre_step and eng.phase == "long-term") else cfg.step
        stops = [t_end]
        if pending:
            stops.append(pending[0].time)
        if qss_start is not None and eng.phase == "long-term":
            stops.append(qss_start)
        if not frozen:
            stops.append(system.next_event_time(zd))
        stop = min(s for s in stops if s > t + _T_EPS) if any(s > t + _T_EPS for s in stops) else t_end
        h = min(h_nom, stop - t)
        if stop - (t + h) < 1e-3 * h_nom:
            h = stop - t
        while True:
            try:
                w_new, F_new = eng.step(w, F, zd, h)
                break
            except _StepFailure:
                h *= 0.5
                eng.invalidate()
                if h < cfg.min_step:
                    status = "newton-failure"
                    reason = f"Newton failed at minimum step {cfg.min_step:.3g} s"
                    if eng.phase == "qss" and _near_singular(system, w, zd, eng.sigma_ref):
                        status = "singularity"
                        reason = "constraint Jacobian approaching the singular set"
                    return finish(status, reason)
        t = t + h
        if abs(t - stop) < _T_EPS * max(1.0, abs(stop)):
            t = stop
        w = w_new
        try:
            w2, zd2 = apply_instant(t, w, zd)
        except (ConvergenceError, SingularityError) as exc:
            rec.add(t, w, zd, eng.norms(F_new), eng.phase)
            status = "singularity" if isinstance(exc, SingularityError) else "newton-failure"
            return finish(status, f"re-solve after event failed: {exc}")
        event_here = w2 is not w or not np.array_equal(zd2, zd)
        w, zd = w2, zd2
        F = system.residual(w, zd) if event_here else F_new
        rec.add(t, w, zd, eng.norms(F), eng.phase)
        reason = watch.divergence(t, w)
        if reason:
            return finish("diverged", reason)
        if cfg.stop_at_sep:
            quiet_ok = (not pending and (frozen or not system.pending(zd))
                        and (qss_start is None or eng.phase == "qss"))
            reason = watch.converged(t, w, F, quiet_ok)
            if reason:
                return finish("converged-to-sep", reason)
    return finish("horizon-reached", "")


# ---------------------------------------------------------------------------
# public engines


def _initial(system, initial):
    state = initial if initial is not None else system.initial_state()
    state.check(system.layout)
    g = system.residual(state.w, state.zd)[system.layout.y_slice]
    if g.size and np.max(np.abs(g)) > 1e-6:
        logger.warning("initial algebraic residual %.3e; projecting onto g = 0", np.max(np.abs(g)))
    return state


def run_long_term(system, initial: PartitionedState | None = None,
                  config: IntegratorConfig | None = None) -> Trajectory:
    """Integrate the complete model (slow, fast and algebraic parts together).

    Scenario events fire at their times; device discrete maps are polled
    after every step.  Ends at the horizon, on convergence to an equilibrium,
    on divergence or when Newton fails at the minimum step.
    """
    cfg = config or config_for(system, "long_term")
    st = _initial(system, initial)
    events = [ev for ev in system.timed_events() if ev.time >= st.t - _T_EPS]
    return _simulate(system, st.w, st.zd, st.t, cfg, "long-term", events=events)


def run_qss(system, initial: PartitionedState | None = None, config: IntegratorConfig | None = None,
            qss_start: float | None = None) -> Trajectory:
    """Integrate the QSS model: fast dynamics replaced by ``f = 0``.

    The complete model is used until ``qss_start`` (scenario value by
    default); from then on only ``zc`` is integrated and ``(x, y)`` are kept
    on the constraint manifold.
    """
    cfg = config or config_for(system, "qss")
    st = _initial(system, initial)
    start = system.scenario.qss_start if qss_start is None else qss_start
    start = max(start, st.t)
    events = [ev for ev in system.timed_events() if ev.time >= st.t - _T_EPS]
    pre_step = config_for(system, "long_term").step
    return _simulate(system, st.w, st.zd, st.t, cfg, "qss", events=events, qss_start=start,
                     pre_step=pre_step)


def run_transient(system, zc, zd, x0, y0, config: IntegratorConfig | None = None,
                  target: PartitionedState | np.ndarray | None = None, t0: float = 0.0) -> Trajectory:
    """Integrate the fast model with ``zc`` and ``zd`` frozen.

    ``y0`` is projected onto ``g = 0`` at fixed ``x0`` when inconsistent.  With
    ``target`` (an equilibrium), the run also stops once the state stays
    within ``config.target_tolerance`` of it for ``config.target_dwell``.
    """
    cfg = config or config_for(system, "transient")
    w0 = _as_w(system, zc, x0, y0)
    tw = None
    if target is not None:
        tw = target.w if isinstance(target, PartitionedState) else np.asarray(target, dtype=float)
    return _simulate(system, w0, np.asarray(zd, dtype=float), t0, cfg, "transient", target=tw)
