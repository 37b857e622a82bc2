"""Load tap changer: discrete tap position driven by a delayed deadband rule.

Convention: the tap ratio sits on the from side of the branch, so increasing
the ratio lowers the controlled (to-side) voltage.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .base import Device

DISARMED = -1.0
_TIME_EPS = 1e-9
_TAP_EPS = 1e-12


@dataclass(frozen=True)
class LtcParams:
    v0: float
    d: float
    r: float
    r_max: float
    r_min: float
    dT0: float
    dTk: float

    def __post_init__(self):
        if not (self.d > 0 and self.r > 0):
            raise ValueError("deadband d and step r must be positive")
        if not self.r_min < self.r_max:
            raise ValueError("need r_min < r_max")
        if not (self.dT0 > 0 and self.dTk > 0):
            raise ValueError("delays must be positive")


@dataclass(frozen=True)
class LtcState:
    tap: float
    next_move: float = DISARMED  # slow time of the next allowed move, or DISARMED
    saturated: bool = False

    @property
    def armed(self) -> bool:
        return self.next_move >= 0


def ltc_discrete_map(state: LtcState, v: float, tau: float, params: LtcParams):
    """One evaluation of the tap-changer rule at slow time ``tau``.

    Out of band, the first move waits ``dT0`` and later moves ``dTk``; back in
    band the delay timer is cleared.  A move that would cross a tap limit is
    clamped; a tap already at the limit in the needed direction is left alone
    and flagged saturated.  Returns ``(new_state, changed)`` where ``changed``
    reports a tap movement.
    """
    lo, hi = params.v0 - params.d, params.v0 + params.d
    if lo <= v <= hi:
        return LtcState(state.tap, DISARMED, False), False
    direction = 1.0 if v > hi else -1.0  # raising the ratio lowers the voltage
    at_limit = (direction > 0 and state.tap >= params.r_max - _TAP_EPS) or (
        direction < 0 and state.tap <= params.r_min + _TAP_EPS)
    if at_limit:
        return LtcState(state.tap, DISARMED, True), False
    if not state.armed:
        return LtcState(state.tap, tau + params.dT0, False), False
    if tau + _TIME_EPS < state.next_move:
        return replace(state, saturated=False), False
    tap = float(np.clip(state.tap + direction * params.r, params.r_min, params.r_max))
    return LtcState(tap, tau + params.dTk, False), True


class TapChangers(Device):
    """LTC group.  Each unit owns two discrete states: tap and next-move time."""

    kind = "ltc"

    def __init__(self, names, branches, controlled_buses, params, initial_taps=None):
        super().__init__(names)
        self.branches = list(branches)
        self.controlled = list(controlled_buses)
        self.params = list(params)
        self.initial_taps = list(initial_taps) if initial_taps is not None else [None] * len(self)
        self.saturated = np.zeros(len(self), dtype=bool)

    def register(self, layout, system):
        self.d_tap = np.array([layout.add("zd", f"{n}.tap", "ratio") for n in self.names], dtype=int)
        self.d_next = np.array([layout.add("zd", f"{n}.next_move", "s") for n in self.names], dtype=int)

    def bind(self, layout, system):
        self.i_vre = np.array([system.bus_vr_index(b) for b in self.controlled], dtype=int)
        self.i_vim = self.i_vre + 1

    def initialize(self, w, zd, system):
        for k in range(len(self)):
            tap = self.initial_taps[k]
            if tap is None:
                tap = system.network.branch(self.branches[k]).tap
            zd[self.d_tap[k]] = tap
            zd[self.d_next[k]] = DISARMED

    def voltages(self, w):
        return np.hypot(w[self.i_vre], w[self.i_vim])

    def discrete_update(self, w, zd, t, zd_new):
        out = []
        v = self.voltages(w)
        for k, name in enumerate(self.names):
            old = LtcState(zd[self.d_tap[k]], zd[self.d_next[k]])
            new, moved = ltc_discrete_map(old, float(v[k]), t, self.params[k])
            self.saturated[k] = new.saturated
            zd_new[self.d_tap[k]] = new.tap
            zd_new[self.d_next[k]] = new.next_move
            if moved:
                out.append(("tap", name, f"{name} tap {old.tap:.4f} -> {new.tap:.4f} (v = {v[k]:.4f})"))
            elif new.next_move != old.next_move and new.armed and not old.armed:
                out.append(("ltc-arm", name, f"{name} timer started, move due at {new.next_move:.4f} s"))
            elif new.next_move != old.next_move and not new.armed:
                out.append(("ltc-disarm", name, f"{name} timer cleared (v = {v[k]:.4f})"))
        return out

    def next_event_time(self, zd):
        nxt = zd[self.d_next]
        nxt = nxt[nxt >= 0]
        return float(nxt.min()) if nxt.size else np.inf

    def pending(self, zd):
        return bool(np.any(zd[self.d_next] >= 0))
