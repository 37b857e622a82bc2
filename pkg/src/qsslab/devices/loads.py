"""Exponential recovery load (Karlsson-Hill form).

``Tp xp' = -xp + P0 (u^as - u^at)``, ``P = xp + P0 u^at`` with ``u = V/v0``
and ``v0`` the initial voltage, so the load draws exactly ``P0`` in the
pre-disturbance state.  Reactive power is handled identically with the
``beta`` exponents.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import Device


@dataclass(frozen=True)
class ExpRecoveryLoadParams:
    kp: float = 1.0
    kq: float = 1.0
    Tp: float = 1.0
    Tq: float = 1.0
    alpha_s: float = 1.0
    alpha_t: float = 2.0
    beta_s: float = 1.0
    beta_t: float = 2.0
    slow: bool = True  # recovery states in z_c (True) or x (False)

    def __post_init__(self):
        if not (self.Tp > 0 and self.Tq > 0):
            raise ValueError("Tp and Tq must be positive")
        if not (0 <= self.kp <= 1 and 0 <= self.kq <= 1):
            raise ValueError("kp and kq must lie in [0, 1]")


def recovery_load_power(xp, v, p0, alpha_t, v0=1.0):
    """Instantaneous load power ``xp + p0 (v/v0)^alpha_t``."""
    return xp + p0 * (v / v0) ** alpha_t


def recovery_load_rate(xp, v, p0, alpha_s, alpha_t, T, v0=1.0):
    """Time derivative of the recovery state."""
    u = v / v0
    return (-xp + p0 * (u**alpha_s - u**alpha_t)) / T


class ExpRecoveryLoads(Device):
    kind = "exp_load"

    def __init__(self, names, buses, params):
        super().__init__(names)
        self.buses = list(buses)
        self.params = list(params)
        p = self.params
        self.kp = np.array([q.kp for q in p])
        self.kq = np.array([q.kq for q in p])
        self.Tp = np.array([q.Tp for q in p])
        self.Tq = np.array([q.Tq for q in p])
        self.a_s = np.array([q.alpha_s for q in p])
        self.a_t = np.array([q.alpha_t for q in p])
        self.b_s = np.array([q.beta_s for q in p])
        self.b_t = np.array([q.beta_t for q in p])
        n = len(self)
        self.P0 = np.zeros(n)
        self.Q0 = np.zeros(n)
        self.v0 = np.ones(n)

    def register(self, layout, system):
        self._part = []
        self._lp, self._lq = [], []
        for name, q in zip(self.names, self.params):
            part = "zc" if q.slow else "x"
            self._part.append(part)
            self._lp.append(layout.add(part, f"{name}.xp"))
            self._lq.append(layout.add(part, f"{name}.xq"))
        # dynamic share of the bus load, known from the case data
        for k, b in enumerate(self.buses):
            bus = system.network.bus(b)
            self.P0[k] = self.kp[k] * bus.load_p
            self.Q0[k] = self.kq[k] * bus.load_q

    def bind(self, layout, system):
        self.i_xp = np.array([layout.w_index(pt, i) for pt, i in zip(self._part, self._lp)], dtype=int)
        self.i_xq = np.array([layout.w_index(pt, i) for pt, i in zip(self._part, self._lq)], dtype=int)
        self.i_vre = np.array([system.bus_vr_index(b) for b in self.buses], dtype=int)
        self.i_vim = self.i_vre + 1

    def _powers(self, w):
        vre, vim = w[self.i_vre], w[self.i_vim]
        v = np.hypot(vre, vim)
        u = v / self.v0
        P = w[self.i_xp] + self.P0 * u**self.a_t
        Q = w[self.i_xq] + self.Q0 * u**self.b_t
        return vre, vim, v, u, P, Q

    def residual(self, w, zd):
        vre, vim, v, u, P, Q = self._powers(w)
        v2 = v * v
        rows = np.concatenate([self.i_xp, self.i_xq, self.i_vre, self.i_vim])
        vals = np.concatenate([
            (-w[self.i_xp] + self.P0 * (u**self.a_s - u**self.a_t)) / self.Tp,
            (-w[self.i_xq] + self.Q0 * (u**self.b_s - u**self.b_t)) / self.Tq,
            -(P * vre + Q * vim) / v2,
            -(P * vim - Q * vre) / v2,
        ])
        return rows, vals

    def jacobian(self, w, zd):
        vre, vim, v, u, P, Q = self._powers(w)
        v2 = v * v
        dv_dr, dv_di = vre / v, vim / v
        # d/dV of the recovery rates and of the instantaneous powers
        drp = self.P0 * (self.a_s * u ** (self.a_s - 1) - self.a_t * u ** (self.a_t - 1)) / self.v0 / self.Tp
        drq = self.Q0 * (self.b_s * u ** (self.b_s - 1) - self.b_t * u ** (self.b_t - 1)) / self.v0 / self.Tq
        dP = self.P0 * self.a_t * u ** (self.a_t - 1) / self.v0
        dQ = self.Q0 * self.b_t * u ** (self.b_t - 1) / self.v0
        nr = P * vre + Q * vim
        ni = P * vim - Q * vre
        # current drawn: (nr, ni) / v^2; derivatives of the negated injection
        dnr_dr = dP * dv_dr * vre + P + dQ * dv_dr * vim
        dnr_di = dP * dv_di * vre + dQ * dv_di * vim + Q
        dni_dr = dP * dv_dr * vim - dQ * dv_dr * vre - Q
        dni_di = dP * dv_di * vim + P - dQ * dv_di * vre
        dinv_dr = -2 * vre / v2**2
        dinv_di = -2 * vim / v2**2
        R = [self.i_xp, self.i_xp, self.i_xp, self.i_xq, self.i_xq, self.i_xq,
             self.i_vre, self.i_vre, self.i_vre, self.i_vre,
             self.i_vim, self.i_vim, self.i_vim, self.i_vim]
        C = [self.i_xp, self.i_vre, self.i_vim, self.i_xq, self.i_vre, self.i_vim,
             self.i_vre, self.i_vim, self.i_xp, self.i_xq,
             self.i_vre, self.i_vim, self.i_xp, self.i_xq]
        V = [-1.0 / self.Tp, drp * dv_dr, drp * dv_di, -1.0 / self.Tq, drq * dv_dr, drq * dv_di,
             -(dnr_dr / v2 + nr * dinv_dr), -(dnr_di / v2 + nr * dinv_di), -vre / v2, -vim / v2,
             -(dni_dr / v2 + ni * dinv_dr), -(dni_di / v2 + ni * dinv_di), -vim / v2, vre / v2]
        V = [np.broadcast_to(x, self.i_xp.shape) for x in V]
        return np.concatenate(R), np.concatenate(C), np.concatenate(V)

    def initialize(self, w, zd, system):
        vm = system.power_flow.voltage_magnitudes
        for k, b in enumerate(self.buses):
            self.v0[k] = vm[system.network.bus_index[b]]
        w[self.i_xp] = 0.0
        w[self.i_xq] = 0.0

    def time_constants(self):
        return list(self.Tp) + list(self.Tq)


class ConstantPowerInjections(Device):
    """Fixed complex power injection at buses that have generation but no
    machine model.  Set-points come from the power flow."""

    kind = "injection"

    def __init__(self, names, buses, powers):
        super().__init__(names)
        self.buses = list(buses)
        s = np.asarray(powers, dtype=complex)
        self.P = s.real.copy()
        self.Q = s.imag.copy()

    def register(self, layout, system):
        pass

    def bind(self, layout, system):
        self.i_vre = np.array([system.bus_vr_index(b) for b in self.buses], dtype=int)
        self.i_vim = self.i_vre + 1

    def residual(self, w, zd):
        vre, vim = w[self.i_vre], w[self.i_vim]
        v2 = vre * vre + vim * vim
        P, Q = self.P, self.Q
        return (np.concatenate([self.i_vre, self.i_vim]),
                np.concatenate([(P * vre + Q * vim) / v2, (P * vim - Q * vre) / v2]))

    def jacobian(self, w, zd):
        vre, vim = w[self.i_vre], w[self.i_vim]
        v2 = vre * vre + vim * vim
        P, Q = self.P, self.Q
        nr = P * vre + Q * vim
        ni = P * vim - Q * vre
        rows = np.concatenate([self.i_vre, self.i_vre, self.i_vim, self.i_vim])
        cols = np.concatenate([self.i_vre, self.i_vim, self.i_vre, self.i_vim])
        vals = np.concatenate([
            P / v2 - 2 * vre * nr / v2**2,
            Q / v2 - 2 * vim * nr / v2**2,
            -Q / v2 - 2 * vre * ni / v2**2,
            P / v2 - 2 * vim * ni / v2**2,
        ])
        return rows, cols, vals
