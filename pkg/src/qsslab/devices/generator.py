"""Fourth-order two-axis synchronous machine with first-order AVR and an
integrating over-excitation limiter.

Machine states (fast): rotor angle ``delta``, speed ``omega``, transient
EMFs ``eq`` and ``ed``; AVR regulator output ``vr``.  Stator equations and
the dq currents ``id``, ``iq`` are algebraic.  The OXL timer is a continuous
slow state; its activation flag is discrete.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InitializationError
from .base import Device


@dataclass(frozen=True)
class GeneratorParams:
    H: float
    D: float
    xd: float
    xq: float
    xd1: float
    xq1: float
    Td01: float
    Tq01: float
    ra: float = 0.0

    def __post_init__(self):
        if not self.H > 0:
            raise ValueError("H must be positive")
        if not (self.xd >= self.xd1 > 0):
            raise ValueError("need xd >= xd' > 0")
        if not (self.xq >= self.xq1 > 0):
            raise ValueError("need xq >= xq' > 0")
        if not (self.Td01 > 0 and self.Tq01 > 0):
            raise ValueError("open-circuit time constants must be positive")


@dataclass(frozen=True)
class AvrParams:
    Ka: float
    Ta: float
    vf_min: float = -5.0
    vf_max: float = 5.0
    v_ref: float | None = None  # None: back-solved at initialization

    def __post_init__(self):
        if not (self.Ka > 0 and self.Ta > 0):
            raise ValueError("Ka and Ta must be positive")
        if not self.vf_min < self.vf_max:
            raise ValueError("need vf_min < vf_max")


@dataclass(frozen=True)
class OxlParams:
    T0: float
    if_lim: float
    v_max: float = 100.0
    activation: float = 1.0

    def __post_init__(self):
        if not self.T0 > 0:
            raise ValueError("T0 must be positive")
        if not self.v_max > 0:
            raise ValueError("v_max must be positive")
        if self.activation < 0:
            raise ValueError("activation threshold must be non-negative")


@dataclass(frozen=True)
class OxlState:
    timer: float = 0.0
    active: bool = False


def oxl_output(timer, active, params: OxlParams):
    """Signal subtracted at the AVR summing junction."""
    return np.where(active, np.clip(timer - params.activation, 0.0, params.v_max), 0.0)


def oxl_limit_signal(state: OxlState, field_current: float, dt: float, params: OxlParams):
    """Advance the limiter by ``dt`` seconds at constant field current.

    The timer integrates ``(i_f - i_f_lim)+ / T0`` and never decreases.  Once
    it reaches the activation threshold the flag latches (reset is an operator
    action) and the output ``clip(timer - activation, 0, v_max)`` is applied.
    Returns ``(new_state, output)``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    excess = max(field_current - params.if_lim, 0.0)
    timer = state.timer + dt * excess / params.T0
    active = state.active or timer >= params.activation
    new = OxlState(timer=timer, active=active)
    return new, float(oxl_output(timer, active, params))


class SyncMachines(Device):
    """Group of synchronous machines, optionally with AVR and OXL."""

    kind = "generator"

    def __init__(self, names, buses, params, avrs=None, oxls=None, omega_base=2 * np.pi * 60):
        super().__init__(names)
        n = len(names)
        self.buses = list(buses)
        self.params = list(params)
        self.avrs = list(avrs) if avrs is not None else [None] * n
        self.oxls = list(oxls) if oxls is not None else [None] * n
        self.omega_base = omega_base
        p = self.params
        self.H = np.array([q.H for q in p])
        self.M = 2.0 * self.H
        self.D = np.array([q.D for q in p])
        self.xd = np.array([q.xd for q in p])
        self.xq = np.array([q.xq for q in p])
        self.xd1 = np.array([q.xd1 for q in p])
        self.xq1 = np.array([q.xq1 for q in p])
        self.Td01 = np.array([q.Td01 for q in p])
        self.Tq01 = np.array([q.Tq01 for q in p])
        self.ra = np.array([q.ra for q in p])
        self.has_avr = np.array([a is not None for a in self.avrs])
        self.has_oxl = np.array([o is not None for o in self.oxls])
        self.Ka = np.array([a.Ka if a else 1.0 for a in self.avrs])
        self.Ta = np.array([a.Ta if a else 1.0 for a in self.avrs])
        self.vf_min = np.array([a.vf_min if a else -np.inf for a in self.avrs])
        self.vf_max = np.array([a.vf_max if a else np.inf for a in self.avrs])
        self.T0 = np.array([o.T0 if o else 1.0 for o in self.oxls])
        self.if_lim = np.array([o.if_lim if o else np.inf for o in self.oxls])
        self.oxl_vmax = np.array([o.v_max if o else 0.0 for o in self.oxls])
        self.oxl_act = np.array([o.activation if o else 0.0 for o in self.oxls])
        # set-points fixed at initialization
        self.pm0 = np.zeros(n)
        self.vref = np.array([a.v_ref if (a and a.v_ref is not None) else np.nan for a in self.avrs])
        self.vf0 = np.zeros(n)
        self.delta_fixed = np.zeros(n)
        self.has_tg = np.zeros(n, dtype=bool)

    # -- registration -------------------------------------------------------
    def register(self, layout, system):
        n = len(self)
        ref = system.reference_machine
        self.is_ref = np.array([(self.kind, k) == ref for k in range(n)])
        loc = {key: np.full(n, -1) for key in ("delta", "omega", "eq", "ed", "vr", "id", "iq", "timer")}
        self.d_flag = np.full(n, -1)
        for k, name in enumerate(self.names):
            if not self.is_ref[k]:
                loc["delta"][k] = layout.add("x", f"{name}.delta", "rad")
            loc["omega"][k] = layout.add("x", f"{name}.omega")
            loc["eq"][k] = layout.add("x", f"{name}.eq")
            loc["ed"][k] = layout.add("x", f"{name}.ed")
            if self.has_avr[k]:
                loc["vr"][k] = layout.add("x", f"{name}.vr")
        for k, name in enumerate(self.names):
            loc["id"][k] = layout.add("y", f"{name}.id")
            loc["iq"][k] = layout.add("y", f"{name}.iq")
        for k, name in enumerate(self.names):
            if self.has_oxl[k]:
                loc["timer"][k] = layout.add("zc", f"{name}.oxl_timer", "pu.s")
                self.d_flag[k] = layout.add("zd", f"{name}.oxl_active", "flag")
        self._local = loc

    def bind(self, layout, system):
        loc = self._local

        def widx(part, a):
            return np.where(a >= 0, layout.w_index(part, a), -1)

        self.i_delta = widx("x", loc["delta"])
        self.i_omega = widx("x", loc["omega"])
        self.i_eq = widx("x", loc["eq"])
        self.i_ed = widx("x", loc["ed"])
        self.i_vr = widx("x", loc["vr"])
        self.i_id = widx("y", loc["id"])
        self.i_iq = widx("y", loc["iq"])
        self.i_timer = widx("zc", loc["timer"])
        self.i_vre = np.array([system.bus_vr_index(b) for b in self.buses], dtype=int)
        self.i_vim = self.i_vre + 1
        # angles are measured against the reference machine's rotor when there
        # is one, otherwise against the synchronous frame
        self.frame_omega = int(self.i_omega[self.is_ref][0]) if self.is_ref.any() else None

    # -- helpers -------------------------------------------------------------
    def _delta(self, w):
        return np.where(self.is_ref, self.delta_fixed, w[np.maximum(self.i_delta, 0)])

    def _terminal(self, w):
        d = self._delta(w)
        s, c = np.sin(d), np.cos(d)
        vre, vim = w[self.i_vre], w[self.i_vim]
        vd = vre * s - vim * c
        vq = vre * c + vim * s
        return d, s, c, vre, vim, vd, vq

    def _oxl(self, w, zd):
        timer = np.where(self.has_oxl, w[np.maximum(self.i_timer, 0)], 0.0)
        flag = np.where(self.has_oxl, zd[np.maximum(self.d_flag, 0)] if zd.size else 0.0, 0.0) > 0.5
        arg = timer - self.oxl_act
        out = np.where(flag & self.has_oxl, np.clip(arg, 0.0, self.oxl_vmax), 0.0)
        dout = np.where(flag & self.has_oxl & (arg > 0) & (arg < self.oxl_vmax), 1.0, 0.0)
        return timer, out, dout

    def field_current(self, w):
        return w[self.i_eq] + (self.xd - self.xd1) * w[self.i_id]

    def field_voltage(self, w):
        vr = np.where(self.has_avr, w[np.maximum(self.i_vr, 0)], self.vf0)
        return np.where(self.has_avr, np.clip(vr, self.vf_min, self.vf_max), self.vf0)

    def electrical_power(self, w):
        _, _, _, _, _, vd, vq = self._terminal(w)
        i_d, i_q = w[self.i_id], w[self.i_iq]
        return (vd + self.ra * i_d) * i_d + (vq + self.ra * i_q) * i_q

    # -- residuals -------------------------------------------------------------
    def residual(self, w, zd):
        d, s, c, vre, vim, vd, vq = self._terminal(w)
        om, eq, ed = w[self.i_omega], w[self.i_eq], w[self.i_ed]
        i_d, i_q = w[self.i_id], w[self.i_iq]
        pe = (vd + self.ra * i_d) * i_d + (vq + self.ra * i_q) * i_q
        pm = np.where(self.has_tg, 0.0, self.pm0)
        om_frame = 1.0 if self.frame_omega is None else w[self.frame_omega]
        timer, voxl, _ = self._oxl(w, zd)
        vf = self.field_voltage(w)
        vt = np.hypot(vre, vim)

        rows, vals = [], []
        nr = ~self.is_ref
        rows.append(self.i_delta[nr])
        vals.append(self.omega_base * (om[nr] - om_frame))
        rows.append(self.i_omega)
        vals.append((pm - pe - self.D * (om - 1.0)) / self.M)
        rows.append(self.i_eq)
        vals.append((vf - eq - (self.xd - self.xd1) * i_d) / self.Td01)
        rows.append(self.i_ed)
        vals.append((-ed + (self.xq - self.xq1) * i_q) / self.Tq01)
        a = self.has_avr
        if a.any():
            vr = w[self.i_vr[a]]
            rows.append(self.i_vr[a])
            vals.append((self.Ka[a] * (self.vref[a] - vt[a] - voxl[a]) - vr) / self.Ta[a])
        rows.append(self.i_id)
        vals.append(ed - vd - self.ra * i_d + self.xq1 * i_q)
        rows.append(self.i_iq)
        vals.append(eq - vq - self.ra * i_q - self.xd1 * i_d)
        rows.append(self.i_vre)
        vals.append(i_d * s + i_q * c)
        rows.append(self.i_vim)
        vals.append(-i_d * c + i_q * s)
        o = self.has_oxl
        if o.any():
            ifd = eq[o] + (self.xd[o] - self.xd1[o]) * i_d[o]
            rows.append(self.i_timer[o])
            vals.append(np.maximum(ifd - self.if_lim[o], 0.0) / self.T0[o])
        return np.concatenate(rows), np.concatenate(vals)

    def jacobian(self, w, zd):
        d, s, c, vre, vim, vd, vq = self._terminal(w)
        om, eq = w[self.i_omega], w[self.i_eq]
        i_d, i_q = w[self.i_id], w[self.i_iq]
        R, C, V = [], [], []

        def put(r, cidx, v, mask=None):
            r = np.broadcast_to(r, np.shape(v) if np.ndim(v) else np.shape(r))
            cidx = np.broadcast_to(cidx, r.shape)
            v = np.broadcast_to(v, r.shape)
            if mask is not None:
                r, cidx, v = r[mask], cidx[mask], v[mask]
            R.append(np.asarray(r))
            C.append(np.asarray(cidx))
            V.append(np.asarray(v, dtype=float))

        nr = ~self.is_ref
        wb = self.omega_base
        # delta rows
        put(self.i_delta[nr], self.i_omega[nr], np.full(nr.sum(), wb))
        if self.frame_omega is not None:
            put(self.i_delta[nr], np.full(nr.sum(), self.frame_omega), np.full(nr.sum(), -wb))
        # partials of vd, vq
        dvd_dd, dvq_dd = vq, -vd
        dvd_dvr, dvd_dvi = s, -c
        dvq_dvr, dvq_dvi = c, s
        # omega rows: -(Pe)/M - D/M
        dpe_dd = dvd_dd * i_d + dvq_dd * i_q
        dpe_dvr = dvd_dvr * i_d + dvq_dvr * i_q
        dpe_dvi = dvd_dvi * i_d + dvq_dvi * i_q
        dpe_did = vd + 2 * self.ra * i_d
        dpe_diq = vq + 2 * self.ra * i_q
        M = self.M
        put(self.i_omega, self.i_omega, -self.D / M)
        put(self.i_omega, self.i_delta, -dpe_dd / M, nr)
        put(self.i_omega, self.i_vre, -dpe_dvr / M)
        put(self.i_omega, self.i_vim, -dpe_dvi / M)
        put(self.i_omega, self.i_id, -dpe_did / M)
        put(self.i_omega, self.i_iq, -dpe_diq / M)
        # eq rows
        put(self.i_eq, self.i_eq, -1.0 / self.Td01)
        put(self.i_eq, self.i_id, -(self.xd - self.xd1) / self.Td01)
        a = self.has_avr
        if a.any():
            vr = w[self.i_vr[a]]
            inside = ((vr > self.vf_min[a]) & (vr < self.vf_max[a])).astype(float)
            put(self.i_eq[a], self.i_vr[a], inside / self.Td01[a])
        # ed rows
        put(self.i_ed, self.i_ed, -1.0 / self.Tq01)
        put(self.i_ed, self.i_iq, (self.xq - self.xq1) / self.Tq01)
        # AVR rows
        if a.any():
            vt = np.hypot(vre[a], vim[a])
            ka_ta = self.Ka[a] / self.Ta[a]
            put(self.i_vr[a], self.i_vr[a], -1.0 / self.Ta[a])
            put(self.i_vr[a], self.i_vre[a], -ka_ta * vre[a] / vt)
            put(self.i_vr[a], self.i_vim[a], -ka_ta * vim[a] / vt)
            _, _, dout = self._oxl(w, zd)
            m = self.has_oxl[a]
            if m.any():
                put(self.i_vr[a][m], self.i_timer[a][m], -ka_ta[m] * dout[a][m])
        # stator d: ed - vd - ra id + xq1 iq
        put(self.i_id, self.i_ed, 1.0)
        put(self.i_id, self.i_delta, -dvd_dd, nr)
        put(self.i_id, self.i_vre, -dvd_dvr)
        put(self.i_id, self.i_vim, -dvd_dvi)
        put(self.i_id, self.i_id, -self.ra)
        put(self.i_id, self.i_iq, self.xq1)
        # stator q: eq - vq - ra iq - xd1 id
        put(self.i_iq, self.i_eq, 1.0)
        put(self.i_iq, self.i_delta, -dvq_dd, nr)
        put(self.i_iq, self.i_vre, -dvq_dvr)
        put(self.i_iq, self.i_vim, -dvq_dvi)
        put(self.i_iq, self.i_iq, -self.ra)
        put(self.i_iq, self.i_id, -self.xd1)
        # current injection
        put(self.i_vre, self.i_id, s)
        put(self.i_vre, self.i_iq, c)
        put(self.i_vre, self.i_delta, i_d * c - i_q * s, nr)
        put(self.i_vim, self.i_id, -c)
        put(self.i_vim, self.i_iq, s)
        put(self.i_vim, self.i_delta, i_d * s + i_q * c, nr)
        # OXL timer
        o = self.has_oxl
        if o.any():
            ifd = eq[o] + (self.xd[o] - self.xd1[o]) * i_d[o]
            on = (ifd > self.if_lim[o]).astype(float)
            put(self.i_timer[o], self.i_eq[o], on / self.T0[o])
            put(self.i_timer[o], self.i_id[o], on * (self.xd[o] - self.xd1[o]) / self.T0[o])
        return np.concatenate(R), np.concatenate(C), np.concatenate(V)

    # -- initialization ------------------------------------------------------
    def initialize(self, w, zd, system):
        sol = system.power_flow
        for k, name in enumerate(self.names):
            kb = system.network.bus_index[self.buses[k]]
            v = sol.voltages[kb]
            sg = system.bus_generation[kb]
            cur = np.conj(sg / v)
            e = v + complex(self.ra[k], self.xq[k]) * cur
            delta = np.angle(e)
            rot = np.exp(-1j * (delta - np.pi / 2))
            idq = cur * rot
            vdq = v * rot
            i_d, i_q = idq.real, idq.imag
            vd, vq = vdq.real, vdq.imag
            ed = vd + self.ra[k] * i_d - self.xq1[k] * i_q
            eq = vq + self.ra[k] * i_q + self.xd1[k] * i_d
            vf = eq + (self.xd[k] - self.xd1[k]) * i_d
            pe = (vd + self.ra[k] * i_d) * i_d + (vq + self.ra[k] * i_q) * i_q
            if self.is_ref[k]:
                self.delta_fixed[k] = delta
            else:
                w[self.i_delta[k]] = delta
            w[self.i_omega[k]] = 1.0
            w[self.i_eq[k]] = eq
            w[self.i_ed[k]] = ed
            w[self.i_id[k]] = i_d
            w[self.i_iq[k]] = i_q
            self.pm0[k] = pe
            self.vf0[k] = vf
            if self.has_avr[k]:
                if not (self.vf_min[k] < vf < self.vf_max[k]):
                    raise InitializationError(
                        f"{name}: field voltage {vf:.4f} outside AVR limits "
                        f"[{self.vf_min[k]}, {self.vf_max[k]}]", device=name)
                w[self.i_vr[k]] = vf
                vref = abs(v) + vf / self.Ka[k]
                given = self.avrs[k].v_ref
                if given is not None and abs(given - vref) > 1e-6:
                    raise InitializationError(
                        f"{name}: AVR reference {given} inconsistent with the operating point "
                        f"(needs {vref:.6f})", device=name)
                self.vref[k] = vref
            if self.has_oxl[k]:
                ifd = eq + (self.xd[k] - self.xd1[k]) * i_d
                if ifd > self.if_lim[k]:
                    raise InitializationError(
                        f"{name}: field current {ifd:.4f} above OXL limit {self.if_lim[k]}",
                        device=name)
                w[self.i_timer[k]] = 0.0
                zd[self.d_flag[k]] = 0.0

    # -- discrete behaviour ----------------------------------------------------
    def discrete_update(self, w, zd, t, zd_new):
        out = []
        for k in np.flatnonzero(self.has_oxl):
            if zd[self.d_flag[k]] < 0.5 and w[self.i_timer[k]] >= self.oxl_act[k]:
                zd_new[self.d_flag[k]] = 1.0
                out.append(("oxl-activate", self.names[k],
                            f"OXL of {self.names[k]} activated (timer {w[self.i_timer[k]]:.4f})"))
        return out

    def kink_distance(self, w, zd):
        dist = [np.inf]
        a = self.has_avr
        if a.any():
            vr = w[self.i_vr[a]]
            dist += list(np.abs(vr - self.vf_min[a])) + list(np.abs(vr - self.vf_max[a]))
        o = self.has_oxl
        if o.any():
            ifd = self.field_current(w)[o]
            dist += list(np.abs(ifd - self.if_lim[o]))
            timer = w[self.i_timer[o]]
            arg = timer - self.oxl_act[o]
            flag = zd[self.d_flag[o]] > 0.5
            dist += list(np.abs(arg[flag])) + list(np.abs(arg[flag] - self.oxl_vmax[o][flag]))
        return float(min(dist))

    def time_constants(self):
        tc = list(self.Td01) + list(self.Tq01) + list(self.Ta[self.has_avr]) + list(self.T0[self.has_oxl])
        return tc
