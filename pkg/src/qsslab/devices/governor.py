"""Type-1 turbine governor: droop, output limits, governor and servo lags.

The lead-lag (T3/Tc) is kept exactly; the reheat block (T4/T5) is replaced
by its steady-state gain of one, which is exact when T3 = 0 at equilibrium
and keeps the state count at two.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InitializationError
from .base import Device


@dataclass(frozen=True)
class TurbineGovernorParams:
    omega_ref: float = 1.0
    R: float = 0.02
    p_max: float = 2.0
    p_min: float = 0.3
    Ts: float = 0.1
    Tc: float = 0.45
    T3: float = 0.0
    T4: float = 12.0
    T5: float = 50.0

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError("droop R must be positive")
        if not self.p_min < self.p_max:
            raise ValueError("need p_min < p_max")
        if min(self.T3, self.T4) < 0 or not (self.Ts > 0 and self.Tc > 0 and self.T5 > 0):
            raise ValueError("time constants must be non-negative, Ts/Tc/T5 positive")


def governor_command(params: TurbineGovernorParams, p_order: float, omega: float) -> float:
    """Limited power command ``p_order + (omega_ref - omega)/R``."""
    raw = p_order + (params.omega_ref - omega) / params.R
    return float(np.clip(raw, params.p_min, params.p_max))


class TurbineGovernors(Device):
    """Governor group; each unit drives the mechanical power of one machine."""

    kind = "governor"

    def __init__(self, names, generators, params):
        super().__init__(names)
        self.generators = list(generators)
        self.params = list(params)
        p = self.params
        self.omega_ref = np.array([q.omega_ref for q in p])
        self.R = np.array([q.R for q in p])
        self.p_max = np.array([q.p_max for q in p])
        self.p_min = np.array([q.p_min for q in p])
        self.Ts = np.array([q.Ts for q in p])
        self.Tc = np.array([q.Tc for q in p])
        self.T3 = np.array([q.T3 for q in p])
        self.p_order = np.zeros(len(self))

    def register(self, layout, system):
        machines = system.machines
        self.unit = np.array([machines.names.index(g) for g in self.generators], dtype=int)
        machines.has_tg[self.unit] = True
        self._l1 = np.array([layout.add("zc", f"{n}.tg1") for n in self.names], dtype=int)
        self._l2 = np.array([layout.add("zc", f"{n}.tg2") for n in self.names], dtype=int)
        self.machines = machines

    def bind(self, layout, system):
        self.i_tg1 = layout.w_index("zc", self._l1)
        self.i_tg2 = layout.w_index("zc", self._l2)

    def _command(self, w):
        om = w[self.machines.i_omega[self.unit]]
        raw = self.p_order + (self.omega_ref - om) / self.R
        inside = (raw > self.p_min) & (raw < self.p_max)
        return np.clip(raw, self.p_min, self.p_max), inside

    def mechanical_power(self, w):
        return w[self.i_tg2] + self.T3 / self.Tc * w[self.i_tg1]

    def residual(self, w, zd):
        tin, _ = self._command(w)
        tg1, tg2 = w[self.i_tg1], w[self.i_tg2]
        a = self.T3 / self.Tc
        rows = np.concatenate([self.i_tg1, self.i_tg2, self.machines.i_omega[self.unit]])
        vals = np.concatenate([
            (tin - tg1) / self.Ts,
            ((1 - a) * tg1 - tg2) / self.Tc,
            (tg2 + a * tg1) / self.machines.M[self.unit],
        ])
        return rows, vals

    def jacobian(self, w, zd):
        _, inside = self._command(w)
        a = self.T3 / self.Tc
        M = self.machines.M[self.unit]
        i_om = self.machines.i_omega[self.unit]
        rows = np.concatenate([self.i_tg1, self.i_tg1, self.i_tg2, self.i_tg2, i_om, i_om])
        cols = np.concatenate([self.i_tg1, i_om, self.i_tg1, self.i_tg2, self.i_tg2, self.i_tg1])
        vals = np.concatenate([
            -1.0 / self.Ts,
            np.where(inside, -1.0 / (self.R * self.Ts), 0.0),
            (1 - a) / self.Tc,
            -1.0 / self.Tc,
            1.0 / M,
            a / M,
        ])
        return rows, cols, vals

    def initialize(self, w, zd, system):
        for k, name in enumerate(self.names):
            pm = self.machines.pm0[self.unit[k]]
            if not (self.p_min[k] <= pm <= self.p_max[k]):
                raise InitializationError(
                    f"{name}: mechanical power {pm:.4f} outside governor limits "
                    f"[{self.p_min[k]}, {self.p_max[k]}]", device=name)
            self.p_order[k] = pm
            w[self.i_tg1[k]] = pm
            w[self.i_tg2[k]] = (1 - self.T3[k] / self.Tc[k]) * pm

    def kink_distance(self, w, zd):
        om = w[self.machines.i_omega[self.unit]]
        raw = self.p_order + (self.omega_ref - om) / self.R
        return float(np.min(np.r_[np.abs(raw - self.p_min), np.abs(raw - self.p_max), np.inf]))

    def time_constants(self):
        return list(self.Ts) + list(self.Tc)
