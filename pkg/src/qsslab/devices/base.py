"""Device contract: each device group writes residual rows and Jacobian entries
into the stacked system vector ``w = [zc, x, y]``.

A device group handles any number of units of one kind so that evaluation is
vectorised.  Rows of differential states carry the state derivative; rows of
algebraic variables carry an equation that is zero at equilibrium.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..state import Layout

_EMPTY_I = np.zeros(0, dtype=np.intp)
_EMPTY_F = np.zeros(0)


@dataclass
class DeviceContribution:
    rows: np.ndarray
    values: np.ndarray
    jac_rows: np.ndarray = _EMPTY_I
    jac_cols: np.ndarray = _EMPTY_I
    jac_values: np.ndarray = _EMPTY_F

    def _select(self, layout: Layout, part: slice):
        mask = (self.rows >= part.start) & (self.rows < part.stop)
        return list(zip((self.rows[mask] - part.start).tolist(), self.values[mask].tolist()))

    def f_entries(self, layout: Layout):
        return self._select(layout, layout.x_slice)

    def g_entries(self, layout: Layout):
        return self._select(layout, layout.y_slice)

    def h_c_entries(self, layout: Layout):
        return self._select(layout, layout.zc_slice)

    def jacobian_entries(self, layout: Layout):
        """(row block, column block, (local row, local col), value) tuples."""
        blocks = (("h_c", layout.zc_slice), ("f", layout.x_slice), ("g", layout.y_slice))
        cblocks = (("zc", layout.zc_slice), ("x", layout.x_slice), ("y", layout.y_slice))

        def find(i, table):
            for name, s in table:
                if s.start <= i < s.stop:
                    return name, i - s.start
            raise IndexError(i)

        out = []
        for r, c, v in zip(self.jac_rows.tolist(), self.jac_cols.tolist(), self.jac_values.tolist()):
            rb, rl = find(r, blocks)
            cb, cl = find(c, cblocks)
            out.append((rb, cb, (rl, cl), v))
        return out

    def dense_jacobian(self, n: int) -> np.ndarray:
        J = np.zeros((n, n))
        np.add.at(J, (self.jac_rows, self.jac_cols), self.jac_values)
        return J


class Device:
    """Base class for device groups."""

    kind = "device"

    def __init__(self, names):
        self.names = list(names)

    def __len__(self):
        return len(self.names)

    def register(self, layout: Layout, system) -> None:
        """Add this group's variables to ``layout`` (local indices only)."""
        raise NotImplementedError

    def bind(self, layout: Layout, system) -> None:
        """Resolve stacked-vector positions once the layout is frozen."""

    def initialize(self, w: np.ndarray, zd: np.ndarray, system) -> None:
        """Back-solve internal states in place; set-points are frozen here."""

    def residual(self, w: np.ndarray, zd: np.ndarray):
        """Return ``(rows, values)`` to be added to the residual vector."""
        return _EMPTY_I, _EMPTY_F

    def jacobian(self, w: np.ndarray, zd: np.ndarray):
        """Return ``(rows, cols, values)`` triplets of the analytic Jacobian."""
        return _EMPTY_I, _EMPTY_I, _EMPTY_F

    def discrete_update(self, w: np.ndarray, zd: np.ndarray, t: float, zd_new: np.ndarray):
        """Apply this group's ``h_d`` map.  Reads ``zd``/``w`` (pre-event) and
        writes into ``zd_new``; returns a list of ``(kind, device, description)``."""
        return []

    def next_event_time(self, zd: np.ndarray) -> float:
        return np.inf

    def pending(self, zd: np.ndarray) -> bool:
        return False

    def kink_distance(self, w: np.ndarray, zd: np.ndarray) -> float:
        return np.inf

    def time_constants(self):
        return []


def _prepare(w, zd, system):
    w = np.asarray(w, dtype=float)
    zd = np.asarray(zd, dtype=float)
    if system is not None:
        system.check_size(w, zd)  # StructureError on a layout mismatch
    return w, zd


def contribute_residuals(device: Device, w, zd, system=None) -> DeviceContribution:
    """Residual contribution of ``device`` at the stacked state ``w``.

    With ``system`` the vector sizes are checked against its layout first.
    """
    w, zd = _prepare(w, zd, system)
    rows, vals = device.residual(w, zd)
    return DeviceContribution(rows=np.asarray(rows, dtype=np.intp), values=np.asarray(vals, dtype=float))


def contribute_jacobian(device: Device, w, zd, system=None) -> DeviceContribution:
    """Analytic Jacobian entries of ``device``'s residual rows."""
    w, zd = _prepare(w, zd, system)
    rows, vals = device.residual(w, zd)
    jr, jc, jv = device.jacobian(w, zd)
    return DeviceContribution(rows=np.asarray(rows, dtype=np.intp), values=np.asarray(vals, dtype=float),
                              jac_rows=np.asarray(jr, dtype=np.intp), jac_cols=np.asarray(jc, dtype=np.intp),
                              jac_values=np.asarray(jv, dtype=float))
