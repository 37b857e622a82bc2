"""Partitioned state representation shared by every engine.

The model unknowns are split four ways: continuous slow states ``zc``,
discrete slow states ``zd``, fast differential states ``x`` and algebraic
variables ``y``.  Engines work on the stacked vector ``w = [zc, x, y]``;
``zd`` travels separately because it only changes at event instants.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import StructureError

PARTITIONS = ("zc", "zd", "x", "y")


class Layout:
    """Registry assigning every named variable to exactly one partition.

    Devices call :meth:`add` while the system is being built; the resulting
    positions are fixed afterwards.
    """

    def __init__(self):
        self._names = {p: [] for p in PARTITIONS}
        self._units = {p: [] for p in PARTITIONS}
        self._frozen = False

    def add(self, partition: str, name: str, unit: str = "pu") -> int:
        if self._frozen:
            raise StructureError("layout is frozen")
        if partition not in PARTITIONS:
            raise StructureError(f"unknown partition {partition!r}")
        if any(name in names for names in self._names.values()):
            raise StructureError(f"variable {name!r} registered twice")
        self._names[partition].append(name)
        self._units[partition].append(unit)
        return len(self._names[partition]) - 1

    def freeze(self) -> "Layout":
        self._frozen = True
        return self

    def names(self, partition: str) -> tuple:
        return tuple(self._names[partition])

    def units(self, partition: str) -> tuple:
        return tuple(self._units[partition])

    @property
    def nz(self) -> int:
        return len(self._names["zc"])

    @property
    def nx(self) -> int:
        return len(self._names["x"])

    @property
    def ny(self) -> int:
        return len(self._names["y"])

    @property
    def nd(self) -> int:
        return len(self._names["zd"])

    @property
    def n(self) -> int:
        return self.nz + self.nx + self.ny

    def w_index(self, partition: str, local: int) -> int:
        """Position of a zc/x/y variable inside the stacked vector ``w``."""
        offset = {"zc": 0, "x": self.nz, "y": self.nz + self.nx}[partition]
        return offset + local

    @property
    def zc_slice(self) -> slice:
        return slice(0, self.nz)

    @property
    def x_slice(self) -> slice:
        return slice(self.nz, self.nz + self.nx)

    @property
    def y_slice(self) -> slice:
        return slice(self.nz + self.nx, self.n)

    @property
    def w_names(self) -> tuple:
        return self.names("zc") + self.names("x") + self.names("y")

    @property
    def w_units(self) -> tuple:
        return self.units("zc") + self.units("x") + self.units("y")


@dataclass(frozen=True)
class PartitionedState:
    zc: np.ndarray
    zd: np.ndarray
    x: np.ndarray
    y: np.ndarray
    t: float = 0.0
    epsilon: float = 1.0

    def __post_init__(self):
        for name in PARTITIONS:
            arr = np.array(getattr(self, name), dtype=float).ravel()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not self.epsilon > 0:
            raise StructureError("epsilon must be positive")

    @property
    def tau(self) -> float:
        """Slow time ``t * epsilon``."""
        return self.t * self.epsilon

    @property
    def w(self) -> np.ndarray:
        return np.concatenate([self.zc, self.x, self.y])

    @classmethod
    def from_w(cls, layout: Layout, w, zd, t=0.0, epsilon=1.0) -> "PartitionedState":
        w = np.asarray(w, dtype=float)
        if w.size != layout.n:
            raise StructureError(f"state vector has {w.size} entries, layout expects {layout.n}")
        return cls(zc=w[layout.zc_slice], zd=zd, x=w[layout.x_slice], y=w[layout.y_slice],
                   t=t, epsilon=epsilon)

    def replace(self, **changes) -> "PartitionedState":
        data = dict(zc=self.zc, zd=self.zd, x=self.x, y=self.y, t=self.t, epsilon=self.epsilon)
        data.update(changes)
        return PartitionedState(**data)

    def check(self, layout: Layout) -> None:
        sizes = {"zc": layout.nz, "zd": layout.nd, "x": layout.nx, "y": layout.ny}
        for name, size in sizes.items():
            if getattr(self, name).size != size:
                raise StructureError(f"partition {name} has {getattr(self, name).size} entries, "
                                     f"expected {size}")


@dataclass
class EventRecord:
    """One discrete transition of ``zd`` (or a timed network event)."""

    time: float
    kind: str
    device: str
    description: str
    zd_before: np.ndarray = field(repr=False)
    zd_after: np.ndarray = field(repr=False)

    @property
    def structural(self) -> bool:
        """True when the event changes the model equations, not just a timer."""
        return self.kind not in ("ltc-arm", "ltc-disarm")

    def to_dict(self) -> dict:
        return {
            "time": float(self.time),
            "kind": self.kind,
            "device": self.device,
            "description": self.description,
            "zd_before": [float(v) for v in self.zd_before],
            "zd_after": [float(v) for v in self.zd_after],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EventRecord":
        return cls(time=float(data["time"]), kind=data["kind"], device=data["device"],
                   description=data["description"],
                   zd_before=np.array(data["zd_before"], dtype=float),
                   zd_after=np.array(data["zd_after"], dtype=float))
