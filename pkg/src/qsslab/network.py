"""Network topology, nodal admittance assembly and contingency handling.

All quantities are per unit on the case MVA base.  Bus order is the order
of the case file and is never changed.
"""
from __future__ import annotations

import dataclasses
import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import NetworkError

logger = logging.getLogger(__name__)

BUS_KINDS = ("slack", "PV", "PQ")


@dataclass(frozen=True)
class Bus:
    id: int | str
    kind: str = "PQ"
    voltage: float = 1.0
    angle: float = 0.0
    shunt_g: float = 0.0
    shunt_b: float = 0.0
    load_p: float = 0.0
    load_q: float = 0.0
    gen_p: float = 0.0
    gen_q: float = 0.0

    def __post_init__(self):
        if self.kind not in BUS_KINDS:
            raise NetworkError(f"bus {self.id}: unknown kind {self.kind!r}")
        if not self.voltage > 0:
            raise NetworkError(f"bus {self.id}: voltage magnitude must be positive")


@dataclass(frozen=True)
class Branch:
    id: str
    from_bus: int | str
    to_bus: int | str
    r: float = 0.0
    x: float = 0.1
    b: float = 0.0
    tap: float = 1.0
    in_service: bool = True

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise NetworkError(f"branch {self.id}: from_bus equals to_bus")
        if abs(complex(self.r, self.x)) == 0.0:
            raise NetworkError(f"branch {self.id}: zero series impedance")
        if not self.tap > 0:
            raise NetworkError(f"branch {self.id}: tap ratio must be positive")

    @property
    def series_admittance(self) -> complex:
        return 1.0 / complex(self.r, self.x)


@dataclass(frozen=True)
class ContingencyEvent:
    """A timed network event.

    ``kind`` is one of ``branch-trip``, ``branch-close``, ``bus-fault`` and
    ``fault-clear``.  For faults ``target`` is a bus id and ``impedance`` the
    fault impedance to ground.
    """

    kind: str
    target: int | str
    time: float = 0.0
    impedance: complex = 1e-4j

    KINDS = ("branch-trip", "branch-close", "bus-fault", "fault-clear")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise NetworkError(f"unknown event kind {self.kind!r}")


@dataclass(frozen=True)
class AdmittanceMatrix:
    bus_ids: tuple
    entries: sp.csr_matrix

    @property
    def dimension(self) -> int:
        return len(self.bus_ids)

    def toarray(self) -> np.ndarray:
        return self.entries.toarray()

    def real_form(self) -> np.ndarray:
        """Dense 2n x 2n real matrix mapping interleaved (Vr, Vi) to (Ir, Ii)."""
        y = self.toarray()
        n = y.shape[0]
        out = np.zeros((2 * n, 2 * n))
        out[0::2, 0::2] = y.real
        out[0::2, 1::2] = -y.imag
        out[1::2, 0::2] = y.imag
        out[1::2, 1::2] = y.real
        return out


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    base_mva: float = 100.0
    frequency: float = 60.0
    faults: tuple = field(default=())  # (bus id, admittance) pairs

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "faults", tuple(self.faults))

    @cached_property
    def bus_index(self) -> dict:
        return {b.id: k for k, b in enumerate(self.buses)}

    @cached_property
    def branch_index(self) -> dict:
        return {br.id: k for k, br in enumerate(self.branches)}

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def bus(self, bus_id) -> Bus:
        return self.buses[self.bus_index[bus_id]]

    def branch(self, branch_id) -> Branch:
        try:
            return self.branches[self.branch_index[branch_id]]
        except KeyError:
            raise NetworkError(f"unknown branch {branch_id!r}") from None

    @cached_property
    def admittance(self) -> AdmittanceMatrix:
        return build_admittance(self)

    def replace_branch(self, branch_id, **changes) -> "Network":
        k = self.branch_index[branch_id]
        branches = list(self.branches)
        branches[k] = dataclasses.replace(branches[k], **changes)
        return dataclasses.replace(self, branches=tuple(branches))

    def slack_buses(self) -> list:
        return [b.id for b in self.buses if b.kind == "slack"]

    def check_islands(self, context="") -> None:
        """Raise NetworkError if the in-service branches leave isolated buses."""
        n = self.n_bus
        rows, cols = [], []
        for br in self.branches:
            if br.in_service:
                rows.append(self.bus_index[br.from_bus])
                cols.append(self.bus_index[br.to_bus])
        graph = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        count, labels = connected_components(graph, directed=False)
        if count > 1:
            main = np.bincount(labels).argmax()
            lost = [self.buses[k].id for k in range(n) if labels[k] != main]
            raise NetworkError(f"{context}network splits into {count} islands; isolated buses {lost}")


def build_admittance(network: Network) -> AdmittanceMatrix:
    """Nodal admittance matrix with shunts, line charging and off-nominal taps.

    Tap ratio ``a`` sits on the from side (``V_from / a`` reaches the series
    impedance), so raising ``a`` lowers the to-bus voltage.
    """
    n = network.n_bus
    index = network.bus_index
    rows, cols, vals = [], [], []
    for br in network.branches:
        for end in (br.from_bus, br.to_bus):
            if end not in index:
                raise NetworkError(f"branch {br.id}: endpoint {end!r} is not a bus")
        if not br.in_service:
            continue
        f, t = index[br.from_bus], index[br.to_bus]
        ys = br.series_admittance
        ysh = 0.5j * br.b
        a = br.tap
        rows += [f, f, t, t]
        cols += [f, t, f, t]
        vals += [(ys + ysh) / a**2, -ys / a, -ys / a, ys + ysh]
    for k, bus in enumerate(network.buses):
        rows.append(k)
        cols.append(k)
        vals.append(complex(bus.shunt_g, bus.shunt_b))
    for bus_id, y in network.faults:
        k = index[bus_id]
        rows.append(k)
        cols.append(k)
        vals.append(complex(y))
    y = sp.coo_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=(n, n)).tocsr()
    y.sum_duplicates()
    return AdmittanceMatrix(bus_ids=tuple(b.id for b in network.buses), entries=y)


def apply_contingency(network: Network, event: ContingencyEvent) -> Network:
    """Return a modified copy of ``network``; the original is untouched."""
    if event.kind in ("branch-trip", "branch-close"):
        br = network.branch(event.target)
        closing = event.kind == "branch-close"
        if br.in_service == closing:
            warnings.warn(f"branch {br.id} already {'in' if closing else 'out of'} service; "
                          "event ignored", RuntimeWarning, stacklevel=2)
            return network
        new = network.replace_branch(br.id, in_service=closing)
        if not closing:
            new.check_islands(context=f"tripping {br.id}: ")
        return new
    if event.target not in network.bus_index:
        raise NetworkError(f"fault at unknown bus {event.target!r}")
    if event.kind == "bus-fault":
        y = 1.0 / complex(event.impedance)
        return dataclasses.replace(network, faults=network.faults + ((event.target, y),))
    faults = tuple(f for f in network.faults if f[0] != event.target)
    if len(faults) == len(network.faults):
        warnings.warn(f"no fault at bus {event.target}; event ignored", RuntimeWarning, stacklevel=2)
    return dataclasses.replace(network, faults=faults)
