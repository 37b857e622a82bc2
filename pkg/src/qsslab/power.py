"""Power-system model: network equations plus dynamic devices.

Bus voltages are algebraic variables in rectangular form, interleaved
``(Vr, Vi)`` per bus at the head of ``y``.  The network rows of ``g`` are the
nodal current balance ``sum(device injections) - Y V = 0``.  Loads not
covered by a dynamic model are constant admittances at their power-flow
voltage.  The nodal matrix depends on ``zd`` through switchable branch
statuses, fault flags and tap positions.
"""
from __future__ import annotations

import logging
import warnings

import numpy as np

from .devices.loads import ConstantPowerInjections
from .errors import InitializationError, NetworkError
from .network import Network, apply_contingency, build_admittance
from .powerflow import PowerFlowSolution, solve_power_flow
from .model import DynamicSystem, Scenario
from .state import Layout, PartitionedState

logger = logging.getLogger(__name__)

_BRANCH_EVENTS = ("branch-trip", "branch-close")
_FAULT_EVENTS = ("bus-fault", "fault-clear")


def _stamp(real, i, j, y):
    real[2 * i, 2 * j] += y.real
    real[2 * i, 2 * j + 1] -= y.imag
    real[2 * i + 1, 2 * j] += y.imag
    real[2 * i + 1, 2 * j + 1] += y.real


class PowerSystemModel(DynamicSystem):
    """Assembled long-term model of a power network and its devices.

    Parameters
    ----------
    network : Network
        Pre-disturbance network; its power flow defines the initial state.
    machines, governors, loads, ltcs : device groups or None
    scenario : Scenario
        Timed contingencies and run settings.
    power_flow : PowerFlowSolution, optional
        Reuse an existing solution instead of solving again.
    """

    def __init__(self, network: Network, machines=None, governors=None, loads=None, ltcs=None,
                 scenario: Scenario | None = None, power_flow: PowerFlowSolution | None = None,
                 name="power", init_tolerance=1e-8, static_load="impedance"):
        if static_load not in ("impedance", "power"):
            raise ValueError(f"static_load must be 'impedance' or 'power', got {static_load!r}")
        self.static_load = static_load
        self.name = name
        self.network = network
        self.machines = machines
        self.governors = governors
        self.loads = loads
        self.ltcs = ltcs
        self.scenario = scenario or Scenario()
        self.init_tolerance = init_tolerance
        self._check_events()
        self.power_flow = power_flow or solve_power_flow(network)
        self.bus_generation = self.power_flow.generation(network)

        slack = network.slack_buses()[0]
        self.slack_bus = slack
        self.reference_machine = None
        if machines is not None and slack in machines.buses:
            self.reference_machine = ("generator", machines.buses.index(slack))
        self.infinite_source = self.reference_machine is None

        gen_buses = set(machines.buses) if machines is not None else set()
        inj = [(b.id, self.bus_generation[k]) for k, b in enumerate(network.buses)
               if b.id not in gen_buses and b.id != slack and abs(self.bus_generation[k]) > 1e-12]
        self.injections = ConstantPowerInjections([f"inj{b}" for b, _ in inj], [b for b, _ in inj],
                                                  [s for _, s in inj]) if inj else None

        self.devices = [d for d in (machines, governors, loads, ltcs, self.injections) if d is not None]
        self._build_layout()
        self._build_admittance_parts()
        self._y_cache = {}
        self._state0 = self._initialize()

    # -- construction --------------------------------------------------------
    def _check_events(self):
        net = self.network
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            for ev in self.scenario.sorted_events():
                if ev.kind in _BRANCH_EVENTS:
                    net.branch(ev.target)
                elif ev.target not in net.bus_index:
                    raise NetworkError(f"event {ev.kind} at unknown bus {ev.target!r}")
                net = apply_contingency(net, ev)

    def _build_layout(self):
        net = self.network
        lay = Layout()
        for b in net.buses:
            lay.add("y", f"bus{b.id}.vr")
            lay.add("y", f"bus{b.id}.vi")
        if self.infinite_source:
            self._l_src = (lay.add("y", "source.ir"), lay.add("y", "source.ii"))
        for dev in self.devices:
            dev.register(lay, self)
        self.static_loads = None
        if self.static_load == "power":
            p, q = self._static_shares()
            keep = [k for k in range(net.n_bus) if abs(p[k]) + abs(q[k]) > 0]
            if keep:
                self.static_loads = ConstantPowerInjections(
                    [f"load{net.buses[k].id}" for k in keep], [net.buses[k].id for k in keep],
                    [-complex(p[k], q[k]) for k in keep])
                self.devices.append(self.static_loads)
        self.switch_branches = sorted({ev.target for ev in self.scenario.events if ev.kind in _BRANCH_EVENTS},
                                      key=lambda b: net.branch_index[b])
        self.fault_buses = sorted({ev.target for ev in self.scenario.events if ev.kind in _FAULT_EVENTS},
                                  key=lambda b: net.bus_index[b])
        self.d_status = {b: lay.add("zd", f"branch{b}.status", "flag") for b in self.switch_branches}
        self.d_fault = {b: lay.add("zd", f"bus{b}.fault", "flag") for b in self.fault_buses}
        self.layout = lay.freeze()
        self.i_bus = np.arange(lay.w_index("y", 0), lay.w_index("y", 2 * net.n_bus))
        if self.infinite_source:
            self.i_src = np.array([lay.w_index("y", i) for i in self._l_src])
            self.i_src_bus = self.bus_vr_index(self.slack_bus) + np.array([0, 1])
        for dev in self.devices:
            dev.bind(lay, self)

    def bus_vr_index(self, bus_id) -> int:
        return self.layout.w_index("y", 2 * self.network.bus_index[bus_id])

    def _build_admittance_parts(self):
        net = self.network
        self.ltc_branch = {}
        if self.ltcs is not None:
            for k, b in enumerate(self.ltcs.branches):
                net.branch(b)
                self.ltc_branch[b] = k
        variable = list(dict.fromkeys(list(self.switch_branches) + list(self.ltc_branch)))
        self.variable_branches = variable
        fixed_net = net
        for b in variable:
            fixed_net = fixed_net.replace_branch(b, in_service=False)
        y_fixed = build_admittance(fixed_net).toarray()
        if self.static_load == "impedance":
            # static share of every load as a constant admittance
            vm = self.power_flow.voltage_magnitudes
            p, q = self._static_shares()
            for k in range(net.n_bus):
                y_fixed[k, k] += complex(p[k], -q[k]) / vm[k] ** 2
        n = net.n_bus
        real = np.zeros((2 * n, 2 * n))
        real[0::2, 0::2] = y_fixed.real
        real[0::2, 1::2] = -y_fixed.imag
        real[1::2, 0::2] = y_fixed.imag
        real[1::2, 1::2] = y_fixed.real
        self._y_fixed_real = real
        self.static_load_admittance = None

    def _static_shares(self):
        """Per-bus load not covered by a dynamic load model."""
        net = self.network
        p = np.array([b.load_p for b in net.buses], dtype=float)
        q = np.array([b.load_q for b in net.buses], dtype=float)
        if self.loads is not None:
            for k, b in enumerate(self.loads.buses):
                p[net.bus_index[b]] -= self.loads.P0[k]
                q[net.bus_index[b]] -= self.loads.Q0[k]
        return p, q

    def _zd_key(self, zd):
        idx = [self.d_status[b] for b in self.switch_branches]
        idx += [self.d_fault[b] for b in self.fault_buses]
        if self.ltcs is not None:
            idx += list(self.ltcs.d_tap)
        return tuple(float(zd[i]) for i in idx)

    def admittance_real(self, zd) -> np.ndarray:
        """Real 2n x 2n nodal matrix for discrete state ``zd`` (cached)."""
        key = self._zd_key(zd)
        hit = self._y_cache.get(key)
        if hit is not None:
            return hit
        real = self._y_fixed_real.copy()
        net = self.network
        for b in self.variable_branches:
            br = net.branch(b)
            on = zd[self.d_status[b]] > 0.5 if b in self.d_status else br.in_service
            if not on:
                continue
            tap = zd[self.ltcs.d_tap[self.ltc_branch[b]]] if b in self.ltc_branch else br.tap
            f, t = net.bus_index[br.from_bus], net.bus_index[br.to_bus]
            ys = br.series_admittance
            ysh = 0.5j * br.b
            _stamp(real, f, f, (ys + ysh) / tap**2)
            _stamp(real, f, t, -ys / tap)
            _stamp(real, t, f, -ys / tap)
            _stamp(real, t, t, ys + ysh)
        for b in self.fault_buses:
            if zd[self.d_fault[b]] > 0.5:
                ev = next(e for e in self.scenario.events if e.kind == "bus-fault" and e.target == b)
                k = net.bus_index[b]
                _stamp(real, k, k, 1.0 / complex(ev.impedance))
        real.setflags(write=False)
        if len(self._y_cache) > 512:
            self._y_cache.clear()
        self._y_cache[key] = real
        return real

    def _initialize(self) -> PartitionedState:
        lay = self.layout
        w = np.zeros(lay.n)
        zd = np.zeros(lay.nd)
        v = self.power_flow.voltages
        w[self.i_bus[0::2]] = v.real
        w[self.i_bus[1::2]] = v.imag
        for b in self.switch_branches:
            zd[self.d_status[b]] = 1.0 if self.network.branch(b).in_service else 0.0
        for b in self.fault_buses:
            zd[self.d_fault[b]] = 0.0
        if self.infinite_source:
            k = self.network.bus_index[self.slack_bus]
            cur = np.conj(self.bus_generation[k] / v[k])
            w[self.i_src] = cur.real, cur.imag
            self.source_voltage = np.array([v[k].real, v[k].imag])
        for dev in self.devices:
            dev.initialize(w, zd, self)
        r = self.residual(w, zd)
        worst = int(np.argmax(np.abs(r))) if r.size else 0
        if r.size and abs(r[worst]) > self.init_tolerance:
            name = lay.w_names[worst]
            raise InitializationError(
                f"initial residual {abs(r[worst]):.3e} at {name} exceeds {self.init_tolerance:g}",
                device=name.split(".")[0])
        return PartitionedState.from_w(lay, w, zd, t=0.0, epsilon=self.epsilon)

    # -- evaluation ------------------------------------------------------------
    def residual(self, w, zd):
        n = self.layout.n
        r = np.zeros(n)
        r[self.i_bus] = -(self.admittance_real(zd) @ w[self.i_bus])
        for dev in self.devices:
            rows, vals = dev.residual(w, zd)
            r += np.bincount(rows, weights=vals, minlength=n)
        if self.infinite_source:
            r[self.i_src_bus] += w[self.i_src]
            r[self.i_src] = w[self.i_src_bus] - self.source_voltage
        return r

    def jacobian(self, w, zd):
        n = self.layout.n
        J = np.zeros((n, n))
        J[np.ix_(self.i_bus, self.i_bus)] = -self.admittance_real(zd)
        flat = J.ravel()
        for dev in self.devices:
            rows, cols, vals = dev.jacobian(w, zd)
            flat += np.bincount(rows * n + cols, weights=vals, minlength=n * n)
        if self.infinite_source:
            J[self.i_src_bus, self.i_src] += 1.0
            J[self.i_src, self.i_src_bus] = 1.0
        return J

    def initial_state(self) -> PartitionedState:
        return self._state0

    # -- discrete behaviour ----------------------------------------------------
    def discrete_update(self, w, zd, t):
        zd_new = np.array(zd, dtype=float)
        records = []
        for dev in self.devices:
            records += dev.discrete_update(w, zd, t, zd_new)
        return zd_new, records

    def apply_timed_event(self, zd, event):
        zd_new = np.array(zd, dtype=float)
        if event.kind in _BRANCH_EVENTS:
            target = 0.0 if event.kind == "branch-trip" else 1.0
            i = self.d_status[event.target]
            if zd_new[i] == target:
                warnings.warn(f"branch {event.target} already in requested state; event ignored",
                              RuntimeWarning, stacklevel=2)
            zd_new[i] = target
            verb = "tripped" if target == 0.0 else "closed"
            return zd_new, (event.kind, f"branch{event.target}", f"branch {event.target} {verb}")
        i = self.d_fault[event.target]
        zd_new[i] = 1.0 if event.kind == "bus-fault" else 0.0
        verb = "fault applied" if event.kind == "bus-fault" else "fault cleared"
        return zd_new, (event.kind, f"bus{event.target}", f"bus {event.target} {verb}")

    def next_event_time(self, zd):
        return min([dev.next_event_time(zd) for dev in self.devices] + [np.inf])

    def pending(self, zd):
        return any(dev.pending(zd) for dev in self.devices)

    def kink_distance(self, w, zd):
        return min([dev.kink_distance(w, zd) for dev in self.devices] + [np.inf])

    @property
    def epsilon(self) -> float:
        tcs = [t for dev in self.devices for t in dev.time_constants()]
        return 1.0 / max(tcs) if tcs else 1.0

    # -- views ----------------------------------------------------------------
    def bus_voltage_magnitudes(self, w) -> np.ndarray:
        w = np.asarray(w)
        return np.hypot(w[..., self.i_bus[0::2]], w[..., self.i_bus[1::2]])

    def bus_voltage_names(self) -> list:
        return [f"bus{b.id}" for b in self.network.buses]


def initialize_dynamic_state(network: Network, solution: PowerFlowSolution | None = None,
                             devices: dict | None = None, scenario: Scenario | None = None):
    """Equilibrium state of ``network`` with ``devices`` at its power flow.

    ``devices`` maps ``machines``/``governors``/``loads``/``ltcs`` to device
    groups.  Returns ``(system, state)``; the state's residuals are below the
    initialization tolerance or :class:`InitializationError` is raised.
    """
    system = PowerSystemModel(network, scenario=scenario, power_flow=solution, **(devices or {}))
    return system, system.initial_state()
