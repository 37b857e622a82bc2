"""Newton-Raphson power flow in polar coordinates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NetworkError, PowerFlowError
from .network import Network


@dataclass(frozen=True)
class PowerFlowSolution:
    bus_ids: tuple
    voltage_magnitudes: np.ndarray
    voltage_angles: np.ndarray
    p_injection: np.ndarray
    q_injection: np.ndarray
    iteration_count: int
    max_mismatch: float

    @property
    def voltages(self) -> np.ndarray:
        return self.voltage_magnitudes * np.exp(1j * self.voltage_angles)

    def slack_injection(self, network: Network) -> complex:
        k = network.bus_index[network.slack_buses()[0]]
        return complex(self.p_injection[k], self.q_injection[k])

    def generation(self, network: Network) -> np.ndarray:
        """Complex generation per bus (injection plus constant-power load)."""
        load = np.array([complex(b.load_p, b.load_q) for b in network.buses])
        return self.p_injection + 1j * self.q_injection + load


def mismatch(network: Network, vm: np.ndarray, va: np.ndarray) -> np.ndarray:
    """Complex power mismatch S_spec - S_calc at every bus."""
    y = network.admittance.entries
    v = vm * np.exp(1j * va)
    s_calc = v * np.conj(y @ v)
    s_spec = np.array([complex(b.gen_p - b.load_p, b.gen_q - b.load_q) for b in network.buses])
    return s_spec - s_calc


def solve_power_flow(network: Network, tolerance: float = 1e-10, max_iterations: int = 30,
                     flat_start: bool = True) -> PowerFlowSolution:
    """Solve the bus voltages of ``network``.

    PV and slack buses hold their ``voltage`` set-point; the slack angle is
    its ``angle`` field.  Raises :class:`PowerFlowError` on a singular
    Jacobian or when ``max_iterations`` is exhausted.
    """
    slack = network.slack_buses()
    if len(slack) != 1:
        raise NetworkError(f"power flow needs exactly one slack bus, found {len(slack)}")
    kinds = np.array([b.kind for b in network.buses])
    pv = np.flatnonzero(kinds == "PV")
    pq = np.flatnonzero(kinds == "PQ")
    pvpq = np.r_[pv, pq]

    vm = np.array([b.voltage if (b.kind != "PQ" or not flat_start) else 1.0 for b in network.buses])
    va = np.zeros(network.n_bus)
    k_slack = network.bus_index[slack[0]]
    va[k_slack] = network.bus(slack[0]).angle
    if flat_start:
        va[:] = va[k_slack]

    y = network.admittance.toarray()
    npv, npq = len(pv), len(pq)
    for it in range(max_iterations + 1):
        dS = mismatch(network, vm, va)
        F = np.r_[dS.real[pvpq], dS.imag[pq]]
        err = float(np.max(np.abs(F))) if F.size else 0.0
        if err <= tolerance:
            break
        if it == max_iterations:
            raise PowerFlowError(f"no convergence after {max_iterations} iterations "
                                 f"(max mismatch {err:.3e})", iteration=it, mismatch=err)
        v = vm * np.exp(1j * va)
        ibus = y @ v
        diag_v = np.diag(v)
        dS_dVa = 1j * diag_v @ np.conj(np.diag(ibus) - y @ diag_v)
        dS_dVm = diag_v @ np.conj(y @ np.diag(v / vm)) + np.conj(np.diag(ibus)) @ np.diag(v / vm)
        J = np.block([
            [dS_dVa[np.ix_(pvpq, pvpq)].real, dS_dVm[np.ix_(pvpq, pq)].real],
            [dS_dVa[np.ix_(pq, pvpq)].imag, dS_dVm[np.ix_(pq, pq)].imag],
        ])
        try:
            dx = np.linalg.solve(J, F)
        except np.linalg.LinAlgError:
            raise PowerFlowError(f"singular power-flow Jacobian at iteration {it}",
                                 iteration=it, mismatch=err) from None
        if np.linalg.cond(J) > 1e14:
            raise PowerFlowError(f"singular power-flow Jacobian at iteration {it}",
                                 iteration=it, mismatch=err)
        va[pvpq] += dx[: npv + npq]
        vm[pq] += dx[npv + npq:]

    v = vm * np.exp(1j * va)
    s = v * np.conj(y @ v)
    return PowerFlowSolution(
        bus_ids=tuple(b.id for b in network.buses),
        voltage_magnitudes=vm,
        voltage_angles=va,
        p_injection=s.real,
        q_injection=s.imag,
        iteration_count=it,
        max_mismatch=err,
    )
