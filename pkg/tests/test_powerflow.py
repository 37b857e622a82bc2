import numpy as np
import pytest
from scipy.optimize import least_squares

from qsslab.errors import NetworkError, PowerFlowError
from qsslab.network import Branch, Bus, Network
from qsslab.powerflow import mismatch, solve_power_flow


def oracle_power_flow(doc):
    """Brute-force reference: minimize the polar mismatch of a hand-assembled Ybus."""
    buses = doc["buses"]
    idx = {b["id"]: k for k, b in enumerate(buses)}
    n = len(buses)
    Y = np.zeros((n, n), dtype=complex)
    for br in doc["branches"]:
        f, t = idx[br["from"]], idx[br["to"]]
        ys = 1 / complex(br.get("r", 0.0), br["x"])
        half = 0.5j * br.get("b", 0.0)
        a = br.get("tap", 1.0)
        Y[f, f] += (ys + half) / a**2
        Y[t, t] += ys + half
        Y[f, t] -= ys / a
        Y[t, f] -= ys / a
    for k, b in enumerate(buses):
        Y[k, k] += complex(b.get("shunt_g", 0.0), b.get("shunt_b", 0.0))
    kind = [b.get("kind", "PQ") for b in buses]
    p = np.array([b.get("gen_p", 0.0) - b.get("load_p", 0.0) for b in buses])
    q = np.array([b.get("gen_q", 0.0) - b.get("load_q", 0.0) for b in buses])
    vm0 = np.array([b.get("voltage", 1.0) for b in buses])
    ang = [k for k in range(n) if kind[k] != "slack"]
    mag = [k for k in range(n) if kind[k] == "PQ"]

    def unpack(u):
        va = np.zeros(n)
        vm = vm0.copy()
        va[ang] = u[: len(ang)]
        vm[mag] = u[len(ang):]
        return vm, va

    def resid(u):
        vm, va = unpack(u)
        v = vm * np.exp(1j * va)
        s = v * np.conj(Y @ v)
        return np.r_[s.real[ang] - p[ang], s.imag[mag] - q[mag]]

    sol = least_squares(resid, np.r_[np.zeros(len(ang)), np.ones(len(mag))], xtol=1e-15, ftol=1e-15,
                        gtol=1e-15, method="lm")
    return unpack(sol.x)


@pytest.mark.parametrize("fixture", ["sys9", "sys14"])
def test_bundled_solution_matches_oracle(fixture, request):
    system = request.getfixturevalue(fixture)
    vm, va = oracle_power_flow(system.case_document)
    pf = system.power_flow
    np.testing.assert_allclose(pf.voltage_magnitudes, vm, atol=1e-6)
    np.testing.assert_allclose(pf.voltage_angles, va, atol=1e-6)


def test_two_bus_no_load_flat():
    net = Network((Bus(1, "slack"), Bus(2)), (Branch("1-2", 1, 2, x=0.1),))
    pf = solve_power_flow(net)
    np.testing.assert_allclose(pf.voltage_magnitudes, 1.0)
    np.testing.assert_allclose(pf.voltage_angles, 0.0)


def test_two_bus_angle_closed_form():
    # P = V1 V2 sin(delta) / x with both magnitudes held at 1
    net = Network((Bus(1, "slack"), Bus(2, "PV", load_p=0.5)), (Branch("1-2", 1, 2, x=0.1),))
    pf = solve_power_flow(net)
    assert pf.voltage_angles[0] - pf.voltage_angles[1] == pytest.approx(0.050021, abs=1e-6)
    assert pf.voltage_angles[0] - pf.voltage_angles[1] == pytest.approx(np.arcsin(0.05), abs=1e-12)


def test_solution_has_zero_mismatch(sys14):
    pf = sys14.power_flow
    dS = mismatch(sys14.network, pf.voltage_magnitudes, pf.voltage_angles)
    kinds = [b.kind for b in sys14.network.buses]
    assert max(abs(dS[k].real) for k in range(len(kinds)) if kinds[k] != "slack") < 1e-9
    assert max(abs(dS[k].imag) for k in range(len(kinds)) if kinds[k] == "PQ") < 1e-9


def test_generation_adds_back_load(sys9):
    gen = sys9.power_flow.generation(sys9.network)
    assert gen[1].real == pytest.approx(1.63)
    assert gen[4].real == pytest.approx(0.0, abs=1e-9)


def test_needs_one_slack():
    net = Network((Bus(1), Bus(2)), (Branch("1-2", 1, 2),))
    with pytest.raises(NetworkError, match="slack"):
        solve_power_flow(net)


def test_infeasible_load_fails():
    net = Network((Bus(1, "slack"), Bus(2, load_p=50.0)), (Branch("1-2", 1, 2, x=0.1),))
    with pytest.raises(PowerFlowError):
        solve_power_flow(net, max_iterations=15)
