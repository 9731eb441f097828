import time

import numpy as np
import pytest

from oracles import gauss_seidel, two_bus_voltage
from rdlpf.acpf import Injections, branch_flows, injections, solve_newton
from rdlpf.netmodel import build_ybus, parse_case


def test_no_load_flat_state():
    text = """
    mpc.baseMVA = 100;
    mpc.bus = [1 3 0 0 0 0 1 1 0 1 1 1 1; 2 1 0 0 0 0 1 1 0 1 1 1 1; 3 1 0 0 0 0 1 1 0 1 1 1 1];
    mpc.branch = [1 2 0.01 0.1 0 0 0 0 0 0 1 0 0; 2 3 0.02 0.2 0 0 0 0 0 0 1 0 0];
    """
    sol = solve_newton(parse_case(text))
    assert sol.converged and sol.iterations == 1
    assert np.allclose(sol.Vm, 1) and np.allclose(sol.Va, 0)
    assert np.allclose(sol.Pf, 0) and np.allclose(sol.Qf, 0)


def test_two_bus_closed_form(two_bus):
    P, Q = 0.5, 0.2
    inj = Injections(np.array([0.0, -P]), np.array([0.0, -Q]), np.array([1.0, 1.0]))
    sol = solve_newton(two_bus, inj, tol=1e-13)
    v, th = two_bus_voltage(P, Q, 0.1)
    assert abs(sol.Vm[1] - v) <= 1e-10
    assert abs(sol.Va[1] - th) <= 1e-10


@pytest.mark.parametrize("fixture", ["case14", "case118"])
def test_newton_matches_gauss_seidel(fixture, request):
    net = request.getfixturevalue(fixture)
    inj = injections(net)
    t0 = time.perf_counter()
    sol = solve_newton(net, inj)
    elapsed = time.perf_counter() - t0
    assert sol.converged and sol.iterations <= 10 and sol.max_mismatch <= 1e-8
    assert elapsed < 1.0
    tight = solve_newton(net, inj, tol=1e-12)
    V_gs, _, mis = gauss_seidel(net, inj.P, inj.Q, inj.Vset, tol=1e-10)
    assert mis <= 1e-10
    assert np.max(np.abs(np.abs(V_gs) - tight.Vm)) <= 1e-8
    assert np.max(np.abs(np.abs(V_gs) - sol.Vm)) <= 1e-8


def test_specified_injections_reproduced(case14):
    inj = injections(case14)
    sol = solve_newton(case14, inj)
    Y = build_ybus(case14)
    S = sol.V * np.conj(Y @ sol.V)
    ref = case14.slack
    pq = [k for k, b in enumerate(case14.buses) if b.kind == "PQ"]
    assert np.max(np.abs(np.delete(S.real - inj.P, ref))) <= 1e-8
    assert np.max(np.abs(S.imag[pq] - inj.Q[pq])) <= 1e-8


@pytest.mark.parametrize("fixture", ["case14", "case118"])
def test_power_balance_and_losses(fixture, request):
    net = request.getfixturevalue(fixture)
    sol = solve_newton(net)
    Sf, St = branch_flows(net, sol.V)
    losses = Sf.real + St.real
    assert abs(sol.P.sum() - losses.sum()) <= 1e-8
    lossy = np.array([br.r > 0 for br in net.branches if br.status])
    assert np.all(losses[lossy] >= -1e-12)


def test_non_convergence_reported(case14):
    Pd = np.array([b.Pd for b in case14.buses]) * 8
    Qd = np.array([b.Qd for b in case14.buses]) * 8
    sol = solve_newton(case14, injections(case14, Pd, Qd), max_iter=8)
    assert not sol.converged and sol.message
