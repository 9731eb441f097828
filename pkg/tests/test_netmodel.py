import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import ybus_accumulate
from rdlpf.netmodel import (CaseFormatError, build_ybus, network_from_json, network_to_json, parse_case,
                            serialize_case)

MIN_TWO_BUS = """
mpc.baseMVA = 100;
mpc.bus = [
 1 3 0 0 0 0 1 1 0 135 1 1.05 0.95;
 2 1 10 5 0 0 1 1 0 135 1 1.05 0.95;
];
mpc.branch = [
 1 2 0 0.1 0 0 0 0 0 0 1 -360 360;
];
"""


def test_minimal_two_bus_parses():
    net = parse_case(MIN_TWO_BUS)
    assert (net.n_bus, net.n_branch, len(net.gens)) == (2, 1, 0)
    assert net.branches[0].tap == 1.0 and net.branches[0].shift == 0.0


def test_ieee14_counts(case14):
    assert (case14.n_bus, case14.n_branch, len(case14.gens)) == (14, 20, 5)


def test_two_slack_buses_rejected():
    text = MIN_TWO_BUS.replace(" 2 1 10 5", " 2 3 10 5")
    with pytest.raises(CaseFormatError, match="multiple slack buses") as err:
        parse_case(text)
    assert err.value.line is not None


@pytest.mark.parametrize("edit, code", [
    (lambda t: t.replace(" 2 1 10 5", " 1 1 10 5"), "duplicate-bus"),
    (lambda t: t.replace(" 1 3 0 0", " 1 1 0 0"), "missing-slack"),
    (lambda t: t.replace(" 1 2 0 0.1 0 0 0 0 0 0 1", " 1 2 0 0.1 0 0 0 0 0 0 0"), "disconnected"),
    (lambda t: t.replace(" 1 2 0 0.1 0 0 0 0 0 0 1 -360 360;", " 1 2 0 0.1;"), "arity"),
    (lambda t: t.replace(" 1 2 0 0.1", " 1 2 0 0"), "zero-impedance"),
])
def test_distinct_diagnostics(edit, code):
    with pytest.raises(CaseFormatError) as err:
        parse_case(edit(MIN_TWO_BUS))
    assert err.value.code == code


def test_single_line_ybus():
    Y = build_ybus(parse_case(MIN_TWO_BUS)).toarray()
    assert np.allclose(Y, [[-10j, 10j], [10j, -10j]], atol=1e-12)


def test_parallel_line_doubles_ybus():
    text = MIN_TWO_BUS.replace("mpc.branch = [\n", "mpc.branch = [\n 1 2 0 0.1 0 0 0 0 0 0 1 -360 360;\n")
    Y1 = build_ybus(parse_case(MIN_TWO_BUS)).toarray()
    Y2 = build_ybus(parse_case(text)).toarray()
    assert np.array_equal(Y2, 2 * Y1)


@pytest.mark.parametrize("fixture", ["case14", "case118"])
def test_ybus_matches_accumulation_oracle(fixture, request):
    net = request.getfixturevalue(fixture)
    assert np.max(np.abs(build_ybus(net).toarray() - ybus_accumulate(net))) <= 1e-12


def test_row_sums_equal_shunts_without_taps(case14):
    text = serialize_case(case14)
    net = parse_case(text)
    # drop transformer taps so the line-charging identity applies
    from dataclasses import replace
    from rdlpf.netmodel import Network
    flat = Network(net.baseMVA, net.buses, tuple(replace(b, tap=1.0, shift=0.0) for b in net.branches),
                   net.gens, name="flat")
    Y = build_ybus(flat).toarray()
    shunt = np.array([(b.Gs + 1j * b.Bs) / flat.baseMVA for b in flat.buses])
    for br in flat.branches:
        shunt[flat.index[br.fbus]] += 0.5j * br.b
        shunt[flat.index[br.tbus]] += 0.5j * br.b
    assert np.allclose(Y.sum(axis=1), shunt, atol=1e-10)


def test_ybus_symmetric_without_phase_shifters(case118):
    assert all(b.shift == 0 for b in case118.branches)
    Y = build_ybus(case118).toarray()
    assert np.allclose(Y, Y.T, atol=1e-14)


@pytest.mark.parametrize("fixture", ["case14", "case118", "two_bus"])
def test_serialize_roundtrip_idempotent(fixture, request):
    net = request.getfixturevalue(fixture)
    once = parse_case(serialize_case(net), name=net.name)
    twice = parse_case(serialize_case(once), name=net.name)
    assert once == net and twice == once
    assert network_from_json(network_to_json(net)) == net


@given(st.floats(0.001, 1.0), st.floats(0.01, 1.0), st.floats(0.0, 0.5))
def test_two_bus_ybus_closed_form(r, x, b):
    text = MIN_TWO_BUS.replace(" 1 2 0 0.1 0", f" 1 2 {r!r} {x!r} {b!r}")
    Y = build_ybus(parse_case(text)).toarray()
    ys = 1 / complex(r, x)
    assert np.allclose(Y, [[ys + 0.5j * b, -ys], [-ys, ys + 0.5j * b]], rtol=1e-13, atol=1e-13)
