from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stackgrid.case import (
    CaseError,
    load_case,
    parse_matpower_case,
    parse_native_case,
    serialize_matpower_case,
    serialize_native_case,
    validate_case,
)

from .conftest import DATA

TWO_BUS = {
    "name": "two",
    "base_mva": 100,
    "buses": [
        {"id": 1, "kind": "slack", "vset": 1.0},
        {"id": 2, "kind": "load", "pd": 10, "qd": 5},
    ],
    "branches": [{"from": 1, "to": 2, "r": 0, "x": 0.1}],
}


def doc(**changes):
    d = json.loads(json.dumps(TWO_BUS))
    d.update(changes)
    return d


def test_minimal_two_bus():
    case = parse_native_case(json.dumps(TWO_BUS))
    assert case.n_loads == 1 and case.n_generators == 1
    assert case.bus(2).q_demand == pytest.approx(0.05)
    assert case.bus(2).p_demand == pytest.approx(0.1)


def test_bundled_case9_shape(case9):
    assert case9.n_loads == 6
    assert case9.load_ids == [4, 5, 6, 7, 8, 9]
    assert case9.n_generators == 3
    assert case9.slack_id == 1


def test_two_slacks_named():
    d = doc()
    d["buses"][1]["kind"] = "slack"
    with pytest.raises(CaseError, match=r"\[1, 2\]"):
        parse_native_case(json.dumps(d))


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda d: d["buses"].append({"id": 2, "kind": "load"}), "duplicate bus ids"),
        (lambda d: d["branches"].append({"from": 2, "to": 7, "r": 0, "x": 0.1}), "unknown bus"),
        (lambda d: d["branches"][0].update(x=0.0), "zero reactance"),
        (lambda d: d["branches"][0].update(to=1), "from_bus equals to_bus"),
        (lambda d: d["buses"][0].update(bogus=1), "unknown keys"),
        (lambda d: d["buses"][1].pop("kind"), "missing"),
        (lambda d: d["buses"][1].update(qd="5"), "must be a number"),
        (lambda d: d["buses"][0].update(vset=1.2), "setpoint"),
        (lambda d: d.update(extra=3), "unknown keys"),
        (lambda d: d["buses"].append({"id": 3, "kind": "load"}), "unreachable buses: \\[3\\]"),
    ],
)
def test_native_schema_errors(mutate, message):
    d = doc()
    mutate(d)
    with pytest.raises(CaseError, match=message):
        parse_native_case(json.dumps(d))


def test_malformed_json():
    with pytest.raises(CaseError, match="malformed JSON"):
        parse_native_case("{not json")


@pytest.mark.parametrize("name", ["case9", "case39", "case39_stressed"])
def test_parsers_agree_on_bundled_data(name):
    native = load_case(DATA / f"{name}.json")
    mp = load_case(DATA / f"{name}.m")
    assert native == mp
    for a, b in zip(native.buses, mp.buses):
        assert a == b


@pytest.mark.parametrize("name", ["case9", "case39", "case39_stressed"])
def test_native_round_trip(name):
    case = load_case(DATA / f"{name}.json")
    again = parse_native_case(serialize_native_case(case))
    assert again == case
    assert parse_matpower_case(serialize_matpower_case(case), name=case.name) == case


def test_case39_has_29_loads():
    case = load_case(DATA / "case39.m")
    assert case.n_loads == 29
    assert case.n_generators == 10
    assert case.slack_id == 31


def test_index_map_is_bijection(case9):
    ids = [b.id for b in case9.buses]
    assert sorted(case9.index_of(i) for i in ids) == list(range(case9.n_buses))
    for i in ids:
        assert case9.buses[case9.index_of(i)].id == i
    with pytest.raises(CaseError):
        case9.index_of(99)


def test_load_first_order(case9):
    kinds = [b.kind for b in case9.buses]
    assert kinds[:6] == ["load"] * 6
    assert set(kinds[6:]) == {"slack", "generator"}


def test_validate_clean_case(case9):
    rep = validate_case(case9)
    assert rep.ok and not rep.warnings and not rep.unreachable


def test_validate_capacitive_load_warns(case9):
    buses = [b if b.id != 5 else b.__class__(**{**b.__dict__, "q_demand": -b.q_demand}) for b in case9.buses]
    case = case9.with_buses(buses)
    rep = validate_case(case)
    assert rep.ok
    assert any("bus 5" in w and "capacitive" in w for w in rep.warnings)


def test_validate_reports_unreachable(case9):
    # bus 3 hangs off a single transformer; removing it isolates the bus
    from stackgrid.case import PowerSystemCase

    branches = tuple(br for br in case9.branches if {br.from_bus, br.to_bus} != {3, 9})
    broken = PowerSystemCase(case9.name, case9.base_mva, case9.buses, branches)
    rep = validate_case(broken)
    assert not rep.ok
    assert rep.unreachable == [3]
    assert broken.branches == branches  # never mutated


MP_HEADER = """function mpc = tiny
mpc.baseMVA = 100;
mpc.bus = [
 1 3 0 0 0 0 1 1.0 0 345 1 1.1 0.9;
 2 1 10 5 0 0 1 1.0 0 345 1 1.1 0.9;
];
mpc.gen = [
 1 0 0 100 -100 1.0 100 1 100 0;
];
"""


def test_matpower_phase_shifter_rejected():
    text = MP_HEADER + "mpc.branch = [\n 1 2 0 0.1 0 0 0 0 0 10 1 -360 360;\n];\n"
    with pytest.raises(CaseError, match="phase shift"):
        parse_matpower_case(text)


def test_matpower_missing_block():
    with pytest.raises(CaseError, match="mpc.branch"):
        parse_matpower_case(MP_HEADER)


def test_matpower_ragged_row():
    text = MP_HEADER + "mpc.branch = [\n 1 2 0 0.1 0 0 0 0 0 0 1 -360 360;\n 1 2 0 0.1 0 0 0 0 0 0 1;\n];\n"
    with pytest.raises(CaseError, match="columns"):
        parse_matpower_case(text)


def test_matpower_skips_out_of_service_branch():
    text = MP_HEADER + (
        "mpc.branch = [\n 1 2 0 0.1 0 0 0 0 0 0 1 -360 360;\n 1 2 0 0.2 0 0 0 0 0 0 0 -360 360;\n];\n"
    )
    case = parse_matpower_case(text)
    assert len(case.branches) == 1
    assert case.bus(2).q_demand == pytest.approx(0.05)


def test_matpower_equals_native_for_same_data():
    text = MP_HEADER + "mpc.branch = [\n 1 2 0 0.1 0 0 0 0 0 0 1 -360 360;\n];\n"
    mp = parse_matpower_case(text, name="two")
    nat = parse_native_case(json.dumps(doc()))
    # native omits the MATPOWER default voltage for the load bus
    assert [b.kind for b in mp.buses] == [b.kind for b in nat.buses]
    assert np.allclose(mp.q_load, nat.q_load)
    assert mp.branches == nat.branches


@settings(max_examples=60, deadline=None)
@given(
    qd=st.lists(st.floats(0, 500, allow_nan=False), min_size=3, max_size=3),
    x=st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3),
    base=st.sampled_from([10.0, 100.0, 1000.0]),
)
def test_round_trip_property(qd, x, base):
    qd = [round(v, 4) for v in qd]
    d = {
        "name": "chain",
        "base_mva": base,
        "buses": [{"id": 1, "kind": "slack"}] + [{"id": i + 2, "kind": "load", "qd": q} for i, q in enumerate(qd)],
        "branches": [{"from": i + 1, "to": i + 2, "r": 0.0, "x": xi} for i, xi in enumerate(x)],
    }
    case = parse_native_case(json.dumps(d))
    assert parse_native_case(serialize_native_case(case)) == case
