from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nandmacro.array import ArraySpec, CellStateGrid, build_array, probe_gate, set_cell_state
from nandmacro.circuit import Ramp, VSource
from nandmacro.coupling import ArrayPitch, CouplingCaps, estimate_coupling_caps
from nandmacro.device import DeviceGeometry, DeviceModelParams
from nandmacro.errors import NetlistError, NetlistParseError
from nandmacro.netlist import emit_netlist, parse_netlist

GOLDEN = Path(__file__).parent / "golden" / "array_1x1x2.cir"
CAPS = estimate_coupling_caps(DeviceGeometry(), ArrayPitch())


def emit(spec, states=None):
    states = states or CellStateGrid(spec)
    return emit_netlist(build_array(spec, states), spec, states)


def test_golden_1x1x2():
    spec = ArraySpec(1, 1, 2, coupling=CAPS)
    states = CellStateGrid.from_entries(spec, [(0, 0, 1, 0.5)])
    assert emit(spec, states).text == GOLDEN.read_text(encoding="utf-8")


def test_golden_parses_back_to_the_built_array():
    spec = ArraySpec(1, 1, 2, coupling=CAPS)
    states = CellStateGrid.from_entries(spec, [(0, 0, 1, 0.5)])
    assert parse_netlist(GOLDEN.read_text(encoding="utf-8")) == build_array(spec, states).rounded()


def test_emission_is_byte_identical_across_runs(tmp_path):
    spec = ArraySpec(3, 3, 10, coupling=CAPS)
    a, b = tmp_path / "a.cir", tmp_path / "b.cir"
    emit(spec).write(a)
    emit(spec).write(b)
    assert a.read_bytes() == b.read_bytes()
    data = a.read_bytes()
    assert b"\r" not in data and data.endswith(b".END\n")


def test_default_array_card_counts():
    text = emit(ArraySpec(3, 3, 10, coupling=CAPS)).text
    caps = [line for line in text.splitlines() if line[:1] == "C"]
    assert len(caps) == 81 + 120 + 216 + 80
    circuit = parse_netlist(text)
    assert len(circuit) == 807
    assert len(circuit.nodes) == 301


@settings(max_examples=25, deadline=None)
@given(
    rows=st.integers(1, 3), cols=st.integers(1, 3), n_wl=st.integers(1, 5),
    c_v=st.floats(0, 1e-17), c_h=st.floats(0, 1e-17), neglect_cd=st.booleans(),
    shifts=st.lists(st.floats(-3, 3, allow_nan=False), min_size=0, max_size=4),
    vt0=st.floats(0.1, 2.0),
)
def test_parse_emit_fixed_point(rows, cols, n_wl, c_v, c_h, neglect_cd, shifts, vt0):
    spec = ArraySpec(
        rows, cols, n_wl, cell_params=DeviceModelParams(vt0=vt0),
        coupling=CouplingCaps(c_v, c_h, 0.5 * c_h, 0.1 * c_h), neglect_cd=neglect_cd,
    )
    cells = spec.cells()
    entries = [(*cells[k % len(cells)], d) for k, d in enumerate(shifts)]
    states = CellStateGrid.from_entries(spec, entries)
    circuit = build_array(spec, states)
    doc = emit_netlist(circuit, spec, states)
    parsed = parse_netlist(doc.text)
    assert parsed == circuit.rounded()
    # re-emitting the parsed circuit reproduces the text exactly
    rounded_states = CellStateGrid(spec, [[[float(f"{v:.6g}") for v in row] for row in plane] for plane in states.values])
    assert emit_netlist(parsed, spec, rounded_states).text == doc.text


def test_biased_sources_round_trip():
    spec = ArraySpec(1, 1, 2)
    circuit = build_array(spec)
    circuit = circuit.replace_element("VWL0", VSource("VWL0", "WL0", "0", 2.5))
    circuit = circuit.replace_element("VWL1", VSource("VWL1", "WL1", "0", Ramp(0.0, 1e-9, 0.0, 5.0)))
    text = emit_netlist(circuit, spec).text
    assert "PWL(" in text
    assert parse_netlist(text) == circuit.rounded()


def test_emit_rejects_foreign_circuits():
    spec = ArraySpec(1, 1, 2)
    with pytest.raises(NetlistError):
        emit_netlist(probe_gate(build_array(spec), 0, 0, 0, 1e9), spec)
    with pytest.raises(NetlistError):
        emit_netlist(build_array(ArraySpec(1, 1, 3)), spec)
    # states must agree with the circuit's state sources
    with pytest.raises(NetlistError):
        emit_netlist(set_cell_state(build_array(spec), 0, 0, 1, 1.0), spec, CellStateGrid(spec))


def test_truncated_netlist_rejected():
    text = GOLDEN.read_text(encoding="utf-8")
    with pytest.raises(NetlistParseError, match="truncated"):
        parse_netlist(text.replace(".END\n", ""))


@pytest.mark.parametrize(
    "old,new,match",
    [
        ("VSL SL 0 DC", "QSL SL 0 DC", "unknown card"),
        (".ENDS STRING", ".ENDS CELL", "closes"),
        ("KP=5.00000e-04 ", "", "lacks KP"),
        ("DC {DVT}", "DC {DVX}", "undefined parameter"),
        ("VBL_r0c0 BL_r0c0 0 DC 0.00000e+00", "VBL_r0c0 BL_r0c0 0 DC zero", "bad number"),
    ],
)
def test_malformed_cards_report_line(old, new, match):
    text = GOLDEN.read_text(encoding="utf-8")
    assert old in text
    with pytest.raises(NetlistParseError, match=match) as info:
        parse_netlist(text.replace(old, new, 1))
    assert info.value.line is None or str(info.value).startswith(f"line {info.value.line}:")


def test_continuation_lines_and_comments():
    text = GOLDEN.read_text(encoding="utf-8")
    folded = text.replace(" VTH=", "\n+ VTH=").replace("\nVSL ", "\n* a comment\nVSL ")
    assert parse_netlist(folded) == parse_netlist(text)
