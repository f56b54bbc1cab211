import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nandmacro.array import (
    ArraySpec,
    CellStateGrid,
    build_array,
    cell_state,
    gate_node,
    neighbor_pairs,
    probe_gate,
    set_cell_state,
)
from nandmacro.circuit import VCVS, Capacitor, Resistor, Transistor, VSource
from nandmacro.coupling import CouplingCaps
from nandmacro.errors import BuildError

UNIT_CAPS = CouplingCaps(1e-18, 2e-18, 3e-18, 4e-18)


def brute_force_pairs(rows, cols, n_wl, with_d=True):
    """Classify every unordered cell pair by its index offsets."""
    cells = [(r, c, l) for r in range(rows) for c in range(cols) for l in range(n_wl)]
    out = set()
    for a, b in itertools.combinations(cells, 2):
        dr, dc, dl = (abs(x - y) for x, y in zip(a, b))
        lateral = dr + dc
        if lateral == 0 and dl == 1:
            kind = "V"
        elif lateral == 1 and dl == 0 and max(dr, dc) == 1:
            kind = "H"
        elif lateral == 1 and dl == 1:
            kind = "S"
        elif dr == 1 and dc == 1 and dl == 0:
            kind = "D"
        else:
            continue
        if kind == "D" and not with_d:
            continue
        out.add((frozenset((a, b)), kind))
    return out


def expected_sizes(rows, cols, n_wl, n_caps):
    strings = rows * cols
    sources = n_wl + 3 + strings + strings * n_wl  # WLs, BSL/SSL/SL, BLs, per-cell state sources
    elements = sources + strings * n_wl * 2 + strings * 2 + n_caps  # VCVS + cell FET, two selects
    # WL, BSL, SSL, SL, BL nodes; per cell gate + state node; n_wl + 1 channel nodes per string
    nodes = n_wl + 3 + strings + strings * (2 * n_wl + n_wl + 1)
    return elements, nodes


def circuit_pairs(circuit):
    by_gate = {}
    for e in circuit.of_type(VCVS):
        tag = e.name[2:]
        r, rest = tag[1:].split("c")
        c, l = rest.split("l")
        by_gate[e.out_p] = (int(r), int(c), int(l))
    return {(frozenset((by_gate[e.a], by_gate[e.b])), e.name[1]) for e in circuit.of_type(Capacitor)}


@pytest.mark.parametrize("rows", [1, 2, 3, 4])
@pytest.mark.parametrize("cols", [1, 2, 3, 4])
def test_topology_matches_brute_force(rows, cols):
    for n_wl in range(1, 13):
        spec = ArraySpec(rows, cols, n_wl, coupling=UNIT_CAPS)
        circuit = build_array(spec)
        oracle = brute_force_pairs(rows, cols, n_wl)
        assert circuit_pairs(circuit) == oracle
        assert {(frozenset(p[:2]), p[2]) for p in neighbor_pairs(spec)} == oracle
        n_el, n_nodes = expected_sizes(rows, cols, n_wl, len(oracle))
        assert len(circuit) == n_el
        assert len(circuit.nodes) == n_nodes


def test_default_array_coupling_counts():
    circuit = build_array(ArraySpec(coupling=UNIT_CAPS))
    counts = {k: 0 for k in "VHSD"}
    for e in circuit.of_type(Capacitor):
        counts[e.name[1]] += 1
    assert counts == {"V": 81, "H": 120, "S": 216, "D": 80}


def test_neglect_cd_drops_diagonals():
    spec = ArraySpec(coupling=UNIT_CAPS, neglect_cd=True)
    pairs = circuit_pairs(build_array(spec))
    assert pairs == brute_force_pairs(3, 3, 10, with_d=False)


def test_zero_coupling_builds_no_capacitors():
    assert build_array(ArraySpec(coupling=CouplingCaps())).of_type(Capacitor) == []


def test_capacitor_values_follow_kind():
    circuit = build_array(ArraySpec(2, 2, 2, coupling=UNIT_CAPS))
    for e in circuit.of_type(Capacitor):
        assert e.value == UNIT_CAPS.value(e.name[1])


def test_string_is_series_chain():
    spec = ArraySpec(1, 1, 4)
    circuit = build_array(spec)
    fets = circuit.of_type(Transistor)
    assert [f.name for f in fets] == ["MB_r0c0", "M_r0c0l0", "M_r0c0l1", "M_r0c0l2", "M_r0c0l3", "MS_r0c0"]
    assert fets[0].d == "BL_r0c0" and fets[-1].s == "SL"
    for a, b in zip(fets, fets[1:]):
        assert a.s == b.d


def test_names_are_unique_and_deterministic():
    a = build_array(ArraySpec(3, 3, 4))
    b = build_array(ArraySpec(3, 3, 4))
    names = [e.name for e in a]
    assert len(names) == len(set(names))
    assert a == b


@settings(max_examples=50, deadline=None)
@given(
    r=st.integers(0, 2), c=st.integers(0, 2), l=st.integers(0, 3),
    dvt=st.floats(-3, 3, allow_nan=False),
)
def test_cell_state_round_trip(r, c, l, dvt):
    circuit = build_array(ArraySpec(3, 3, 4))
    programmed = set_cell_state(circuit, r, c, l, dvt)
    assert cell_state(programmed, r, c, l) == dvt
    changed = [x.name for x, y in zip(circuit, programmed) if x != y]
    assert changed == ([] if dvt == 0 else [f"VT_r{r}c{c}l{l}"])


def test_state_grid_feeds_sources():
    spec = ArraySpec(2, 2, 3)
    grid = CellStateGrid.from_entries(spec, [(1, 0, 2, 0.75)])
    circuit = build_array(spec, grid)
    assert cell_state(circuit, 1, 0, 2) == 0.75
    assert grid.with_cell(1, 0, 2, 0.0) == CellStateGrid(spec)
    assert np.count_nonzero(grid.values) == 1


@pytest.mark.parametrize(
    "make",
    [
        lambda: ArraySpec(0, 3, 10),
        lambda: ArraySpec(3, 3, 2.5),
        lambda: CellStateGrid.from_entries(ArraySpec(2, 2, 2), [(2, 0, 0, 1.0)]),
        lambda: build_array(ArraySpec(2, 2, 2), CellStateGrid(ArraySpec(2, 2, 3))),
    ],
)
def test_build_errors(make):
    with pytest.raises(BuildError):
        make()


def test_missing_cell_is_index_error():
    with pytest.raises(IndexError):
        cell_state(build_array(ArraySpec(1, 1, 2)), 0, 0, 5)


def test_probe_gate_inserts_series_resistor():
    circuit = probe_gate(build_array(ArraySpec(1, 1, 3)), 0, 0, 1, 1e9)
    e = circuit.element("E_r0c0l1")
    rp = circuit.element("RP_r0c0l1")
    assert isinstance(rp, Resistor) and rp.value == 1e9
    assert e.out_p == "X_r0c0l1"
    assert {rp.a, rp.b} == {"X_r0c0l1", gate_node(0, 0, 1)}
    assert circuit.element("M_r0c0l1").g == gate_node(0, 0, 1)


def test_all_sources_start_at_zero():
    circuit = build_array(ArraySpec(2, 2, 2))
    assert all(s.value == 0.0 for s in circuit.of_type(VSource))
