import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nandmacro.circuit import Capacitor, Circuit
from nandmacro.coupling import (
    ArrayPitch,
    CouplingCaps,
    estimate_coupling_caps,
    nodal_capacitance_matrix,
    parse_network_text,
    reduce_capacitance_network,
)
from nandmacro.device import DeviceGeometry
from nandmacro.errors import DomainError, SingularReductionError
from nandmacro.mna import ac_admittance

OMEGA = 2 * np.pi * 1e6


def random_network(rng, n_nodes, n_terminals, extra_edges):
    """Connected random capacitor graph: spanning tree plus extra edges."""
    nodes = [f"n{k}" for k in range(n_nodes)]
    edges = {}
    for k in range(1, n_nodes):
        j = int(rng.integers(0, k))
        edges[(j, k)] = rng.uniform(0.1, 10.0) * 1e-15
    for _ in range(extra_edges):
        a, b = sorted(rng.choice(n_nodes, 2, replace=False).tolist())
        edges[(a, b)] = rng.uniform(0.1, 10.0) * 1e-15
    elements = [(nodes[a], nodes[b], c) for (a, b), c in edges.items()]
    terminals = [nodes[k] for k in rng.choice(n_nodes, n_terminals, replace=False)]
    return nodes, elements, terminals


def admittance_capacitance(nodes, elements, terminals):
    circuit = Circuit(tuple(Capacitor(f"C{k}", a, b, c) for k, (a, b, c) in enumerate(elements)))
    return ac_admittance(circuit, terminals, OMEGA).imag / OMEGA


def test_schur_reduction_equals_ac_extraction_on_random_networks():
    rng = np.random.default_rng(1234)
    for _ in range(120):
        n = int(rng.integers(3, 12))
        nt = int(rng.integers(2, n + 1))
        nodes, elements, terminals = random_network(rng, n, nt, int(rng.integers(0, 2 * n)))
        schur = reduce_capacitance_network(nodes, elements, terminals).values
        ac = admittance_capacitance(nodes, elements, terminals)
        scale = np.max(np.abs(schur))
        assert np.max(np.abs(schur - ac)) <= 1e-9 * scale


def test_series_pair_is_exact():
    c1 = c2 = 2e-15
    m = reduce_capacitance_network(None, [("A", "M", c1), ("M", "B", c2)], ["A", "B"])
    assert -m["A", "B"] == c1 * c2 / (c1 + c2)
    assert m["A", "A"] == c1 * c2 / (c1 + c2)


@settings(max_examples=200, deadline=None)
@given(c1=st.floats(1e-18, 1e-12), c2=st.floats(1e-18, 1e-12))
def test_series_pair_formula(c1, c2):
    m = reduce_capacitance_network(None, [("A", "M", c1), ("M", "B", c2)], ["A", "B"])
    assert -m["A", "B"] == pytest.approx(c1 * c2 / (c1 + c2), rel=1e-14)
    assert m.values.sum() == pytest.approx(0.0, abs=1e-14 * max(c1, c2))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_elimination_order_does_not_matter(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 10))
    nodes, elements, terminals = random_network(rng, n, 2, n)
    internal = [x for x in nodes if x not in terminals]
    a = reduce_capacitance_network(nodes, elements, terminals, order=internal).values
    b = reduce_capacitance_network(nodes, elements, terminals, order=internal[::-1]).values
    assert np.max(np.abs(a - b)) <= 1e-12 * np.max(np.abs(a))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_reduced_matrix_is_a_floating_capacitance_matrix(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 10))
    nodes, elements, terminals = random_network(rng, n, int(rng.integers(2, n)), n)
    m = reduce_capacitance_network(nodes, elements, terminals).values
    assert np.allclose(m, m.T, rtol=0, atol=0)
    # no ground reference: rows sum to zero, and the matrix is positive semidefinite
    assert np.max(np.abs(m.sum(axis=1))) <= 1e-12 * np.max(np.abs(m))
    assert np.min(np.linalg.eigvalsh(m)) >= -1e-12 * np.max(np.abs(m))


def test_nodal_matrix_stamps():
    m = nodal_capacitance_matrix(["a", "b", "c"], [("a", "b", 1.0), ("b", "c", 2.0)])
    assert np.array_equal(m, np.array([[1.0, -1.0, 0.0], [-1.0, 3.0, -2.0], [0.0, -2.0, 2.0]]))


@pytest.mark.parametrize(
    "elements",
    [[("a", "b", -1e-15)], [("a", "a", 1e-15)], [("a", "z", 1e-15)], [("a", "b", float("nan"))]],
)
def test_nodal_matrix_rejects_bad_elements(elements):
    with pytest.raises(DomainError):
        nodal_capacitance_matrix(["a", "b"], elements)


def test_reduction_errors():
    with pytest.raises(DomainError):
        reduce_capacitance_network(["a", "b"], [("a", "b", 1e-15)], ["z"])
    with pytest.raises(DomainError):
        reduce_capacitance_network(["a", "b", "m"], [("a", "m", 1e-15)], ["a", "b"], order=["b"])
    # an internal node connected to nothing cannot be eliminated
    with pytest.raises(SingularReductionError):
        reduce_capacitance_network(["a", "b", "m"], [("a", "b", 1e-15)], ["a", "b"])


def test_parse_network_text():
    text = "# series\n# terminals: A B\nA M 2e-15\n\nM B 2e-15\n"
    nodes, elements, terminals = parse_network_text(text)
    assert nodes == ["A", "M", "B"]
    assert terminals == ["A", "B"]
    assert elements == [("A", "M", 2e-15), ("M", "B", 2e-15)]


@pytest.mark.parametrize("text", ["A B 1e-15\n", "# terminals: A\nA B\n", "# terminals: A\nA B x\n"])
def test_parse_network_text_errors(text):
    with pytest.raises(DomainError):
        parse_network_text(text)


def test_matrix_csv_lists_terminals():
    m = reduce_capacitance_network(None, [("A", "B", 1e-15)], ["A", "B"])
    lines = [x for x in m.to_csv().splitlines() if not x.startswith("#")]
    assert lines[0] == "terminal,A,B"
    assert lines[1] == "A,1.000000e-15,-1.000000e-15"


# -- geometric estimate ------------------------------------------------------


def test_estimate_default_ordering():
    caps = estimate_coupling_caps(DeviceGeometry(), ArrayPitch())
    assert caps.c_v > caps.c_h > caps.c_d
    assert caps.c_v > caps.c_s > caps.c_d
    assert caps.c_d < 0.1 * caps.c_v


def test_estimate_trends_with_pitch():
    g = DeviceGeometry()
    pitches = np.linspace(90e-9, 200e-9, 12)
    caps = [estimate_coupling_caps(g, ArrayPitch(p, p)) for p in pitches]
    assert all(np.diff([c.c_v for c in caps]) > 0)
    for kind in ("c_h", "c_s", "c_d"):
        assert all(np.diff([getattr(c, kind) for c in caps]) < 0)


def test_overlapping_holes_rejected():
    with pytest.raises(DomainError):
        estimate_coupling_caps(DeviceGeometry(), ArrayPitch(80e-9, 100e-9))


def test_coupling_caps_validation_and_lookup():
    caps = CouplingCaps(1.0, 2.0, 3.0, 4.0)
    assert [caps.value(k) for k in "VHSD"] == [1.0, 2.0, 3.0, 4.0]
    assert caps.replace(c_v=5.0).c_v == 5.0
    with pytest.raises(DomainError):
        CouplingCaps(-1.0, 0.0, 0.0, 0.0)
