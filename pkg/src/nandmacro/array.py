"""Array macro-model builder: strings of cells between bit lines and a source line.

Node names are part of the external contract (netlists and tests rely on
them bit-exactly):

=====================  ===============================================
``WL<l>``              word-line plate of layer ``l``, shared by all strings
``BL_r<r>c<c>``        bit line of string (r, c)
``SL``                 common source line
``BSL`` / ``SSL``      select-gate lines, shared by all strings
``G_r<r>c<c>l<l>``     internal gate of a cell (WL minus threshold shift)
``T_r<r>c<c>l<l>``     state-source node of a cell
``N_r<r>c<c>n<k>``     channel node k of a string, k = 0 .. n_wl
=====================  ===============================================

Layer 0 sits next to the bit-line select transistor.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .circuit import GROUND, VCVS, Capacitor, Circuit, Resistor, Transistor, VSource
from .coupling import CouplingCaps
from .device import DeviceModelParams, default_select_params
from .errors import BuildError

Cell = tuple[int, int, int]

# forward offsets (drow, dcol, dlayer); each unordered pair is produced once
NEIGHBOR_OFFSETS: dict[str, tuple[tuple[int, int, int], ...]] = {
    "V": ((0, 0, 1),),
    "H": ((0, 1, 0), (1, 0, 0)),
    "S": ((0, 1, 1), (0, -1, 1), (1, 0, 1), (-1, 0, 1)),
    "D": ((1, 1, 0), (1, -1, 0)),
}

NODE_NAME_RE = re.compile(
    r"^(?:WL\d+|BL_r\d+c\d+|SL|BSL|SSL|G_r\d+c\d+l\d+|T_r\d+c\d+l\d+|N_r\d+c\d+n\d+)$"
)


@dataclass(frozen=True)
class ArraySpec:
    """Array dimensions plus the device and coupling parameters it uses."""

    rows: int = 3
    cols: int = 3
    n_wl: int = 10
    cell_params: DeviceModelParams = field(default_factory=DeviceModelParams)
    bsl_params: DeviceModelParams = field(default_factory=default_select_params)
    ssl_params: DeviceModelParams = field(default_factory=default_select_params)
    coupling: CouplingCaps = field(default_factory=CouplingCaps)
    neglect_cd: bool = False

    def __post_init__(self):
        for name in ("rows", "cols", "n_wl"):
            value = getattr(self, name)
            if not (isinstance(value, (int, np.integer)) and value >= 1):
                raise BuildError(f"{name} must be an integer >= 1, got {value!r}")

    @property
    def n_strings(self) -> int:
        return self.rows * self.cols

    @property
    def central_string(self) -> tuple[int, int]:
        return self.rows // 2, self.cols // 2

    def strings(self) -> list[tuple[int, int]]:
        return [(r, c) for r in range(self.rows) for c in range(self.cols)]

    def cells(self) -> list[Cell]:
        return [(r, c, l) for r in range(self.rows) for c in range(self.cols) for l in range(self.n_wl)]


class CellStateGrid:
    """Threshold shift of every cell, indexed ``[row, col, layer]``."""

    def __init__(self, spec: ArraySpec, values=None):
        shape = (spec.rows, spec.cols, spec.n_wl)
        if values is None:
            arr = np.zeros(shape)
        else:
            arr = np.array(values, dtype=float)
            if arr.shape != shape:
                raise BuildError(f"state grid shape {arr.shape} does not match array {shape}")
        if not np.all(np.isfinite(arr)):
            raise BuildError("state grid entries must be finite")
        self._values = arr
        self._values.setflags(write=False)

    @classmethod
    def from_entries(cls, spec: ArraySpec, entries: Iterable[tuple[int, int, int, float]]) -> "CellStateGrid":
        arr = np.zeros((spec.rows, spec.cols, spec.n_wl))
        for r, c, l, dvt in entries:
            if not (0 <= r < spec.rows and 0 <= c < spec.cols and 0 <= l < spec.n_wl):
                raise BuildError(f"state entry ({r}, {c}, {l}) outside the array")
            arr[r, c, l] = dvt
        return cls(spec, arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self._values.shape

    @property
    def values(self) -> np.ndarray:
        return self._values

    def __getitem__(self, idx) -> float:
        return float(self._values[idx])

    def with_cell(self, r: int, c: int, l: int, dvt: float) -> "CellStateGrid":
        arr = self._values.copy()
        arr[r, c, l] = dvt
        grid = object.__new__(CellStateGrid)
        grid._values = arr
        arr.setflags(write=False)
        return grid

    def __eq__(self, other):
        return isinstance(other, CellStateGrid) and np.array_equal(self._values, other._values)


# -- naming -----------------------------------------------------------------

def wl_node(l: int) -> str:
    return f"WL{l}"


def bl_node(r: int, c: int) -> str:
    return f"BL_r{r}c{c}"


def gate_node(r: int, c: int, l: int) -> str:
    return f"G_r{r}c{c}l{l}"


def state_node(r: int, c: int, l: int) -> str:
    return f"T_r{r}c{c}l{l}"


def channel_node(r: int, c: int, k: int) -> str:
    return f"N_r{r}c{c}n{k}"


def wl_source(l: int) -> str:
    return f"VWL{l}"


def bl_source(r: int, c: int) -> str:
    return f"VBL_r{r}c{c}"


def state_source(r: int, c: int, l: int) -> str:
    return f"VT_r{r}c{c}l{l}"


def cell_tag(cell: Cell) -> str:
    r, c, l = cell
    return f"r{r}c{c}l{l}"


def capacitor_name(kind: str, a: Cell, b: Cell) -> str:
    return f"C{kind}_{cell_tag(a)}_{cell_tag(b)}"


# -- topology ---------------------------------------------------------------

def neighbor_pairs(spec: ArraySpec) -> list[tuple[Cell, Cell, str]]:
    """Coupled cell pairs under the V/H/S/D convention.

    V: same string, adjacent layers.  H: same layer, in-plane 4-neighbors.
    S: adjacent layer and in-plane 4-neighbor.  D: same layer, in-plane
    diagonal.  Every unordered pair appears once.
    """
    pairs = []
    for kind in ("V", "H", "S", "D"):
        for r, c, l in spec.cells():
            for dr, dc, dl in NEIGHBOR_OFFSETS[kind]:
                rr, cc, ll = r + dr, c + dc, l + dl
                if 0 <= rr < spec.rows and 0 <= cc < spec.cols and 0 <= ll < spec.n_wl:
                    pairs.append(((r, c, l), (rr, cc, ll), kind))
    return pairs


def expected_counts(spec: ArraySpec, n_caps: int) -> tuple[int, int]:
    """Closed-form ``(node_count, element_count)`` for a built array."""
    s, n = spec.n_strings, spec.n_wl
    nodes = n + 3 + s + 2 * s * n + s * (n + 1)
    elements = (n + 3 + s) + s * (n + 2) + 2 * s * n + n_caps
    return nodes, elements


def build_array(spec: ArraySpec, states: CellStateGrid | None = None) -> Circuit:
    """Flat macro-model circuit of the array.

    Every source is built at 0 V; bias plans assign the values.
    """
    if states is None:
        states = CellStateGrid(spec)
    if states.shape != (spec.rows, spec.cols, spec.n_wl):
        raise BuildError(f"state grid shape {states.shape} does not match array")

    elements: list = [VSource(wl_source(l), wl_node(l), GROUND, 0.0) for l in range(spec.n_wl)]
    elements += [
        VSource("VBSL", "BSL", GROUND, 0.0),
        VSource("VSSL", "SSL", GROUND, 0.0),
        VSource("VSL", "SL", GROUND, 0.0),
    ]
    elements += [VSource(bl_source(r, c), bl_node(r, c), GROUND, 0.0) for r, c in spec.strings()]

    for r, c in spec.strings():
        tag = f"r{r}c{c}"
        elements.append(Transistor(f"MB_{tag}", bl_node(r, c), "BSL", channel_node(r, c, 0), spec.bsl_params))
        for l in range(spec.n_wl):
            vt = state_source(r, c, l)
            elements.append(VSource(vt, state_node(r, c, l), GROUND, states[r, c, l] + 0.0))
            elements.append(VCVS(f"E_{tag}l{l}", gate_node(r, c, l), GROUND, wl_node(l), state_node(r, c, l), 1.0))
            elements.append(
                Transistor(
                    f"M_{tag}l{l}",
                    channel_node(r, c, l),
                    gate_node(r, c, l),
                    channel_node(r, c, l + 1),
                    spec.cell_params,
                    state_ref=vt,
                )
            )
        elements.append(Transistor(f"MS_{tag}", channel_node(r, c, spec.n_wl), "SSL", "SL", spec.ssl_params))

    for a, b, kind in neighbor_pairs(spec):
        if kind == "D" and spec.neglect_cd:
            continue
        value = spec.coupling.value(kind)
        if value > 0:
            elements.append(Capacitor(capacitor_name(kind, a, b), gate_node(*a), gate_node(*b), value))
    return Circuit(tuple(elements))


def _check_cell(circuit: Circuit, r: int, c: int, l: int) -> str:
    name = state_source(r, c, l)
    if min(r, c, l) < 0 or name not in circuit:
        raise IndexError(f"cell ({r}, {c}, {l}) is not in the circuit")
    return name


def set_cell_state(circuit: Circuit, r: int, c: int, l: int, delta_vt: float) -> Circuit:
    """Copy of ``circuit`` with one cell's threshold-shift source changed."""
    name = _check_cell(circuit, r, c, l)
    src = circuit.element(name)
    return circuit.replace_element(name, VSource(src.name, src.a, src.b, float(delta_vt) + 0.0))


def cell_state(circuit: Circuit, r: int, c: int, l: int) -> float:
    return float(circuit.element(_check_cell(circuit, r, c, l)).value)


def probe_gate(circuit: Circuit, r: int, c: int, l: int, resistance: float) -> Circuit:
    """Drive one cell's gate through a series resistance instead of directly.

    The VCVS output moves to a new node ``X_r<r>c<c>l<l>`` and a resistor
    ``RP_...`` connects it to the gate, so coupling capacitors can move the
    gate node on time scales short against ``resistance`` times its
    capacitance.
    """
    _check_cell(circuit, r, c, l)
    tag = f"r{r}c{c}l{l}"
    e = circuit.element(f"E_{tag}")
    x = f"X_{tag}"
    out = circuit.replace_element(e.name, VCVS(e.name, x, e.out_n, e.ctrl_p, e.ctrl_n, e.gain))
    return out.with_elements([Resistor(f"RP_{tag}", x, e.out_p, resistance)])
