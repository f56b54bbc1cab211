"""Coupling capacitances between cells and capacitance-network reduction.

Two jobs live here:

* :func:`estimate_coupling_caps` gives first-order geometric values for the
  four neighbor capacitances (vertical, horizontal, side, diagonal).
* :func:`reduce_capacitance_network` eliminates internal nodes of an
  arbitrary capacitor network by successive Schur complements, leaving the
  terminal capacitance matrix in Maxwell convention (diagonal >= 0,
  off-diagonal <= 0).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .device import EPS0, EPS_SIO2, DeviceGeometry
from .errors import DomainError, SingularReductionError

EPS_OX = EPS0 * EPS_SIO2


@dataclass(frozen=True)
class CouplingCaps:
    """Per-pair coupling capacitances in farads."""

    c_v: float = 0.0
    c_h: float = 0.0
    c_s: float = 0.0
    c_d: float = 0.0

    def __post_init__(self):
        for name in ("c_v", "c_h", "c_s", "c_d"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise DomainError(f"{name} must be finite and >= 0, got {value!r}")

    def value(self, kind: str) -> float:
        return getattr(self, "c_" + kind.lower())

    def replace(self, **changes) -> "CouplingCaps":
        return replace(self, **changes)

    def as_dict(self) -> dict[str, float]:
        return {"V": self.c_v, "H": self.c_h, "S": self.c_s, "D": self.c_d}


@dataclass(frozen=True)
class ArrayPitch:
    """In-plane channel-hole pitch (m), 100 nm by default."""

    pitch_x: float = 100e-9
    pitch_y: float = 100e-9

    def validate(self, geom: DeviceGeometry) -> None:
        d = geom.hole_diameter
        for name, value in (("pitch_x", self.pitch_x), ("pitch_y", self.pitch_y)):
            if not (math.isfinite(value) and value > d):
                raise DomainError(
                    f"{name}={value:.4g} m leaves no gap between channel holes "
                    f"(hole diameter {d:.4g} m)"
                )


def _lateral_cap(geom: DeviceGeometry, gap: float, vertical_offset: float = 0.0) -> float:
    # Facing area: one WL thickness times a quarter of the channel perimeter.
    # Path: metal ligament plus both gate stacks; the WL metal between holes
    # screens the field over a length set by the plate thickness.
    t_wl = geom.wl_thickness
    edge = math.pi * geom.channel_outer_radius / 2
    path = math.hypot(gap + 2 * geom.stack_thickness, vertical_offset)
    return EPS_OX * t_wl * edge / path * math.exp(-math.pi * gap / t_wl)


def estimate_coupling_caps(geom: DeviceGeometry, pitch: ArrayPitch) -> CouplingCaps:
    """First-order coupling capacitances for one cell and its neighbors.

    ``c_v`` is the WL-plate overlap per cell through the spacer oxide.  The
    lateral terms (``c_h``, ``c_s``, ``c_d``) are parallel-plate estimates
    across the in-plane gap, attenuated by the metal plate between holes.
    Raises :class:`DomainError` when the pitch leaves no gap.
    """
    pitch.validate(geom)
    r_h = geom.hole_radius
    px, py = pitch.pitch_x, pitch.pitch_y
    plate_area = px * py - math.pi * r_h**2
    c_v = EPS_OX * plate_area / geom.spacer_thickness

    gap_x, gap_y = px - 2 * r_h, py - 2 * r_h
    gap_diag = math.hypot(px, py) - 2 * r_h
    c_h = 0.5 * (_lateral_cap(geom, gap_x) + _lateral_cap(geom, gap_y))
    c_s = 0.5 * (
        _lateral_cap(geom, gap_x, geom.wl_thickness) + _lateral_cap(geom, gap_y, geom.wl_thickness)
    )
    c_d = _lateral_cap(geom, gap_diag)
    return CouplingCaps(c_v=c_v, c_h=c_h, c_s=c_s, c_d=c_d)


@dataclass(frozen=True)
class CapacitanceMatrix:
    """Terminal capacitance matrix, Maxwell convention, farads."""

    terminal_names: tuple[str, ...]
    values: np.ndarray

    def __getitem__(self, key: tuple[str, str]) -> float:
        i = self.terminal_names.index(key[0])
        j = self.terminal_names.index(key[1])
        return float(self.values[i, j])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# terminal capacitance matrix (F), Maxwell convention:\n")
        buf.write("# diagonal = total capacitance of the terminal, off-diagonal = -mutual\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["terminal", *self.terminal_names])
        for name, row in zip(self.terminal_names, self.values):
            writer.writerow([name, *(f"{v:.6e}" for v in row)])
        return buf.getvalue()


CapElement = tuple[str, str, float]


def nodal_capacitance_matrix(nodes: Sequence[str], elements: Iterable[CapElement]) -> np.ndarray:
    index = {name: i for i, name in enumerate(nodes)}
    m = np.zeros((len(nodes), len(nodes)))
    for a, b, c in elements:
        if not (math.isfinite(c) and c > 0):
            raise DomainError(f"capacitance between {a} and {b} must be > 0, got {c!r}")
        if a == b:
            raise DomainError(f"capacitor from {a} to itself")
        try:
            i, j = index[a], index[b]
        except KeyError as exc:
            raise DomainError(f"capacitor terminal {exc.args[0]!r} is not a declared node") from None
        m[i, i] += c
        m[j, j] += c
        m[i, j] -= c
        m[j, i] -= c
    return m


def reduce_capacitance_network(
    nodes: Sequence[str] | None,
    cap_elements: Iterable[CapElement],
    terminals: Sequence[str],
    order: Sequence[str] | None = None,
) -> CapacitanceMatrix:
    """Eliminate every non-terminal node; return the terminal matrix.

    Internal nodes are removed one at a time (Kron reduction) in ``order``,
    defaulting to their order in ``nodes``.  The result does not depend on
    the order up to rounding.  ``nodes=None`` collects nodes from the
    elements in first-appearance order.
    """
    cap_elements = list(cap_elements)
    if nodes is None:
        seen: dict[str, None] = {}
        for a, b, _ in cap_elements:
            seen.setdefault(a)
            seen.setdefault(b)
        nodes = list(seen)
    nodes = list(nodes)
    if len(set(nodes)) != len(nodes):
        raise DomainError("duplicate node names")
    missing = [t for t in terminals if t not in nodes]
    if missing:
        raise DomainError(f"terminals not in network: {missing}")
    if len(set(terminals)) != len(terminals):
        raise DomainError("duplicate terminal names")

    m = nodal_capacitance_matrix(nodes, cap_elements)
    internal = [n for n in nodes if n not in set(terminals)]
    if order is None:
        order = internal
    elif sorted(order) != sorted(internal):
        raise DomainError("elimination order must list every internal node exactly once")

    names = list(nodes)
    scale = max(float(np.max(np.abs(np.diag(m)))), 0.0) if len(nodes) else 0.0
    for node in order:
        k = names.index(node)
        pivot = m[k, k]
        if not pivot > 1e-12 * scale:
            raise SingularReductionError(f"internal node {node!r} has no capacitance to eliminate")
        col = m[:, k].copy()
        m = m - np.outer(col, m[k, :]) / pivot
        m = np.delete(np.delete(m, k, axis=0), k, axis=1)
        del names[k]

    perm = [names.index(t) for t in terminals]
    reduced = m[np.ix_(perm, perm)]
    reduced = 0.5 * (reduced + reduced.T)
    return CapacitanceMatrix(tuple(terminals), reduced)


def parse_network_text(text: str) -> tuple[list[str], list[CapElement], list[str]]:
    """Parse a capacitor-network description.

    One element per line as ``nodeA nodeB value_F``; a header comment
    ``# terminals: T1 T2 ...`` lists the terminals.  Other ``#`` lines are
    ignored.
    """
    terminals: list[str] | None = None
    elements: list[CapElement] = []
    seen: dict[str, None] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.lower().startswith("terminals:"):
                terminals = body.split(":", 1)[1].split()
            continue
        parts = line.split()
        if len(parts) != 3:
            raise DomainError(f"line {lineno}: expected 'nodeA nodeB value', got {raw!r}")
        try:
            value = float(parts[2])
        except ValueError:
            raise DomainError(f"line {lineno}: bad capacitance {parts[2]!r}") from None
        elements.append((parts[0], parts[1], value))
        seen.setdefault(parts[0])
        seen.setdefault(parts[1])
    if terminals is None:
        raise DomainError("missing '# terminals:' header")
    return list(seen), elements, terminals
