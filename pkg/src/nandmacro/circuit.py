"""Flat circuit representation shared by the builder, engine and netlist IO."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import Iterator, Union

from .device import DeviceModelParams
from .errors import DomainError

GROUND = "0"


@dataclass(frozen=True)
class Ramp:
    """Piecewise-linear ramp: ``v0`` until ``t0``, linear to ``v1`` at ``t1``."""

    t0: float
    t1: float
    v0: float
    v1: float

    def __post_init__(self):
        if not self.t1 >= self.t0:
            raise DomainError(f"ramp must be monotone in time, got t0={self.t0}, t1={self.t1}")

    def __call__(self, t: float) -> float:
        if t <= self.t0:
            return self.v0
        if t >= self.t1:
            return self.v1
        return self.v0 + (self.v1 - self.v0) * (t - self.t0) / (self.t1 - self.t0)


SourceValue = Union[float, Ramp]


def source_value(value: SourceValue, t: float = 0.0) -> float:
    return value(t) if isinstance(value, Ramp) else float(value)


@dataclass(frozen=True)
class Transistor:
    name: str
    d: str
    g: str
    s: str
    params: DeviceModelParams
    state_ref: str | None = None

    @property
    def terminals(self) -> tuple[str, ...]:
        return (self.d, self.g, self.s)


@dataclass(frozen=True)
class Capacitor:
    name: str
    a: str
    b: str
    value: float

    @property
    def terminals(self) -> tuple[str, ...]:
        return (self.a, self.b)


@dataclass(frozen=True)
class Resistor:
    name: str
    a: str
    b: str
    value: float

    @property
    def terminals(self) -> tuple[str, ...]:
        return (self.a, self.b)


@dataclass(frozen=True)
class VSource:
    """Independent voltage source, ``v(a) - v(b) = value``."""

    name: str
    a: str
    b: str
    value: SourceValue = 0.0

    @property
    def terminals(self) -> tuple[str, ...]:
        return (self.a, self.b)


@dataclass(frozen=True)
class VCVS:
    """``v(out_p) - v(out_n) = gain * (v(ctrl_p) - v(ctrl_n))``."""

    name: str
    out_p: str
    out_n: str
    ctrl_p: str
    ctrl_n: str
    gain: float = 1.0

    @property
    def terminals(self) -> tuple[str, ...]:
        return (self.out_p, self.out_n, self.ctrl_p, self.ctrl_n)


Element = Union[Transistor, Capacitor, Resistor, VSource, VCVS]


def round_sig(x: float, digits: int = 6) -> float:
    """Round to ``digits`` significant figures, the netlist print precision."""
    return float(f"{x:.{digits - 1}e}") + 0.0


def _rounded(obj):
    if isinstance(obj, float):
        return round_sig(obj)
    if isinstance(obj, (Ramp, DeviceModelParams)):
        return replace(obj, **{f.name: _rounded(getattr(obj, f.name)) for f in fields(obj)})
    return obj


@dataclass(frozen=True)
class Circuit:
    """Ordered, immutable element list over named nodes; ground is ``"0"``."""

    elements: tuple[Element, ...]

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        names = [e.name for e in self.elements]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise DomainError(f"duplicate element names: {dupes[:5]}")
        for e in self.elements:
            if isinstance(e, (Capacitor, Resistor)):
                if not (math.isfinite(e.value) and e.value > 0):
                    raise DomainError(f"{e.name}: value must be positive, got {e.value!r}")
            if any(not t for t in e.terminals):
                raise DomainError(f"{e.name}: empty node name")
        object.__setattr__(self, "_index", {e.name: i for i, e in enumerate(self.elements)})

    @property
    def nodes(self) -> tuple[str, ...]:
        """Non-ground nodes in first-appearance order."""
        seen: dict[str, None] = {}
        for e in self.elements:
            for t in e.terminals:
                if t != GROUND:
                    seen.setdefault(t)
        return tuple(seen)

    def __iter__(self) -> Iterator[Element]:
        return iter(self.elements)

    def __len__(self) -> int:
        return len(self.elements)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def element(self, name: str) -> Element:
        try:
            return self.elements[self._index[name]]
        except KeyError:
            raise KeyError(f"no element named {name!r}") from None

    def of_type(self, kind) -> list:
        return [e for e in self.elements if isinstance(e, kind)]

    def replace_element(self, name: str, new: Element) -> "Circuit":
        i = self._index[name]
        elements = list(self.elements)
        elements[i] = new
        return Circuit(tuple(elements))

    def with_elements(self, extra: list[Element]) -> "Circuit":
        return Circuit(self.elements + tuple(extra))

    def rounded(self) -> "Circuit":
        """Copy with every numeric value rounded to 6 significant digits."""
        return Circuit(
            tuple(replace(e, **{f.name: _rounded(getattr(e, f.name)) for f in fields(e)}) for e in self.elements)
        )
