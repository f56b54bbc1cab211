"""Bias recipes for the single-WL and multi-WL string measurements."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .array import ArraySpec, bl_source, wl_source
from .errors import DomainError

DEFAULT_V_PASS = 5.0
DEFAULT_V_BL = 0.5
DEFAULT_V_SELECT = 5.0


def default_grid(start: float = 0.0, stop: float = 5.0, step: float = 0.1) -> tuple[float, ...]:
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return tuple(float(v) for v in np.round(start + step * np.arange(n), 12))


@dataclass(frozen=True)
class SingleWLProtocol:
    """One WL swept while every other WL sits at ``v_pass``.

    ``v_select`` drives both select gates.  ``v_sl`` is the source-line
    bias; swapping ``v_bl`` and ``v_sl`` mirrors the string end to end.
    """

    probed_wl: int = 0
    v_pass: float = DEFAULT_V_PASS
    v_bl: float = DEFAULT_V_BL
    grid: tuple[float, ...] = field(default_factory=default_grid)
    v_select: float = DEFAULT_V_SELECT
    v_sl: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(float(v) for v in self.grid))
        g = np.asarray(self.grid)
        if len(g) < 2 or not np.all(np.diff(g) > 0):
            raise DomainError("sweep grid must be strictly increasing with at least two values")
        if self.probed_wl < 0:
            raise DomainError("probed_wl must be >= 0")

    def check(self, spec: ArraySpec) -> None:
        if not self.probed_wl < spec.n_wl:
            raise DomainError(f"probed_wl {self.probed_wl} outside 0..{spec.n_wl - 1}")


def array_bias(
    spec: ArraySpec,
    v_wl: float | dict[int, float],
    v_bl: float = DEFAULT_V_BL,
    v_select: float = DEFAULT_V_SELECT,
    v_sl: float = 0.0,
) -> dict[str, float]:
    """Source values for every WL, both select lines, SL and all bit lines."""
    if isinstance(v_wl, dict):
        wl = {l: float(v_wl.get(l, 0.0)) for l in range(spec.n_wl)}
    else:
        wl = {l: float(v_wl) for l in range(spec.n_wl)}
    values = {wl_source(l): v for l, v in wl.items()}
    values.update(VBSL=v_select, VSSL=v_select, VSL=v_sl)
    values.update({bl_source(r, c): v_bl for r, c in spec.strings()})
    return values


def single_wl_bias(spec: ArraySpec, protocol: SingleWLProtocol) -> dict[str, float]:
    """Fixed sources of a single-WL sweep; the probed WL is set per point."""
    protocol.check(spec)
    return array_bias(spec, protocol.v_pass, protocol.v_bl, protocol.v_select, protocol.v_sl)
