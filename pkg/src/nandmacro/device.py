"""Behavioral I-V model of a single Macaroni-body charge-trap cell.

The cell is a cylindrical gate-all-around nanowire transistor whose
threshold is shifted by a programmed amount ``delta_vt``.  The current is a
symmetric charge-interpolation form::

    v_p  = (v_g - vt0 - delta_vt) / n
    F(x) = ln(1 + exp(x / 2))**2
    I_D  = K * (W/L) * 2 n v_th**2 * [F((v_p - v_s)/v_th) - F((v_p - v_d)/v_th)]
           * (1 + lam * |v_d - v_s|)

which is smooth from weak to strong inversion and exactly antisymmetric in
drain/source exchange.  Series resistance ``r_s`` is not part of the
intrinsic current; the circuit engine splits it between drain and source.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError

EPS0 = 8.8541878128e-12
EPS_SIO2 = 3.9
EPS_SI3N4 = 7.5
THERMAL_VOLTAGE_300K = 0.02585


@dataclass(frozen=True)
class DeviceGeometry:
    """Cell geometry and doping; defaults describe a 10-WL macaroni string.

    ``nitride_thickness`` defaults to 6 nm, a typical O/N/O trapping layer.
    Body/drain/source doping and the WL work function are carried for
    completeness; the behavioral model absorbs them into ``vt0``.
    """

    core_filler_diameter: float = 35e-9
    tunnel_oxide_thickness: float = 4e-9
    blocking_oxide_thickness: float = 4e-9
    nitride_thickness: float = 6e-9
    body_doping: float = 1e15
    drain_doping: float = 5e19
    source_doping: float = 5e19
    wl_workfunction: float = 4.8
    wl_length: float = 50e-9
    spacer_thickness: float = 50e-9
    wl_thickness: float = 40e-9
    channel_thickness: float = 10e-9

    def __post_init__(self):
        lengths = {
            "core_filler_diameter": self.core_filler_diameter,
            "tunnel_oxide_thickness": self.tunnel_oxide_thickness,
            "blocking_oxide_thickness": self.blocking_oxide_thickness,
            "wl_length": self.wl_length,
            "spacer_thickness": self.spacer_thickness,
            "wl_thickness": self.wl_thickness,
            "channel_thickness": self.channel_thickness,
        }
        for name, value in lengths.items():
            if not (math.isfinite(value) and value > 0):
                raise DomainError(f"{name} must be a positive length, got {value!r}")
        # zero nitride is allowed as a degenerate (oxide-only) stack
        if not (math.isfinite(self.nitride_thickness) and self.nitride_thickness >= 0):
            raise DomainError(f"nitride_thickness must be >= 0, got {self.nitride_thickness!r}")
        for name in ("body_doping", "drain_doping", "source_doping"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise DomainError(f"{name} must be positive, got {value!r}")

    @property
    def channel_inner_radius(self) -> float:
        return self.core_filler_diameter / 2

    @property
    def channel_outer_radius(self) -> float:
        return self.channel_inner_radius + self.channel_thickness

    @property
    def stack_thickness(self) -> float:
        return self.tunnel_oxide_thickness + self.nitride_thickness + self.blocking_oxide_thickness

    @property
    def hole_radius(self) -> float:
        """Outer radius of the blocking oxide, i.e. the channel-hole radius."""
        return self.channel_outer_radius + self.stack_thickness

    @property
    def hole_diameter(self) -> float:
        return 2 * self.hole_radius

    def stack_radii(self) -> tuple[float, float, float, float]:
        """Radii at channel surface, tunnel/nitride, nitride/blocking, hole edge."""
        r0 = self.channel_outer_radius
        r1 = r0 + self.tunnel_oxide_thickness
        r2 = r1 + self.nitride_thickness
        r3 = r2 + self.blocking_oxide_thickness
        return r0, r1, r2, r3


def _effective_width(geom: DeviceGeometry) -> float:
    return 2 * math.pi * (geom.channel_inner_radius + geom.channel_thickness / 2)


_DEFAULT_GEOMETRY = DeviceGeometry()


@dataclass(frozen=True)
class DeviceModelParams:
    """Behavioral transistor parameters for one cell or select device.

    Attributes:
        vt0: threshold voltage before any programmed shift (V).
        n: subthreshold slope factor, >= 1.
        k: transconductance parameter (A/V^2), multiplied by ``w / l``.
        lam: channel-length modulation (1/V), applied to ``|v_d - v_s|``.
        r_s: total series resistance (ohm), split evenly drain/source.
        v_th: thermal voltage (V).
        w: effective width, mid-channel circumference (m).
        l: effective length, the WL length (m).
    """

    vt0: float = 1.0
    n: float = 1.5
    k: float = 5e-4
    lam: float = 0.05
    r_s: float = 5e3
    v_th: float = THERMAL_VOLTAGE_300K
    w: float = field(default_factory=lambda: _effective_width(_DEFAULT_GEOMETRY))
    l: float = _DEFAULT_GEOMETRY.wl_length

    def __post_init__(self):
        values = (self.vt0, self.n, self.k, self.lam, self.r_s, self.v_th, self.w, self.l)
        if not all(math.isfinite(v) for v in values):
            raise DomainError(f"non-finite device parameter in {self!r}")
        if self.n < 1:
            raise DomainError(f"subthreshold factor n must be >= 1, got {self.n}")
        if self.k <= 0:
            raise DomainError(f"transconductance k must be > 0, got {self.k}")
        if self.r_s < 0:
            raise DomainError(f"series resistance must be >= 0, got {self.r_s}")
        if self.v_th <= 0 or self.w <= 0 or self.l <= 0:
            raise DomainError("v_th, w and l must be positive")

    @classmethod
    def from_geometry(cls, geom: DeviceGeometry, **kwargs) -> "DeviceModelParams":
        kwargs.setdefault("w", _effective_width(geom))
        kwargs.setdefault("l", geom.wl_length)
        return cls(**kwargs)

    @property
    def specific_current(self) -> float:
        """``2 n K (W/L) v_th^2``, the current scale of the interpolation form."""
        return 2 * self.n * self.k * (self.w / self.l) * self.v_th**2

    def replace(self, **changes) -> "DeviceModelParams":
        return replace(self, **changes)


def default_select_params(geom: DeviceGeometry = _DEFAULT_GEOMETRY) -> DeviceModelParams:
    return DeviceModelParams.from_geometry(geom, vt0=0.5)


@dataclass(frozen=True)
class CellState:
    """Programmed threshold shift; positive = programmed, negative = erased."""

    delta_vt: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.delta_vt):
            raise DomainError(f"delta_vt must be finite, got {self.delta_vt!r}")


_FRESH = CellState()


def _softplus_half(x):
    # ln(1 + exp(x/2)) and its logistic companion, overflow-safe
    half = 0.5 * x
    sp = np.logaddexp(0.0, half)
    return sp, np.exp(half - sp)


def _check_finite(*values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise DomainError("terminal voltages must be finite")


def evaluate_arrays(v_g, v_d, v_s, vt0, n, i0, lam, vth):
    """Current and ``(g_m, g_ds, g_s)`` over broadcastable arrays.

    ``v_g`` is the effective gate voltage (threshold shift already removed)
    and ``i0`` the specific current.  The circuit engine calls this directly
    with per-device parameter vectors.
    """
    v_p = (v_g - vt0) / n
    s_s, sig_s = _softplus_half((v_p - v_s) / vth)
    s_d, sig_d = _softplus_half((v_p - v_d) / vth)
    core = i0 * (s_s * s_s - s_d * s_d)
    # F'(x) = softplus(x/2) * sigmoid(x/2)
    fp_s = s_s * sig_s
    fp_d = s_d * sig_d
    vds = v_d - v_s
    m = 1.0 + lam * np.abs(vds)
    # the |vds| kink multiplies a core current that vanishes at vds == 0,
    # so the product stays C1
    lsgn = lam * np.sign(vds)
    dcore_g = i0 * (fp_s - fp_d) / (n * vth)
    dcore_d = i0 * fp_d / vth
    dcore_s = -i0 * fp_s / vth
    return core * m, dcore_g * m, dcore_d * m + core * lsgn, dcore_s * m - core * lsgn


def _evaluate(v_g, v_d, v_s, params: DeviceModelParams, state: CellState):
    _check_finite(v_g, v_d, v_s)
    v_g = np.asarray(v_g, float) - state.delta_vt
    return evaluate_arrays(
        v_g, np.asarray(v_d, float), np.asarray(v_s, float),
        params.vt0, params.n, params.specific_current, params.lam, params.v_th,
    )


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def drain_current(v_g, v_d, v_s, params: DeviceModelParams, state: CellState = _FRESH):
    """Drain-to-source current (A); accepts scalars or broadcastable arrays."""
    return _scalar(_evaluate(v_g, v_d, v_s, params, state)[0])


def drain_current_derivatives(v_g, v_d, v_s, params: DeviceModelParams, state: CellState = _FRESH):
    """Analytic ``(g_m, g_ds, g_s)`` = dI/dv_g, dI/dv_d, dI/dv_s in siemens."""
    _, gm, gd, gs = _evaluate(v_g, v_d, v_s, params, state)
    return _scalar(gm), _scalar(gd), _scalar(gs)


def cylindrical_layer_capacitance(r_in: float, thickness: float, rel_permittivity: float) -> float:
    """Per-unit-length capacitance (F/m) of a coaxial dielectric shell."""
    if not (r_in > 0 and thickness > 0):
        raise DomainError(f"need r_in > 0 and thickness > 0, got {r_in}, {thickness}")
    if not rel_permittivity > 0:
        raise DomainError(f"relative permittivity must be positive, got {rel_permittivity}")
    return 2 * math.pi * EPS0 * rel_permittivity / math.log((r_in + thickness) / r_in)


def gate_stack_layers(geom: DeviceGeometry) -> list[float]:
    """Per-unit-length capacitances of tunnel oxide, nitride, blocking oxide.

    A zero-thickness nitride contributes no layer.
    """
    r0, r1, r2, _ = geom.stack_radii()
    layers = [cylindrical_layer_capacitance(r0, geom.tunnel_oxide_thickness, EPS_SIO2)]
    if geom.nitride_thickness > 0:
        layers.append(cylindrical_layer_capacitance(r1, geom.nitride_thickness, EPS_SI3N4))
    layers.append(cylindrical_layer_capacitance(r2, geom.blocking_oxide_thickness, EPS_SIO2))
    return layers


def gate_stack_capacitance(geom: DeviceGeometry) -> float:
    """Series O/N/O capacitance per unit length (F/m) outside the channel."""
    return 1.0 / sum(1.0 / c for c in gate_stack_layers(geom))
