"""TOML run configuration.

Sections (every key optional, unknown keys rejected):

``[device]``
    geometry fields of :class:`~nandmacro.device.DeviceGeometry` (metres,
    cm^-3, eV); sub-tables ``[device.cell]``, ``[device.bsl]`` and
    ``[device.ssl]`` hold :class:`~nandmacro.device.DeviceModelParams` fields.
    ``w``/``l`` default to values derived from the geometry.
``[array]``
    ``rows``, ``cols``, ``n_wl``, ``pitch_x``, ``pitch_y``, ``neglect_cd`` and
    an optional ``[array.coupling]`` table overriding ``c_v``/``c_h``/``c_s``/``c_d``.
``[bias]``
    ``v_bl``, ``v_pass``, ``v_select``, ``v_sl``, ``sweep_start``,
    ``sweep_stop``, ``sweep_step``.
``[solver]``
    :class:`~nandmacro.mna.SolveOptions` fields plus ``workers``.
``[[states]]``
    one table per programmed cell: ``row``, ``col``, ``layer``, ``delta_vt``.
``[disturb]``
    transient disturb protocol, see :class:`DisturbSection`.
``[fit]``
    extraction settings, see :class:`FitSection`; ``[fit.initial]`` and
    ``[fit.bounds]`` (``name = [lo, hi]``) sub-tables.
"""

from __future__ import annotations

import dataclasses
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .array import ArraySpec, CellStateGrid
from .coupling import ArrayPitch, CouplingCaps, estimate_coupling_caps
from .device import DeviceGeometry, DeviceModelParams
from .errors import ConfigError
from .mna import SolveOptions
from .protocols import DEFAULT_V_BL, DEFAULT_V_PASS, DEFAULT_V_SELECT

_MODEL_FIELDS = {f.name for f in dataclasses.fields(DeviceModelParams)}


@dataclass(frozen=True)
class BiasSection:
    v_bl: float = DEFAULT_V_BL
    v_pass: float = DEFAULT_V_PASS
    v_select: float = DEFAULT_V_SELECT
    v_sl: float = 0.0
    sweep_start: float = 0.0
    sweep_stop: float = 5.0
    sweep_step: float = 0.05

    def __post_init__(self):
        if not self.sweep_step > 0:
            raise ConfigError("bias.sweep_step must be > 0")
        if not self.sweep_start <= self.sweep_stop:
            raise ConfigError("bias.sweep_start must not exceed bias.sweep_stop")


@dataclass(frozen=True)
class DisturbSection:
    """Transient disturb protocol.

    ``ramped_layer = -1`` picks the middle layer.  The ramp starts at
    ``v_hold`` and rises at ``ramp_rate`` for ``ramp_time``; the run lasts
    ``t_end`` with ``steps`` backward-Euler steps.  Victim gates are driven
    through ``probe_resistance``.
    """

    ramped_layer: int = -1
    v_hold: float = 0.0
    v_bl: float = 0.0
    v_select: float = 0.0
    ramp_rate: float = 1e11
    ramp_time: float = 1e-11
    t_end: float = 2e-11
    steps: int = 200
    probe_resistance: float = 1e9

    def __post_init__(self):
        for name in ("ramp_time", "t_end", "probe_resistance"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"disturb.{name} must be > 0")
        if self.steps < 1:
            raise ConfigError("disturb.steps must be >= 1")


@dataclass(frozen=True)
class FitSection:
    probed_wl: int = -1
    seed: int = 0
    restarts: int = 3
    w_lin: float = 1.0
    w_log: float = 1.0
    i_floor: float = 1e-14
    max_evaluations: int = 1500
    run_evaluations: int = 300
    initial: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RunConfig:
    geometry: DeviceGeometry = field(default_factory=DeviceGeometry)
    cell: DeviceModelParams = field(default_factory=DeviceModelParams)
    bsl: DeviceModelParams = field(default_factory=lambda: DeviceModelParams(vt0=0.5))
    ssl: DeviceModelParams = field(default_factory=lambda: DeviceModelParams(vt0=0.5))
    rows: int = 3
    cols: int = 3
    n_wl: int = 10
    pitch: ArrayPitch = field(default_factory=ArrayPitch)
    neglect_cd: bool = False
    coupling_overrides: dict = field(default_factory=dict)
    bias: BiasSection = field(default_factory=BiasSection)
    solver: SolveOptions = field(default_factory=SolveOptions)
    workers: int = 1
    states: tuple = ()
    disturb: DisturbSection = field(default_factory=DisturbSection)
    fit: FitSection = field(default_factory=FitSection)

    def coupling(self) -> CouplingCaps:
        caps = estimate_coupling_caps(self.geometry, self.pitch)
        return caps.replace(**self.coupling_overrides) if self.coupling_overrides else caps

    def array_spec(self) -> ArraySpec:
        return ArraySpec(
            rows=self.rows,
            cols=self.cols,
            n_wl=self.n_wl,
            cell_params=self.cell,
            bsl_params=self.bsl,
            ssl_params=self.ssl,
            coupling=self.coupling(),
            neglect_cd=self.neglect_cd,
        )

    def cell_states(self, spec: ArraySpec | None = None) -> CellStateGrid:
        spec = spec or self.array_spec()
        try:
            return CellStateGrid.from_entries(spec, self.states)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _check_keys(table: dict, allowed, where: str) -> None:
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")


def _scalars(table: dict, cls, where: str, skip=()) -> dict[str, Any]:
    """Type-check scalar entries against the fields of ``cls``."""
    out = {}
    types = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in table.items():
        if key in skip:
            continue
        default = types[key].default
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"[{where}] {key} must be true/false")
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"[{where}] {key} must be an integer")
        elif isinstance(default, float) or default is dataclasses.MISSING:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"[{where}] {key} must be a number")
            value = float(value)
            if not math.isfinite(value):
                raise ConfigError(f"[{where}] {key} must be finite")
        out[key] = value
    return out


def _build(cls, kwargs, where):
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{where}] {exc}") from None


def _model(table: dict, geometry: DeviceGeometry, base: dict, where: str) -> DeviceModelParams:
    if not isinstance(table, dict):
        raise ConfigError(f"[{where}] must be a table")
    _check_keys(table, _MODEL_FIELDS, where)
    kwargs = {**base, **_scalars(table, _ModelDefaults, where)}
    try:
        return DeviceModelParams.from_geometry(geometry, **kwargs)
    except ValueError as exc:
        raise ConfigError(f"[{where}] {exc}") from None


@dataclass
class _ModelDefaults:
    # float-typed mirror of DeviceModelParams for key checking
    vt0: float = 0.0
    n: float = 0.0
    k: float = 0.0
    lam: float = 0.0
    r_s: float = 0.0
    v_th: float = 0.0
    w: float = 0.0
    l: float = 0.0


def parse_config(text: str) -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from None
    return config_from_dict(data)


def config_from_dict(data: dict) -> RunConfig:
    _check_keys(data, {"device", "array", "bias", "solver", "states", "disturb", "fit"}, "top level")
    kwargs: dict[str, Any] = {}

    device = dict(data.get("device", {}))
    models = {name: device.pop(name, {}) for name in ("cell", "bsl", "ssl")}
    geom_fields = {f.name for f in dataclasses.fields(DeviceGeometry)}
    _check_keys(device, geom_fields, "device")
    geometry = _build(DeviceGeometry, _scalars(device, DeviceGeometry, "device"), "device")
    kwargs["geometry"] = geometry
    kwargs["cell"] = _model(models["cell"], geometry, {}, "device.cell")
    kwargs["bsl"] = _model(models["bsl"], geometry, {"vt0": 0.5}, "device.bsl")
    kwargs["ssl"] = _model(models["ssl"], geometry, {"vt0": 0.5}, "device.ssl")

    array = dict(data.get("array", {}))
    coupling = array.pop("coupling", {})
    _check_keys(array, {"rows", "cols", "n_wl", "pitch_x", "pitch_y", "neglect_cd"}, "array")
    for key in ("rows", "cols", "n_wl"):
        if key in array:
            value = array[key]
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(f"[array] {key} must be an integer >= 1")
            kwargs[key] = value
    if "neglect_cd" in array:
        if not isinstance(array["neglect_cd"], bool):
            raise ConfigError("[array] neglect_cd must be true/false")
        kwargs["neglect_cd"] = array["neglect_cd"]
    pitch = _scalars({k: v for k, v in array.items() if k.startswith("pitch")}, ArrayPitch, "array")
    kwargs["pitch"] = ArrayPitch(**pitch)
    try:
        kwargs["pitch"].validate(geometry)
    except ValueError as exc:
        raise ConfigError(f"[array] {exc}") from None
    _check_keys(coupling, {"c_v", "c_h", "c_s", "c_d"}, "array.coupling")
    overrides = _scalars(coupling, CouplingCaps, "array.coupling")
    _build(CouplingCaps, overrides, "array.coupling")
    kwargs["coupling_overrides"] = overrides

    bias = data.get("bias", {})
    _check_keys(bias, {f.name for f in dataclasses.fields(BiasSection)}, "bias")
    kwargs["bias"] = _build(BiasSection, _scalars(bias, BiasSection, "bias"), "bias")

    solver = dict(data.get("solver", {}))
    workers = solver.pop("workers", 1)
    if isinstance(workers, bool) or not isinstance(workers, int) or workers < 1:
        raise ConfigError("[solver] workers must be an integer >= 1")
    kwargs["workers"] = workers
    _check_keys(solver, {f.name for f in dataclasses.fields(SolveOptions)}, "solver")
    kwargs["solver"] = _build(SolveOptions, _scalars(solver, SolveOptions, "solver"), "solver")

    states = data.get("states", [])
    if not isinstance(states, list):
        raise ConfigError("states must be an array of tables ([[states]])")
    entries = []
    for k, st in enumerate(states):
        where = f"states[{k}]"
        if not isinstance(st, dict):
            raise ConfigError(f"{where} must be a table")
        _check_keys(st, {"row", "col", "layer", "delta_vt"}, where)
        missing = {"row", "col", "layer", "delta_vt"} - set(st)
        if missing:
            raise ConfigError(f"{where} lacks {', '.join(sorted(missing))}")
        for key in ("row", "col", "layer"):
            if isinstance(st[key], bool) or not isinstance(st[key], int):
                raise ConfigError(f"{where}.{key} must be an integer")
        if isinstance(st["delta_vt"], bool) or not isinstance(st["delta_vt"], (int, float)):
            raise ConfigError(f"{where}.delta_vt must be a number")
        entries.append((st["row"], st["col"], st["layer"], float(st["delta_vt"])))
    kwargs["states"] = tuple(entries)

    disturb = data.get("disturb", {})
    _check_keys(disturb, {f.name for f in dataclasses.fields(DisturbSection)}, "disturb")
    kwargs["disturb"] = _build(DisturbSection, _scalars(disturb, DisturbSection, "disturb"), "disturb")

    fit = dict(data.get("fit", {}))
    initial = fit.pop("initial", {})
    bounds = fit.pop("bounds", {})
    _check_keys(fit, {f.name for f in dataclasses.fields(FitSection)} - {"initial", "bounds"}, "fit")
    free = {"vt0", "n", "k", "lam", "r_s"}
    _check_keys(initial, free, "fit.initial")
    _check_keys(bounds, free, "fit.bounds")
    init = _scalars(initial, _ModelDefaults, "fit.initial")
    bnds = {}
    for key, value in bounds.items():
        if not (isinstance(value, list) and len(value) == 2 and all(isinstance(v, (int, float)) for v in value)):
            raise ConfigError(f"[fit.bounds] {key} must be [lo, hi]")
        bnds[key] = (float(value[0]), float(value[1]))
    kwargs["fit"] = _build(
        FitSection, {**_scalars(fit, FitSection, "fit"), "initial": init, "bounds": bnds}, "fit"
    )

    cfg = RunConfig(**kwargs)
    cfg.cell_states()  # range-check state entries early
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
