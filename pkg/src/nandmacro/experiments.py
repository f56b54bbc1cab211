"""Measurement protocols wired from a :class:`RunConfig` to CSV and netlist files."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .array import ArraySpec, bl_source, build_array, gate_node, neighbor_pairs, probe_gate, wl_node, wl_source
from .circuit import Capacitor, Ramp
from .config import RunConfig
from .coupling import CapacitanceMatrix, parse_network_text, reduce_capacitance_network
from .errors import ConvergenceError, DomainError
from .extraction import FitReport, ReferenceIV, fit_device_params, read_reference
from .mna import BiasPlan, Sweep, dc_sweep, transient_solve
from .netlist import NetlistDocument, emit_netlist
from .protocols import array_bias

log = logging.getLogger(__name__)

FAILURE_LIMIT = 0.10


@dataclass
class CurveCSV:
    """Per-string current curves against one swept voltage."""

    v: np.ndarray
    currents: dict[str, np.ndarray]  # column label -> A
    metadata: dict[str, str] = field(default_factory=dict)
    converged: np.ndarray | None = None

    @property
    def failed_fraction(self) -> float:
        if self.converged is None or not len(self.converged):
            return 0.0
        return float(1.0 - np.mean(self.converged))

    def to_text(self) -> str:
        buf = io.StringIO()
        for key, value in self.metadata.items():
            buf.write(f"# {key}={value}\n")
        writer = csv.writer(buf, lineterminator="\n")
        labels = list(self.currents)
        writer.writerow(["v", *labels])
        for k, v in enumerate(self.v):
            writer.writerow([f"{v:.6e}", *(f"{self.currents[c][k]:.10e}" for c in labels)])
        return buf.getvalue()

    def write(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    def column(self, r: int, c: int) -> np.ndarray:
        return self.currents[f"i_string_r{r}c{c}"]


def _grid(cfg: RunConfig) -> Sweep:
    b = cfg.bias
    return Sweep("", b.sweep_start, b.sweep_stop, b.sweep_step)


def _string_probes(spec: ArraySpec) -> dict[str, str]:
    return {f"i_string_r{r}c{c}": bl_source(r, c) for r, c in spec.strings()}


def _metadata(cfg: RunConfig, spec: ArraySpec, experiment: str, **extra) -> dict[str, str]:
    b = cfg.bias
    r, c = spec.central_string
    meta = {
        "tool": f"nandmacro {__version__}",
        "experiment": experiment,
        "array": f"{spec.rows}x{spec.cols}x{spec.n_wl}",
        "central_string": f"r{r}c{c}",
    }
    meta.update({k: repr(v) if isinstance(v, float) else str(v) for k, v in extra.items()})
    meta.update(
        v_bl=repr(b.v_bl), v_select=repr(b.v_select), v_sl=repr(b.v_sl),
        sweep=f"{b.sweep_start!r}:{b.sweep_stop!r}:{b.sweep_step!r}",
        states=";".join(f"{r},{c},{l},{d!r}" for r, c, l, d in cfg.states) or "none",
    )
    return meta


def _run_sweep(cfg: RunConfig, plan_sources: dict, targets, experiment: str, meta_extra: dict) -> CurveCSV:
    spec = cfg.array_spec()
    circuit = build_array(spec, cfg.cell_states(spec))
    grid = _grid(cfg)
    sweep = Sweep(targets, grid.start, grid.stop, grid.step)
    probes = _string_probes(spec)
    res = dc_sweep(circuit, BiasPlan(plan_sources, sweep), cfg.solver, probes, workers=cfg.workers, keep_voltages=False)
    conv = res.converged
    if not conv.all():
        log.warning("%d of %d sweep points failed to converge", int((~conv).sum()), len(conv))
    meta = _metadata(cfg, spec, experiment, **meta_extra)
    meta["failed_points"] = str(int((~conv).sum()))
    return CurveCSV(res.values, {label: res.current(label) for label in probes}, meta, conv)


def cmd_single_wl(cfg: RunConfig, probed_layer: int) -> CurveCSV:
    """Sweep WL ``probed_layer``; every other WL sits at ``v_pass``."""
    if not 0 <= probed_layer < cfg.n_wl:
        raise DomainError(f"probed layer {probed_layer} outside 0..{cfg.n_wl - 1}")
    spec = cfg.array_spec()
    b = cfg.bias
    sources = array_bias(spec, b.v_pass, b.v_bl, b.v_select, b.v_sl)
    return _run_sweep(cfg, sources, wl_source(probed_layer), "single-wl",
                      {"probed_wl": probed_layer, "v_pass": b.v_pass})


def cmd_multi_wl(cfg: RunConfig) -> CurveCSV:
    """All WLs tied together and swept."""
    spec = cfg.array_spec()
    b = cfg.bias
    sources = array_bias(spec, 0.0, b.v_bl, b.v_select, b.v_sl)
    targets = tuple(wl_source(l) for l in range(spec.n_wl))
    return _run_sweep(cfg, sources, targets, "multi-wl", {"probed_wl": "all"})


# -- disturb ------------------------------------------------------------------


@dataclass
class DisturbResult:
    times: np.ndarray
    ramp: np.ndarray
    excursions: dict[str, np.ndarray]  # victim gate node -> v(t) - v(0)
    predicted_ratio: dict[str, float]  # hand capacitive-divider estimate per victim
    delta_v: float
    metadata: dict[str, str]

    def peak(self, node: str) -> float:
        return float(np.max(np.abs(self.excursions[node])))

    def ratio(self, node: str) -> float:
        return self.peak(node) / self.delta_v if self.delta_v else 0.0

    def to_text(self) -> str:
        buf = io.StringIO()
        for key, value in self.metadata.items():
            buf.write(f"# {key}={value}\n")
        for node, r in self.predicted_ratio.items():
            buf.write(f"# predicted_ratio_{node}={r:.6e}\n")
            buf.write(f"# simulated_ratio_{node}={self.ratio(node):.6e}\n")
        writer = csv.writer(buf, lineterminator="\n")
        victims = list(self.excursions)
        writer.writerow(["t", "v_ramp", *(f"dv_{n}" for n in victims)])
        for k, t in enumerate(self.times):
            writer.writerow([f"{t:.6e}", f"{self.ramp[k]:.6e}", *(f"{self.excursions[n][k]:.6e}" for n in victims)])
        return buf.getvalue()

    def write(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")


def disturb_victims(spec: ArraySpec, layer: int) -> list[tuple[int, int, int]]:
    """Vertical neighbors, in the central string, of the ramped layer."""
    r, c = spec.central_string
    return [(r, c, l) for l in (layer - 1, layer + 1) if 0 <= l < spec.n_wl]


def divider_prediction(spec: ArraySpec, victim, ramped_layer: int) -> float:
    """Capacitance from ``victim`` to gates on the ramped layer over its total capacitance.

    Every other gate is held by its VCVS, so the victim is a single floating
    node in a capacitive divider.
    """
    total = to_ramped = 0.0
    for a, b, kind in neighbor_pairs(spec):
        if kind == "D" and spec.neglect_cd:
            continue
        if victim not in (a, b):
            continue
        other = b if a == victim else a
        value = spec.coupling.value(kind)
        total += value
        if other[2] == ramped_layer:
            to_ramped += value
    return to_ramped / total if total > 0 else 0.0


def cmd_disturb(
    cfg: RunConfig,
    ramped_layer: int | None = None,
    ramp_rate: float | None = None,
    t_end: float | None = None,
) -> DisturbResult:
    """Ramp one WL plate and record gate-voltage excursions of its vertical neighbors.

    All transistors are held off (``v_hold`` on every WL and ``v_select``
    on the select lines).  The victim gates are driven from their VCVS
    through a large resistance so the coupling capacitors can move them.
    """
    d = cfg.disturb
    spec = cfg.array_spec()
    layer = ramped_layer if ramped_layer is not None else d.ramped_layer
    if layer < 0:
        layer = spec.n_wl // 2
    if not layer < spec.n_wl:
        raise DomainError(f"ramped layer {layer} outside 0..{spec.n_wl - 1}")
    rate = d.ramp_rate if ramp_rate is None else ramp_rate
    t_stop = d.t_end if t_end is None else t_end
    if not t_stop > 0:
        raise DomainError("t_end must be > 0")
    ramp_time = min(d.ramp_time, t_stop)
    delta_v = rate * ramp_time

    circuit = build_array(spec, cfg.cell_states(spec))
    victims = disturb_victims(spec, layer)
    for cell in victims:
        circuit = probe_gate(circuit, *cell, d.probe_resistance)
    sources = array_bias(spec, d.v_hold, d.v_bl, d.v_select, 0.0)
    sources[wl_source(layer)] = Ramp(0.0, ramp_time, d.v_hold, d.v_hold + delta_v)
    dt = t_stop / d.steps
    try:
        tr = transient_solve(circuit, BiasPlan(sources), t_stop, dt, cfg.solver)
    except ConvergenceError:
        raise
    names = [gate_node(*cell) for cell in victims]
    excursions = {n: tr.voltage(n) - tr.voltage(n)[0] for n in names}
    predicted = {gate_node(*cell): divider_prediction(spec, cell, layer) for cell in victims}
    meta = {
        "tool": f"nandmacro {__version__}",
        "experiment": "disturb",
        "array": f"{spec.rows}x{spec.cols}x{spec.n_wl}",
        "ramped_layer": str(layer),
        "ramp_rate": repr(rate),
        "ramp_time": repr(ramp_time),
        "delta_v": repr(delta_v),
        "t_end": repr(t_stop),
        "dt": repr(dt),
        "probe_resistance": repr(d.probe_resistance),
        "coupling": " ".join(f"{k}={v:.6e}" for k, v in spec.coupling.as_dict().items()),
    }
    return DisturbResult(tr.times, tr.voltage(wl_node(layer)), excursions, predicted, delta_v, meta)


# -- file commands --------------------------------------------------------------


def cmd_export_netlist(cfg: RunConfig, out_path) -> NetlistDocument:
    spec = cfg.array_spec()
    states = cfg.cell_states(spec)
    doc = emit_netlist(build_array(spec, states), spec, states)
    doc.write(out_path)
    return doc


def cmd_extract_caps(network_file, out_path=None) -> CapacitanceMatrix:
    """Reduce a capacitor-network file to its terminal capacitance matrix."""
    text = Path(network_file).read_text(encoding="utf-8")
    nodes, elements, terminals = parse_network_text(text)
    result = reduce_capacitance_network(nodes, elements, terminals)
    if out_path is not None:
        Path(out_path).write_text(result.to_csv(), encoding="utf-8")
    return result


def cmd_fit(cfg: RunConfig, reference_file, out_path=None) -> tuple[FitReport, ReferenceIV]:
    """Fit cell parameters to a reference curve file; optionally write the report CSV."""
    reference = read_reference(reference_file)
    f = cfg.fit
    if f.probed_wl >= 0 and f.probed_wl != reference.probed_wl:
        raise DomainError(f"config fit.probed_wl={f.probed_wl} but reference probes layer {reference.probed_wl}")
    spec = cfg.array_spec()
    initial = cfg.cell.replace(**f.initial) if f.initial else cfg.cell
    report = fit_device_params(
        reference, spec, initial, bounds=f.bounds, seed=f.seed, restarts=f.restarts,
        w_lin=f.w_lin, w_log=f.w_log, i_floor=f.i_floor, options=cfg.solver,
        max_evaluations=f.max_evaluations, run_evaluations=f.run_evaluations,
    )
    if out_path is not None:
        Path(out_path).write_text(report.to_csv(reference), encoding="utf-8")
    return report, reference


def capacitor_count(circuit) -> dict[str, int]:
    counts = {"V": 0, "H": 0, "S": 0, "D": 0}
    for e in circuit.of_type(Capacitor):
        counts[e.name[1]] += 1
    return counts
