"""Fit cell transistor parameters to single-WL string I-V data.

The simulated curve comes from a single ``1 x 1 x n_wl`` string with the
array's select devices.  At DC the coupling capacitors are open and the
strings of an array only share ideal-source nodes, so this string carries
exactly the current of any string of the full array.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .array import ArraySpec, CellStateGrid, bl_source, build_array, wl_source
from .device import DeviceModelParams
from .errors import ConvergenceError, DomainError, FitError
from .mna import Engine, SolveOptions
from .protocols import SingleWLProtocol, single_wl_bias

log = logging.getLogger(__name__)

FREE_PARAMS = ("vt0", "n", "k", "lam", "r_s")
LOG_PARAMS = frozenset({"k", "r_s"})
DEFAULT_BOUNDS: dict[str, tuple[float, float]] = {
    "vt0": (-1.0, 3.0),
    "n": (1.0, 3.0),
    "k": (1e-6, 1e-2),
    "lam": (0.0, 0.5),
    "r_s": (1.0, 1e6),
}
I_FLOOR = 1e-14


@dataclass(frozen=True)
class ReferenceIV:
    """Single-WL reference curve: string current against probed WL voltage."""

    probed_wl: int
    v_pass: float
    v_bl: float
    v_wl: np.ndarray
    i_string: np.ndarray
    v_select: float = 5.0
    v_sl: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.v_wl, float)
        i = np.asarray(self.i_string, float)
        object.__setattr__(self, "v_wl", v)
        object.__setattr__(self, "i_string", i)
        if v.ndim != 1 or v.shape != i.shape:
            raise DomainError("v_wl and i_string must be 1-D arrays of equal length")
        if len(v) < 10:
            raise DomainError(f"need at least 10 samples, got {len(v)}")
        if not np.all(np.diff(v) > 0):
            raise DomainError("v_wl must be strictly increasing")
        if not (np.all(np.isfinite(i)) and np.all(i >= 0)):
            raise DomainError("i_string must be finite and >= 0")
        lo = max(float(i.min()), I_FLOOR)
        if not i.max() >= 100 * lo:
            raise DomainError("reference must span sub- and above-threshold (>= 2 decades of current)")

    @property
    def protocol(self) -> SingleWLProtocol:
        return SingleWLProtocol(self.probed_wl, self.v_pass, self.v_bl, tuple(self.v_wl), self.v_select, self.v_sl)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# probed_wl={self.probed_wl}\n")
        buf.write(f"# v_pass={self.v_pass!r}\n")
        buf.write(f"# v_bl={self.v_bl!r}\n")
        buf.write(f"# v_select={self.v_select!r}\n")
        buf.write(f"# v_sl={self.v_sl!r}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["v_wl", "i_string"])
        for v, i in zip(self.v_wl, self.i_string):
            writer.writerow([repr(float(v)), repr(float(i))])
        return buf.getvalue()

    def write(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


def parse_reference(text: str) -> ReferenceIV:
    """Read a reference CSV.

    Accepts the ``v_wl,i_string`` format and also a per-string curve file
    (``v,i_string_r<r>c<c>,...``), in which case the central-most string
    column is used.
    """
    meta: dict[str, str] = {}
    rows = []
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, value = body.split("=", 1)
                meta[key.strip()] = value.strip()
            continue
        rows.append(line)
    if not rows:
        raise DomainError("reference file has no header row")
    header = next(csv.reader([rows[0]]))
    data = [next(csv.reader([r])) for r in rows[1:]]
    if header[:2] == ["v_wl", "i_string"]:
        col = 1
    elif header[0] == "v" and len(header) > 1:
        col = len(header) // 2 if len(header) > 2 else 1
        col = max(1, col)
        centre = meta.get("central_string")
        if centre and f"i_string_{centre}" in header:
            col = header.index(f"i_string_{centre}")
    else:
        raise DomainError(f"unrecognised reference header {header!r}")
    try:
        v = np.array([float(r[0]) for r in data])
        i = np.array([float(r[col]) for r in data])
        probed = int(meta.get("probed_wl", 0))
        v_pass = float(meta.get("v_pass", 5.0))
        v_bl = float(meta.get("v_bl", 0.5))
        v_select = float(meta.get("v_select", 5.0))
        v_sl = float(meta.get("v_sl", 0.0))
    except (ValueError, IndexError) as exc:
        raise DomainError(f"malformed reference data: {exc}") from None
    return ReferenceIV(probed, v_pass, v_bl, v, i, v_select, v_sl)


def read_reference(path) -> ReferenceIV:
    return parse_reference(Path(path).read_text(encoding="utf-8"))


def add_noise(reference: ReferenceIV, rel_sigma: float, seed: int = 0) -> ReferenceIV:
    """Multiplicative Gaussian noise ``i * (1 + rel_sigma * N(0, 1))``, clipped at 0."""
    rng = np.random.default_rng(seed)
    noisy = reference.i_string * (1.0 + rel_sigma * rng.standard_normal(len(reference.i_string)))
    return replace(reference, i_string=np.clip(noisy, 0.0, None))


# -- simulation ---------------------------------------------------------------


class StringSimulator:
    """Single-WL sweep of one string with replaceable cell parameters.

    Successive calls warm-start every bias point from the previous call's
    converged iterate, which is what makes optimizer loops cheap.
    """

    def __init__(
        self,
        array: ArraySpec,
        protocol: SingleWLProtocol,
        options: SolveOptions | None = None,
        states: np.ndarray | None = None,
        warm_start: bool = True,
    ):
        protocol.check(array)
        self.spec = replace(array, rows=1, cols=1)
        self.protocol = protocol
        self.options = options or SolveOptions()
        self.states = None if states is None else CellStateGrid(self.spec, np.reshape(states, (1, 1, -1)))
        self.warm_start = warm_start
        self._warm: list | None = None
        self.evaluations = 0

    def currents(self, params: DeviceModelParams) -> np.ndarray:
        """String current per grid point; NaN where the solve failed."""
        spec = replace(self.spec, cell_params=params)
        circuit = build_array(spec, self.states)
        engine = Engine(circuit, self.options)
        base = single_wl_bias(spec, self.protocol)
        target = (wl_source(self.protocol.probed_wl),)
        warm = self._warm if self.warm_start else None
        cur, iterates, _, ok = engine.sweep(base, target, self.protocol.grid, [bl_source(0, 0)], warm)
        self.evaluations += 1
        if self.warm_start and ok.all():
            self._warm = iterates
        return cur[:, 0]


def synthesize_reference(
    array: ArraySpec,
    true_params: DeviceModelParams,
    protocol: SingleWLProtocol,
    options: SolveOptions | None = None,
) -> ReferenceIV:
    """Run the single-WL experiment with ``true_params`` and record the curve."""
    sim = StringSimulator(array, protocol, options, warm_start=False)
    i = sim.currents(true_params)
    if not np.all(np.isfinite(i)):
        bad = np.asarray(protocol.grid)[~np.isfinite(i)]
        raise ConvergenceError(f"reference synthesis failed at v_wl = {bad.tolist()}")
    return ReferenceIV(
        protocol.probed_wl, protocol.v_pass, protocol.v_bl, np.asarray(protocol.grid), i,
        protocol.v_select, protocol.v_sl,
    )


# -- objective ----------------------------------------------------------------


def score(i_sim, i_ref, w_lin: float = 1.0, w_log: float = 1.0, i_floor: float = I_FLOOR):
    """Combined linear/log mismatch; ``inf`` if any simulated point is missing."""
    i_sim = np.asarray(i_sim, float)
    i_ref = np.asarray(i_ref, float)
    if not np.all(np.isfinite(i_sim)) or np.any(i_sim + i_floor <= 0):
        return math.inf, None
    lin = (i_sim - i_ref) / np.max(i_ref)
    lg = np.log10(i_sim + i_floor) - np.log10(i_ref + i_floor)
    terms = w_lin * lin**2 + w_log * lg**2
    return float(np.mean(terms)), terms


def fit_objective(
    params: DeviceModelParams,
    reference: ReferenceIV,
    array: ArraySpec,
    w_lin: float = 1.0,
    w_log: float = 1.0,
    i_floor: float = I_FLOOR,
    options: SolveOptions | None = None,
    simulator: StringSimulator | None = None,
) -> float:
    """Mismatch between the simulated and reference single-WL curves.

    Returns ``inf`` when the circuit solve fails at any sample.
    """
    sim = simulator or StringSimulator(array, reference.protocol, options)
    return score(sim.currents(params), reference.i_string, w_lin, w_log, i_floor)[0]


# -- fit ----------------------------------------------------------------------


@dataclass
class FitReport:
    params: DeviceModelParams
    objective: float
    initial_objective: float
    iterations: int
    evaluations: int
    converged: bool
    residuals: np.ndarray
    restarts_used: int
    trace: list[float] = field(default_factory=list)

    def summary(self) -> str:
        p = self.params
        lines = [
            "fit summary",
            f"  objective      {self.objective:.6e} (initial {self.initial_objective:.6e})",
            f"  converged      {self.converged}",
            f"  iterations     {self.iterations} ({self.evaluations} objective evaluations, "
            f"{self.restarts_used} restarts)",
            f"  vt0            {p.vt0:.6f} V",
            f"  n              {p.n:.6f}",
            f"  k              {p.k:.6e} A/V^2",
            f"  lam            {p.lam:.6f} 1/V",
            f"  r_s            {p.r_s:.6e} ohm",
        ]
        return "\n".join(lines)

    def to_csv(self, reference: ReferenceIV) -> str:
        buf = io.StringIO()
        for line in self.summary().splitlines():
            buf.write(f"# {line}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["v_wl", "i_ref", "i_fit", "residual"])
        i_fit = reference.i_string + self.residuals
        for v, ir, fi, r in zip(reference.v_wl, reference.i_string, i_fit, self.residuals):
            writer.writerow([f"{v:.6e}", f"{ir:.6e}", f"{fi:.6e}", f"{r:.6e}"])
        return buf.getvalue()


class _Scaling:
    """Map the free parameters to the unit cube (log axes for k and r_s)."""

    def __init__(self, bounds: dict[str, tuple[float, float]]):
        self.bounds = {}
        for name in FREE_PARAMS:
            lo, hi = bounds.get(name, DEFAULT_BOUNDS[name])
            if not lo < hi:
                raise DomainError(f"bad bounds for {name}: {lo}, {hi}")
            if name in LOG_PARAMS:
                if lo <= 0:
                    raise DomainError(f"log-scaled parameter {name} needs a positive lower bound")
                lo, hi = math.log10(lo), math.log10(hi)
            self.bounds[name] = (lo, hi)

    def to_unit(self, params: DeviceModelParams) -> np.ndarray:
        z = []
        for name in FREE_PARAMS:
            lo, hi = self.bounds[name]
            v = getattr(params, name)
            if name in LOG_PARAMS:
                v = math.log10(v) if v > 0 else -math.inf
            z.append((v - lo) / (hi - lo))
        return np.array(z)

    def from_unit(self, z: np.ndarray, template: DeviceModelParams) -> DeviceModelParams:
        values = {}
        for name, zi in zip(FREE_PARAMS, np.clip(z, 0.0, 1.0)):
            lo, hi = self.bounds[name]
            v = lo + zi * (hi - lo)
            values[name] = 10.0**v if name in LOG_PARAMS else v
        return template.replace(**values)


def fit_device_params(
    reference: ReferenceIV,
    array: ArraySpec,
    initial: DeviceModelParams,
    bounds: dict[str, tuple[float, float]] | None = None,
    seed: int = 0,
    restarts: int = 3,
    w_lin: float = 1.0,
    w_log: float = 1.0,
    i_floor: float = I_FLOOR,
    options: SolveOptions | None = None,
    max_evaluations: int = 1500,
    run_evaluations: int = 300,
    xatol: float = 1e-5,
    fatol: float = 1e-12,
) -> FitReport:
    """Bounded Nelder-Mead over (vt0, n, k, lam, r_s) with seeded restarts.

    The first run starts from ``initial``.  Each restart rebuilds a
    randomly jittered simplex around the best point so far; restarts stop
    as soon as one fails to improve the objective.  A single run is capped
    at ``run_evaluations`` objective calls: on this ill-conditioned
    objective a fresh simplex makes faster progress than a collapsed one.
    """
    scaling = _Scaling(bounds or {})
    z0 = scaling.to_unit(initial)
    if not np.all((z0 >= 0) & (z0 <= 1)):
        raise FitError(f"initial parameters outside bounds: {dict(zip(FREE_PARAMS, z0.round(3)))}")
    sim = StringSimulator(array, reference.protocol, options)
    rng = np.random.default_rng(seed)

    best = {"f": math.inf, "z": z0}
    trace: list[float] = []

    def objective(z):
        f = score(sim.currents(scaling.from_unit(z, initial)), reference.i_string, w_lin, w_log, i_floor)[0]
        if f < best["f"]:
            best["f"], best["z"] = f, np.clip(z, 0.0, 1.0)
        trace.append(best["f"])
        # large finite penalty keeps the simplex well defined
        return f if math.isfinite(f) else 1e6

    f0 = objective(z0)
    if not math.isfinite(f0):
        raise FitError("objective is not defined at the initial parameters (circuit solve failed)")

    iterations = 0
    converged = False
    restarts_used = 0
    unit = [(0.0, 1.0)] * len(FREE_PARAMS)
    for run in range(restarts + 1):
        z_start = best["z"]
        f_start = best["f"]
        if run == 0:
            step = 0.05
            simplex = np.vstack([z_start] + [z_start + step * e for e in np.eye(len(z_start))])
        else:
            restarts_used += 1
            step = 0.02 * (1 + rng.random(len(z_start)))
            signs = rng.choice([-1.0, 1.0], size=len(z_start))
            simplex = np.vstack([z_start] + [z_start + signs[i] * step[i] * e for i, e in enumerate(np.eye(len(z_start)))])
            simplex += 0.002 * rng.standard_normal(simplex.shape) * (np.arange(len(simplex)) > 0)[:, None]
        # keep vertices inside the cube by reflecting overshoots
        simplex = np.where(simplex > 1.0, 2.0 * z_start - simplex, simplex)
        simplex = np.clip(simplex, 0.0, 1.0)
        budget = min(run_evaluations, max_evaluations - sim.evaluations)
        if budget <= len(z_start) + 1:
            break
        res = minimize(
            objective,
            z_start,
            method="Nelder-Mead",
            bounds=unit,
            options={"initial_simplex": simplex, "xatol": xatol, "fatol": fatol, "maxfev": budget, "adaptive": True},
        )
        iterations += int(res.nit)
        improved = best["f"] < f_start - max(1e-3 * f_start, 1e-15)
        log.info("fit run %d: objective %.3e -> %.3e (%d evaluations)", run, f_start, best["f"], res.nfev)
        converged = bool(res.success)
        if run > 0 and not improved:
            break

    params = scaling.from_unit(best["z"], initial)
    i_fit = sim.currents(params)
    return FitReport(
        params=params,
        objective=best["f"],
        initial_objective=f0,
        iterations=iterations,
        evaluations=sim.evaluations,
        converged=converged,
        residuals=i_fit - reference.i_string,
        restarts_used=restarts_used,
        trace=trace,
    )
