"""Modified nodal analysis: DC operating point, DC sweep, transient, AC.

Nodes whose voltage is pinned by an independent source (or by a VCVS whose
inputs are pinned) are eliminated before Newton iteration; the remaining
unknowns fall apart into independent blocks (for an array: one per string),
each solved with its own damped Newton loop, gmin ladder and source
stepping.  Currents of pinning sources are recovered from KCL afterwards.

Transistor series resistance ``r_s`` is split into two internal nodes,
``r_s / 2`` at drain and source.  ``gmin`` sits across every transistor
drain-source path, and as a node-to-ground shunt only on nodes that have
no conductive element at all.  The continuation ladder adds larger
node-to-ground shunts temporarily.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg.lapack import dgesv as _dgesv
from scipy.sparse.csgraph import connected_components

from .circuit import GROUND, VCVS, Capacitor, Circuit, Ramp, Resistor, SourceValue, Transistor, VSource, source_value
from .device import evaluate_arrays
from .errors import ConvergenceError, DomainError, SingularCircuitError

log = logging.getLogger(__name__)

DENSE_MAX = 250
# residuals below this fraction of the stamped current magnitudes are rounding noise
_NOISE = 1e3 * np.finfo(float).eps


def _stamp_magnitude(j, x) -> float:
    ax = np.abs(x)
    return float((abs(j) @ ax).max(initial=0.0)) if sp.issparse(j) else float((np.abs(j) @ ax).max(initial=0.0))


@dataclass(frozen=True)
class SolveOptions:
    abstol_current: float = 1e-12
    reltol: float = 1e-6
    max_newton_iters: int = 100
    gmin: float = 1e-12
    gmin_ladder_top: float = 1e-3
    damping: float = 0.5
    vntol: float = 1e-9
    source_steps: int = 10

    def __post_init__(self):
        for name in ("abstol_current", "reltol", "gmin", "gmin_ladder_top", "damping", "vntol"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        if self.max_newton_iters < 1 or self.source_steps < 1:
            raise DomainError("iteration counts must be >= 1")


@dataclass(frozen=True)
class Sweep:
    """Sweep one source, or several tied together, from ``start`` to ``stop``."""

    target: str | tuple[str, ...]
    start: float
    stop: float
    step: float

    def __post_init__(self):
        if not self.step > 0:
            raise DomainError("sweep step must be > 0")
        if not self.start <= self.stop:
            raise DomainError("sweep start must not exceed stop")

    @property
    def targets(self) -> tuple[str, ...]:
        return (self.target,) if isinstance(self.target, str) else tuple(self.target)

    def values(self) -> np.ndarray:
        n = int(math.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        return self.start + self.step * np.arange(n)


@dataclass(frozen=True)
class BiasPlan:
    """Source assignments by source or node name, plus an optional sweep."""

    sources: Mapping[str, SourceValue] = field(default_factory=dict)
    sweep: Sweep | None = None


def resolve_source(circuit: Circuit, name: str) -> str:
    """Map a source name, or a node driven by a grounded source, to the source."""
    if name in circuit:
        if isinstance(circuit.element(name), VSource):
            return name
        raise KeyError(f"{name!r} is not a voltage source")
    for e in circuit.of_type(VSource):
        if e.a == name and e.b == GROUND:
            return e.name
    raise KeyError(f"no source or grounded-source node named {name!r}")


def _resolved_values(circuit: Circuit, assignments: Mapping[str, SourceValue]) -> dict[str, SourceValue]:
    values = {e.name: e.value for e in circuit.of_type(VSource)}
    for key, value in assignments.items():
        values[resolve_source(circuit, key)] = value
    return values


# ---------------------------------------------------------------------------
# compiled system
# ---------------------------------------------------------------------------


class _Block:
    """One independent group of unknowns with its own Newton loop."""

    def __init__(self, sys: "_System", unknowns: np.ndarray):
        self.unknowns = unknowns
        nu = len(unknowns)
        self.nu = nu
        nf = sys.n_fixed
        ncols = nu + nf + 1
        self.ncols = ncols
        local = {int(g): i for i, g in enumerate(unknowns)}

        def col(ref):
            kind, idx = ref
            if kind == "u":
                return local[idx]
            if kind == "f":
                return nu + idx
            return nu + nf

        self.is_voltage = np.array([sys.unknown_is_voltage[g] for g in unknowns], bool)
        self.all_voltage = bool(self.is_voltage.all())

        rows, cols, vals = [], [], []
        for r, c, v in sys.lin_stamps:
            if r in local:
                rows.append(local[r])
                cols.append(col(c))
                vals.append(v)
        lin = sp.coo_matrix((vals, (rows, cols)), shape=(nu, ncols)).tocsr()
        lin.sum_duplicates()
        self.lin = lin

        rows, cols, vals = [], [], []
        for r, c, v in sys.cap_stamps:
            if r in local:
                rows.append(local[r])
                cols.append(col(c))
                vals.append(v)
        self.cap = sp.coo_matrix((vals, (rows, cols)), shape=(nu, ncols)).tocsr()

        # branch equation rows: (local row, source index, sign)
        self.src_rows = np.array([local[r] for r, _ in sys.src_rows if r in local], int)
        self.src_index = np.array([s for r, s in sys.src_rows if r in local], int)

        self.shunt_always = np.array([sys.floating_shunt[g] for g in unknowns], bool)

        terms = [(local[r], col(a), col(b), g) for r, a, b, g in sys.kcl_terms if r in local]
        self.kcl_row = np.array([t[0] for t in terms], int)
        self.kcl_pos = np.array([t[1] for t in terms], int)
        self.kcl_neg = np.array([t[2] for t in terms], int)
        self.kcl_coef = np.array([t[3] for t in terms], float)

        dev = [k for k, t in enumerate(sys.dev_terms) if any(ref[0] == "u" and ref[1] in local for ref in t)]
        self.dev = np.array(dev, int)
        terms = [sys.dev_terms[k] for k in dev]
        self.dev_cols = np.array([[col(ref) for ref in t] for t in terms], int).reshape(-1, 3)
        p = sys.dev_params[dev] if len(dev) else np.zeros((0, 5))
        self.vt0, self.n, self.i0, self.lam, self.vth = (p[:, i] for i in range(5))

        # Jacobian scatter: rows d, s (when local), cols g, d, s (when local)
        d_c, g_c, s_c = self.dev_cols.T if len(dev) else (np.zeros(0, int),) * 3
        self.d_row = np.where(d_c < nu, d_c, -1)
        self.s_row = np.where(s_c < nu, s_c, -1)
        flat, src, sign = [], [], []
        for k in range(len(dev)):
            for row, sg in ((self.d_row[k], 1.0), (self.s_row[k], -1.0)):
                if row < 0:
                    continue
                for j, c in enumerate((g_c[k], d_c[k], s_c[k])):
                    if c < nu:
                        flat.append(row * nu + c)
                        src.append(3 * k + j)
                        sign.append(sg)
        self.j_flat = np.array(flat, int)
        self.j_src = np.array(src, int)
        self.j_sign = np.array(sign, float)
        self.dense = nu <= DENSE_MAX
        # device current -> KCL rows (+ at drain, - at source)
        inc = sp.coo_matrix(
            (
                np.concatenate([np.ones((self.d_row >= 0).sum()), -np.ones((self.s_row >= 0).sum())]),
                (
                    np.concatenate([self.d_row[self.d_row >= 0], self.s_row[self.s_row >= 0]]),
                    np.concatenate([np.flatnonzero(self.d_row >= 0), np.flatnonzero(self.s_row >= 0)]),
                ),
            ),
            shape=(nu, len(dev)),
        )
        self.incidence = inc.toarray() if self.dense else inc.tocsr()
        if self.dense:
            self.lin_u = self.lin[:, :nu].toarray()
        else:
            self.lin_u = self.lin[:, :nu].tocsc()
            jr, jc = np.divmod(self.j_flat, nu) if len(flat) else (np.zeros(0, int), np.zeros(0, int))
            self.j_rows, self.j_cols = jr, jc
        self.x_last: np.ndarray | None = None

    # -- evaluation ---------------------------------------------------------

    def devices(self, xe):
        cols = self.dev_cols
        vd, vg, vs = xe[cols[:, 0]], xe[cols[:, 1]], xe[cols[:, 2]]
        i, gm, gd, gs = evaluate_arrays(vg, vd, vs, self.vt0, self.n, self.i0, self.lam, self.vth)
        return i, gm, gd, gs

    def residual(self, x, ctx, shunt):
        xe = np.concatenate([x, ctx.fixed, [0.0]])
        f = self.lin @ xe
        if ctx.cap_scale:
            f += ctx.cap_scale * (self.cap @ (xe - ctx.xe_prev[self.key(ctx)]))
        f[self.src_rows] -= ctx.src_vals[self.src_index]
        f += shunt * x
        if len(self.dev):
            i, gm, gd, gs = self.devices(xe)
            f += self.incidence @ i
            derivs = np.stack([gm, gd, gs], axis=1).ravel()
        else:
            i = derivs = np.zeros(0)
        return f, xe, i, derivs

    def key(self, ctx):
        return id(self)

    def jacobian(self, derivs, ctx, shunt):
        nu = self.nu
        vals = derivs[self.j_src] * self.j_sign
        if self.dense:
            j = self.lin_u.copy()
            if ctx.cap_scale:
                j += ctx.cap_scale * ctx.cap_u[id(self)]
            j.ravel()[:] += np.bincount(self.j_flat, vals, minlength=nu * nu)
            j.ravel()[:: nu + 1] += shunt
            return j
        j = self.lin_u + sp.csc_matrix((vals, (self.j_rows, self.j_cols)), shape=(nu, nu))
        if ctx.cap_scale:
            j = j + ctx.cap_scale * ctx.cap_u[id(self)]
        return (j + sp.diags(shunt)).tocsc()

    def solve_linear(self, j, rhs):
        try:
            if self.dense:
                lu, piv, x, info = _dgesv(j, rhs, overwrite_a=1, overwrite_b=0)
                if info != 0:
                    raise np.linalg.LinAlgError(f"singular Jacobian (info={info})")
                return x
            return spla.spsolve(j, rhs)
        except (np.linalg.LinAlgError, RuntimeError, ValueError) as exc:
            raise SingularCircuitError(str(exc)) from None

    def incident_scale(self, xe, i_dev):
        """Largest single current entering each row (proxy for KCL scale)."""
        scale = np.zeros(self.nu)
        terms = np.abs(self.kcl_coef * (xe[self.kcl_pos] - xe[self.kcl_neg]))
        np.maximum.at(scale, self.kcl_row, terms)
        if len(self.dev):
            a = np.abs(i_dev)
            m = self.d_row >= 0
            np.maximum.at(scale, self.d_row[m], a[m])
            m = self.s_row >= 0
            np.maximum.at(scale, self.s_row[m], a[m])
        return scale


@dataclass
class _Context:
    """Per-solve numeric state shared by the blocks."""

    fixed: np.ndarray
    src_vals: np.ndarray
    cap_scale: float = 0.0
    xe_prev: dict = field(default_factory=dict)
    cap_u: dict = field(default_factory=dict)


class _System:
    """Index structure for a circuit; numeric values are supplied per solve."""

    def __init__(self, circuit: Circuit, options: SolveOptions, with_caps: bool = False):
        self.circuit = circuit
        self.options = options
        self.with_caps = with_caps
        self.node_names = circuit.nodes
        node_idx = {n: i for i, n in enumerate(self.node_names)}
        self.node_idx = node_idx
        self.sources = circuit.of_type(VSource)
        self.source_names = [s.name for s in self.sources]
        src_pos = {s.name: k for k, s in enumerate(self.sources)}

        # -- pin nodes driven by sources / VCVS with pinned inputs ----------
        fixed_by: dict[str, tuple] = {}
        pinned = {GROUND}
        order: list[tuple] = []
        changed = True
        while changed:
            changed = False
            for e in circuit.elements:
                if e.name in fixed_by:
                    continue
                if isinstance(e, VSource):
                    for node, ref in ((e.a, e.b), (e.b, e.a)):
                        if ref in pinned and node not in pinned:
                            pinned.add(node)
                            fixed_by[e.name] = (node, ref)
                            order.append(e)
                            changed = True
                            break
                elif isinstance(e, VCVS) and e.ctrl_p in pinned and e.ctrl_n in pinned:
                    for node, ref in ((e.out_p, e.out_n), (e.out_n, e.out_p)):
                        if ref in pinned and node not in pinned:
                            pinned.add(node)
                            fixed_by[e.name] = (node, ref)
                            order.append(e)
                            changed = True
                            break
        self.fix_order = order
        self.fixed_by = fixed_by
        fixed_nodes = [fixed_by[e.name][0] for e in order]
        self.fixed_nodes = fixed_nodes
        self.fixed_pos = {n: i for i, n in enumerate(fixed_nodes)}
        self.n_fixed = len(fixed_nodes)
        self._fix_plan = [
            (
                self.fixed_pos[fixed_by[e.name][0]],
                self._ref(fixed_by[e.name][1]),
                e,
                src_pos.get(e.name, -1),
            )
            for e in order
        ]

        # -- unknowns -------------------------------------------------------
        unknown_index: dict[str, int] = {}
        is_voltage: list[bool] = []
        unknown_label: list[str] = []

        def unknown(label: str, voltage: bool) -> int:
            unknown_index[label] = len(is_voltage)
            is_voltage.append(voltage)
            unknown_label.append(label)
            return unknown_index[label]

        def ref(node: str):
            if node == GROUND:
                return ("g", 0)
            if node in self.fixed_pos:
                return ("f", self.fixed_pos[node])
            if node not in unknown_index:
                unknown(node, True)
            return ("u", unknown_index[node])

        lin: list[tuple] = []
        caps: list[tuple] = []
        src_rows: list[tuple] = []
        dev_terms: list[tuple] = []
        dev_params: list[tuple] = []
        self.dev_elements: list[Transistor] = []
        self.dev_rs: list[tuple] = []
        conductive: set[int] = set()
        self.branch_of: dict[str, int] = {}
        self.lin_two_terminal: list[tuple] = []  # (name, ref_a, ref_b, g) for post-processing
        self.cap_elements: list[tuple] = []

        kcl_terms: list[tuple] = []  # (row, ref+, ref-, coef): one element current per row

        def conductance(ra, rb, g):
            for r1, r2 in ((ra, rb), (rb, ra)):
                if r1[0] == "u":
                    lin.append((r1[1], r1, g))
                    lin.append((r1[1], r2, -g))
                    kcl_terms.append((r1[1], r1, r2, g))
                    conductive.add(r1[1])

        for e in circuit.elements:
            if isinstance(e, Resistor):
                ra, rb = ref(e.a), ref(e.b)
                conductance(ra, rb, 1.0 / e.value)
                self.lin_two_terminal.append((e.name, ra, rb, 1.0 / e.value))
            elif isinstance(e, Capacitor):
                ra, rb = ref(e.a), ref(e.b)
                self.cap_elements.append((e.name, ra, rb, e.value))
                if with_caps:
                    for r1, r2 in ((ra, rb), (rb, ra)):
                        if r1[0] == "u":
                            caps.append((r1[1], r1, e.value))
                            caps.append((r1[1], r2, -e.value))
            elif isinstance(e, (VSource, VCVS)):
                terms = [ref(t) for t in e.terminals]
                if e.name in fixed_by:
                    continue
                b = unknown("I(" + e.name + ")", False)
                self.branch_of[e.name] = b
                bref = ("u", b)
                rp, rn = terms[0], terms[1]
                if rp[0] == "u":
                    lin.append((rp[1], bref, 1.0))
                    kcl_terms.append((rp[1], bref, ("g", 0), 1.0))
                if rn[0] == "u":
                    lin.append((rn[1], bref, -1.0))
                    kcl_terms.append((rn[1], bref, ("g", 0), -1.0))
                lin.append((b, rp, 1.0))
                lin.append((b, rn, -1.0))
                if isinstance(e, VCVS):
                    lin.append((b, terms[2], -e.gain))
                    lin.append((b, terms[3], e.gain))
                else:
                    src_rows.append((b, src_pos[e.name]))
            elif isinstance(e, Transistor):
                rd, rg, rs_ = ref(e.d), ref(e.g), ref(e.s)
                p = e.params
                if p.r_s > 0:
                    di = ("u", unknown(e.name + "#d", True))
                    si = ("u", unknown(e.name + "#s", True))
                    g_half = 2.0 / p.r_s
                    conductance(rd, di, g_half)
                    conductance(si, rs_, g_half)
                    self.dev_rs.append((len(self.dev_elements), rd, di, si, rs_, g_half))
                else:
                    di, si = rd, rs_
                conductance(di, si, options.gmin)
                dev_terms.append((di, rg, si))
                dev_params.append((p.vt0, p.n, p.specific_current, p.lam, p.v_th))
                self.dev_elements.append(e)
            else:  # pragma: no cover - exhaustive over Element
                raise TypeError(f"unsupported element {e!r}")

        # loops of pinned sources: both ends pinned by other elements
        for e in circuit.elements:
            if isinstance(e, VSource) and e.name not in fixed_by and e.name not in self.branch_of:
                raise SingularCircuitError(f"voltage source {e.name} closes a loop of pinned sources")

        self.n_unknowns = len(is_voltage)
        self.unknown_is_voltage = is_voltage
        self.unknown_label = unknown_label
        self.unknown_index = unknown_index
        self.lin_stamps = lin
        self.kcl_terms = kcl_terms
        self.cap_stamps = caps
        self.src_rows = src_rows
        self.dev_terms = dev_terms
        self.dev_params = np.array(dev_params, float).reshape(-1, 5)
        self.floating_shunt = [v and (k not in conductive) for k, v in enumerate(is_voltage)]
        self._ref_fn = ref

        # -- independent blocks -------------------------------------------
        n = self.n_unknowns
        er, ec = [], []
        for r, c, _ in lin + caps:
            if c[0] == "u":
                er.append(r)
                ec.append(c[1])
        for t in dev_terms:
            us = [x[1] for x in t if x[0] == "u"]
            for a in us:
                for b in us:
                    er.append(a)
                    ec.append(b)
        graph = sp.coo_matrix((np.ones(len(er)), (er, ec)), shape=(n, n))
        if n:
            ncomp, labels = connected_components(graph, directed=False)
        else:
            ncomp, labels = 0, np.zeros(0, int)
        self.blocks = [_Block(self, np.flatnonzero(labels == k)) for k in range(ncomp)]
        self._fixed_map = None
        self._build_post()

    def _gidx(self, ref) -> int:
        kind, idx = ref
        if kind == "u":
            return idx
        if kind == "f":
            return self.n_unknowns + idx
        return self.n_unknowns + self.n_fixed

    def _slot(self, ref) -> int:
        # node slot in the "leaving current" accumulator; internal nodes and
        # ground share the trailing dump slot
        kind, idx = ref
        dump = len(self.node_names)
        if kind == "u":
            return self.node_idx.get(self.unknown_label[idx], dump)
        if kind == "f":
            return self.node_idx[self.fixed_nodes[idx]]
        return dump

    def _build_post(self):
        """Index arrays for vectorized current recovery after a solve."""
        ref = self._ref_fn
        arr = lambda xs: np.array(xs, int)  # noqa: E731
        lt = self.lin_two_terminal
        self.p_res = (arr([self._gidx(a) for _, a, _, _ in lt]), arr([self._gidx(b) for _, _, b, _ in lt]),
                      np.array([g for *_, g in lt], float),
                      arr([self._slot(a) for _, a, _, _ in lt]), arr([self._slot(b) for _, _, b, _ in lt]))
        ce = self.cap_elements
        self.cap_names = [n for n, *_ in ce]
        self.p_cap = (arr([self._gidx(a) for _, a, _, _ in ce]), arr([self._gidx(b) for _, _, b, _ in ce]),
                      np.array([c for *_, c in ce], float),
                      arr([self._slot(a) for _, a, _, _ in ce]), arr([self._slot(b) for _, _, b, _ in ce]))
        dt = self.dev_terms
        self.p_dev = arr([[self._gidx(r) for r in t] for t in dt]).reshape(-1, 3)
        self.p_dev_slots = arr([[self._slot(ref(e.d)), self._slot(ref(e.s))] for e in self.dev_elements]).reshape(-1, 2)
        self.dev_names = [e.name for e in self.dev_elements]
        fl = [k for k, f in enumerate(self.floating_shunt) if f]
        self.p_float = (arr(fl), arr([self._slot(("u", k)) for k in fl]))

        self.out_names = [*self.source_names, *[e.name for e in self.circuit.of_type(VCVS)]]
        out_pos = {n: i for i, n in enumerate(self.out_names)}
        br = list(self.branch_of.items())
        self.p_branch = (arr([b for _, b in br]), arr([out_pos[n] for n, _ in br]),
                         arr([self._slot(ref(self.circuit.element(n).terminals[0])) for n, _ in br]),
                         arr([self._slot(ref(self.circuit.element(n).terminals[1])) for n, _ in br]))
        fix = []
        for e in reversed(self.fix_order):
            node, rnode = self.fixed_by[e.name]
            fix.append((self.node_idx[node], self._slot(ref(rnode)), out_pos[e.name],
                        1.0 if node == e.terminals[0] else -1.0))
        self.p_fix = fix
        self.p_node_g = arr([self._gidx(ref(n)) for n in self.node_names])
        nslot = len(self.node_names) + 1

        def incidence(sa, sb):
            m = len(sa)
            return sp.csr_matrix(
                (np.r_[np.ones(m), -np.ones(m)], (np.r_[sa, sb], np.r_[np.arange(m), np.arange(m)])),
                shape=(nslot, m),
            )

        self.m_res = incidence(self.p_res[3], self.p_res[4])
        self.m_cap = incidence(self.p_cap[3], self.p_cap[4])
        self.m_dev = incidence(self.p_dev_slots[:, 0], self.p_dev_slots[:, 1])
        self.m_float = incidence(self.p_float[1], np.full(len(self.p_float[1]), nslot - 1))
        self.m_branch = incidence(self.p_branch[2], self.p_branch[3])
        self.p_volt = np.array(self.unknown_is_voltage, bool)

    def recover(self, x, fixed, gmin, cap_prev=None, cap_scale=0.0):
        """Node voltages, delivered source currents, device and capacitor currents."""
        gv = np.concatenate([x, fixed, [0.0]])
        ia, ib, g, _, _ = self.p_res
        leaving = self.m_res @ (g * (gv[ia] - gv[ib]))
        ia, ib, c, _, _ = self.p_cap
        if cap_prev is not None and len(c):
            i_cap = cap_scale * c * ((gv[ia] - gv[ib]) - (cap_prev[ia] - cap_prev[ib]))
            leaving += self.m_cap @ i_cap
        else:
            i_cap = np.zeros(len(c))
        if len(self.p_dev):
            d, gt, s = self.p_dev.T
            p = self.dev_params
            i_dev = evaluate_arrays(gv[gt], gv[d], gv[s], p[:, 0], p[:, 1], p[:, 2], p[:, 3], p[:, 4])[0]
            i_dev = i_dev + gmin * (gv[d] - gv[s])
            leaving += self.m_dev @ i_dev
        else:
            i_dev = np.zeros(0)
        if len(self.p_float[0]):
            leaving += self.m_float @ (gmin * gv[self.p_float[0]])
        out = np.zeros(len(self.out_names))
        b, pos, _, _ = self.p_branch
        if len(b):
            leaving += self.m_branch @ gv[b]
            out[pos] = -gv[b]
        dump = len(self.node_names)
        for nf, rslot, o, sign in self.p_fix:
            l_f = leaving[nf]
            out[o] = sign * l_f
            if rslot != dump:
                leaving[rslot] += l_f
            leaving[nf] = 0.0
        return gv[self.p_node_g], out, i_dev, i_cap

    def _ref(self, node):
        if node == GROUND:
            return -1
        return self.fixed_pos[node]

    # -- numeric helpers ----------------------------------------------------

    def source_vector(self, values: Mapping[str, SourceValue], t: float, scale: float = 1.0) -> np.ndarray:
        return np.array([scale * source_value(values[s.name], t) for s in self.sources], float)

    def fixed_vector(self, src_vals: np.ndarray) -> np.ndarray:
        # pinned voltages are linear in the source values
        if self._fixed_map is None:
            eye = np.eye(len(self.sources))
            cols = [self._fixed_walk(eye[k]) for k in range(len(self.sources))]
            self._fixed_map = np.array(cols).T.reshape(self.n_fixed, len(self.sources))
        return self._fixed_map @ src_vals

    def _fixed_walk(self, src_vals: np.ndarray) -> np.ndarray:
        v = np.zeros(self.n_fixed)
        for pos, ref, e, k in self._fix_plan:
            base = 0.0 if ref < 0 else v[ref]
            if isinstance(e, VSource):
                a_fixed = self.fixed_by[e.name][0] == e.a
                v[pos] = base + src_vals[k] if a_fixed else base - src_vals[k]
            else:
                ctrl = self._node_value(e.ctrl_p, v) - self._node_value(e.ctrl_n, v)
                drive = e.gain * ctrl
                v[pos] = base + drive if self.fixed_by[e.name][0] == e.out_p else base - drive
        return v

    def _node_value(self, node, v):
        return 0.0 if node == GROUND else v[self.fixed_pos[node]]


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------


@dataclass
class OperatingPoint:
    """Converged DC (or transient-step) solution."""

    node_names: tuple[str, ...]
    voltages: np.ndarray
    source_currents: dict[str, float]
    transistor_currents: dict[str, float]
    capacitor_currents: dict[str, float]
    kcl_residual: np.ndarray
    kcl_scale: np.ndarray
    iterations: int
    converged: bool = True

    def v(self, node: str) -> float:
        if node == GROUND:
            return 0.0
        return float(self.voltages[self.node_names.index(node)])

    @property
    def node_voltages(self) -> dict[str, float]:
        return dict(zip(self.node_names, self.voltages.tolist()))

    def residual_ok(self, options: SolveOptions) -> bool:
        bound = options.abstol_current + options.reltol * self.kcl_scale
        return bool(np.all(np.abs(self.kcl_residual) <= bound))


@dataclass
class SweepPoint:
    value: float
    node_voltages: np.ndarray
    currents: dict[str, float]
    newton_iterations: int
    converged: bool
    error: str | None = None


@dataclass
class SweepResult:
    target: tuple[str, ...]
    node_names: tuple[str, ...]
    points: list[SweepPoint]

    @property
    def values(self) -> np.ndarray:
        return np.array([p.value for p in self.points])

    def current(self, label: str) -> np.ndarray:
        return np.array([p.currents.get(label, np.nan) for p in self.points])

    def voltage(self, node: str) -> np.ndarray:
        k = self.node_names.index(node)
        return np.array([p.node_voltages[k] for p in self.points])

    @property
    def converged(self) -> np.ndarray:
        return np.array([p.converged for p in self.points])


@dataclass
class TransientResult:
    times: np.ndarray
    node_names: tuple[str, ...]
    voltages: np.ndarray  # (n_times, n_nodes)
    source_currents: dict[str, np.ndarray]
    iterations: np.ndarray

    def voltage(self, node: str) -> np.ndarray:
        if node == GROUND:
            return np.zeros(len(self.times))
        return self.voltages[:, self.node_names.index(node)]


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------


class Engine:
    """Reusable solver workspace bound to one circuit topology."""

    def __init__(self, circuit: Circuit, options: SolveOptions | None = None, with_caps: bool = False):
        self.options = options or SolveOptions()
        self.sys = _System(circuit, self.options, with_caps=with_caps)
        self._shunts: dict = {}

    # -- newton ---------------------------------------------------------

    def _shunt(self, blk: _Block, gshunt: float) -> np.ndarray:
        key = (id(blk), gshunt)
        cached = self._shunts.get(key)
        if cached is None:
            shunt = np.where(blk.is_voltage, gshunt, 0.0)
            cached = np.where(blk.shunt_always, np.maximum(shunt, self.options.gmin), shunt)
            self._shunts[key] = cached
        return cached

    def _newton(self, blk: _Block, x0, ctx, gshunt, max_iter=None):
        opt = self.options
        max_iter = max_iter or opt.max_newton_iters
        shunt = self._shunt(blk, gshunt)
        x = x0.copy()
        volt = blk.is_voltage
        all_volt = blk.all_voltage
        src_abs = np.zeros(blk.nu)
        if len(blk.src_rows):
            src_abs[blk.src_rows] = np.abs(ctx.src_vals[blk.src_index])
        damping = opt.damping
        res = math.inf
        stall, prev_kcl, best_kcl, best_x = 0, math.inf, math.inf, x
        for it in range(1, max_iter + 1):
            f, xe, i_dev, derivs = blk.residual(x, ctx, shunt)
            j = blk.jacobian(derivs, ctx, shunt)
            dx = blk.solve_linear(j, -f)
            res = float(np.abs(f).max(initial=0.0))
            if not (math.isfinite(res) and np.isfinite(dx).all()):
                return x, False, it, math.inf
            dv = dx if all_volt else dx[volt]
            peak = float(np.abs(dv).max(initial=0.0))
            if peak > damping:
                # clamp voltage updates only; branch currents move freely
                step = np.clip(dx, -damping, damping) if all_volt else np.where(volt, np.clip(dx, -damping, damping), dx)
                x = x + step
                continue
            x_new = x + dx
            xv = x_new if all_volt else x_new[volt]
            if (np.abs(dv) <= opt.vntol + opt.reltol * np.abs(xv)).all():
                scale = blk.incident_scale(xe, i_dev)
                if all_volt:
                    ok = (np.abs(f) <= opt.abstol_current + opt.reltol * scale).all()
                else:
                    ok = (np.abs(f[volt]) <= opt.abstol_current + opt.reltol * scale[volt]).all() and (
                        np.abs(f[~volt]) <= opt.vntol + opt.reltol * src_abs[~volt]
                    ).all()
                if ok:
                    return x_new, True, it, res
            # KCL already holds but rounding noise keeps the update from shrinking
            # (nodes held only by tiny conductances): accept once progress stalls
            f_kcl = float(np.abs(f if all_volt else f[volt]).max(initial=0.0))
            branch_ok = all_volt or (np.abs(f[~volt]) <= opt.vntol + opt.reltol * src_abs[~volt]).all()
            if f_kcl <= opt.abstol_current and branch_ok and f_kcl <= _NOISE * _stamp_magnitude(j, x):
                stall = stall + 1 if f_kcl >= 0.5 * prev_kcl else 0
                if f_kcl < best_kcl:
                    best_kcl, best_x = f_kcl, x
                if stall >= 3:
                    return best_x, True, it, res
            else:
                stall = 0
            prev_kcl = f_kcl
            x = x_new
        return x, False, max_iter, res

    def _initial_guess(self, blk: _Block, ctx):
        # transistors replaced by a fixed channel conductance
        x = np.zeros(blk.nu)
        shunt = np.where(blk.is_voltage, 1e-9, 0.0)
        f, xe, _, derivs = blk.residual(x, ctx, shunt)
        derivs = np.zeros_like(derivs)
        if len(blk.dev):
            derivs.reshape(-1, 3)[:, 1] = 1e-4
            derivs.reshape(-1, 3)[:, 2] = -1e-4
            # residual of the replaced devices at x = 0
            cols = blk.dev_cols
            g_lin = 1e-4 * (xe[cols[:, 0]] - xe[cols[:, 2]])
            i_true = blk.devices(xe)[0]
            corr = g_lin - i_true
            md, ms = blk.d_row >= 0, blk.s_row >= 0
            np.add.at(f, blk.d_row[md], corr[md])
            np.add.at(f, blk.s_row[ms], -corr[ms])
        j = blk.jacobian(derivs, ctx, shunt)
        try:
            return blk.solve_linear(j, -f)
        except SingularCircuitError:
            return x

    def _solve_block(self, blk: _Block, ctx, x0=None):
        opt = self.options
        total = 0
        start = x0 if x0 is not None else self._initial_guess(blk, ctx)
        x, ok, it, res = self._newton(blk, start, ctx, 0.0)
        total += it
        if ok:
            return x, total
        log.debug("block of %d unknowns: direct Newton failed, gmin stepping", blk.nu)
        x = start
        ladder = 10.0 ** np.arange(round(math.log10(opt.gmin_ladder_top)), round(math.log10(opt.gmin)) - 1, -1)
        ok_ladder = True
        for g in ladder:
            x, ok, it, res = self._newton(blk, x, ctx, g)
            total += it
            if not ok:
                ok_ladder = False
                break
        if ok_ladder:
            x, ok, it, res = self._newton(blk, x, ctx, 0.0)
            total += it
            if ok:
                return x, total
        log.debug("gmin stepping failed, source stepping")
        fixed, src = ctx.fixed, ctx.src_vals
        x = np.zeros(blk.nu)
        for alpha in np.linspace(1.0 / opt.source_steps, 1.0, opt.source_steps):
            ctx.fixed, ctx.src_vals = alpha * fixed, alpha * src
            x, ok, it, res = self._newton(blk, x, ctx, opt.gmin)
            total += it
            if not ok:
                break
        ctx.fixed, ctx.src_vals = fixed, src
        if ok:
            x, ok, it, res = self._newton(blk, x, ctx, 0.0)
            total += it
        if ok:
            return x, total
        last = {self.sys.unknown_label[g]: float(v) for g, v in zip(blk.unknowns, x)}
        raise ConvergenceError(
            f"no convergence for a block of {blk.nu} unknowns after gmin and source stepping",
            last_iterate=last,
            residual_norm=res,
        )

    def _solve(self, ctx, warm: np.ndarray | None):
        sys = self.sys
        x = np.zeros(sys.n_unknowns)
        iterations = 0
        for blk in sys.blocks:
            x0 = None if warm is None else warm[blk.unknowns]
            xb, it = self._solve_block(blk, ctx, x0)
            x[blk.unknowns] = xb
            iterations = max(iterations, it)
        return x, iterations

    # -- post-processing ----------------------------------------------------

    def _assemble(self, x, ctx, iterations, cap_prev=None, check=True) -> OperatingPoint:
        sys = self.sys
        v_nodes, out, i_dev, i_cap = sys.recover(x, ctx.fixed, self.options.gmin, cap_prev, ctx.cap_scale)
        residual = np.zeros(sys.n_unknowns)
        scale = np.zeros(sys.n_unknowns)
        if check:
            for blk in sys.blocks:
                shunt = np.where(blk.shunt_always, self.options.gmin, 0.0)
                f, xe, i_d, _ = blk.residual(x[blk.unknowns], ctx, shunt)
                residual[blk.unknowns] = f
                scale[blk.unknowns] = blk.incident_scale(xe, i_d)
        return OperatingPoint(
            node_names=sys.node_names,
            voltages=v_nodes,
            source_currents=dict(zip(sys.out_names, out.tolist())),
            transistor_currents=dict(zip(sys.dev_names, i_dev.tolist())),
            capacitor_currents=dict(zip(sys.cap_names, i_cap.tolist())),
            kcl_residual=residual[sys.p_volt],
            kcl_scale=scale[sys.p_volt],
            iterations=iterations,
        )

    # -- public analyses -------------------------------------------------

    def context(self, values: Mapping[str, SourceValue], t: float = 0.0) -> _Context:
        src = self.sys.source_vector(values, t)
        return _Context(fixed=self.sys.fixed_vector(src), src_vals=src)

    def operating_point(self, values, warm=None, t=0.0):
        ctx = self.context(values, t)
        x, it = self._solve(ctx, warm)
        return x, ctx, it

    def sweep(self, base, targets, grid, probes: Sequence[str], warm: Sequence | None = None):
        """Low-level warm-started sweep returning raw arrays.

        Returns ``(currents, iterates, iterations, ok)`` where ``currents``
        has one column per probed source.  ``warm`` optionally gives an
        initial iterate per point (e.g. from a previous sweep of a nearby
        circuit); otherwise each point starts from the previous one.
        """
        sys = self.sys
        base = _resolved_values(sys.circuit, base)
        targets = [resolve_source(sys.circuit, t) for t in targets]
        cols = [sys.out_names.index(resolve_source(sys.circuit, p)) for p in probes]
        currents = np.full((len(grid), len(cols)), np.nan)
        iterates: list = []
        iterations = np.zeros(len(grid), int)
        ok = np.zeros(len(grid), bool)
        prev = None
        for k, value in enumerate(grid):
            vals = dict(base)
            for t in targets:
                vals[t] = float(value)
            start = warm[k] if warm is not None and warm[k] is not None else prev
            try:
                x, ctx, it = self.operating_point(vals, start)
            except (ConvergenceError, SingularCircuitError) as exc:
                log.warning("sweep point %g did not converge: %s", value, exc)
                iterates.append(None)
                prev = None
                continue
            prev = x
            iterates.append(x)
            _, out, _, _ = sys.recover(x, ctx.fixed, self.options.gmin)
            currents[k] = out[cols]
            iterations[k] = it
            ok[k] = True
        return currents, iterates, iterations, ok


def dc_solve(circuit: Circuit, plan: BiasPlan | None = None, options: SolveOptions | None = None) -> OperatingPoint:
    """Nonlinear DC operating point; capacitors are open."""
    plan = plan or BiasPlan()
    engine = Engine(circuit, options)
    values = _resolved_values(circuit, plan.sources)
    x, ctx, it = engine.operating_point(values)
    return engine._assemble(x, ctx, it)


def _sweep_chunk(engine, base, targets, values, probes, keep_voltages):
    points = []
    warm = None
    labels = list(probes)
    for value in values:
        vals = dict(base)
        for t in targets:
            vals[t] = float(value)
        try:
            x, ctx, it = engine.operating_point(vals, warm)
        except (ConvergenceError, SingularCircuitError) as exc:
            log.warning("sweep point %g did not converge: %s", value, exc)
            nan_v = np.full(len(engine.sys.node_names) if keep_voltages else 0, np.nan)
            points.append(SweepPoint(float(value), nan_v, {}, 0, False, str(exc)))
            warm = None
            continue
        warm = x
        v_nodes, out, _, _ = engine.sys.recover(x, ctx.fixed, engine.options.gmin)
        currents = {label: float(out[engine.sys.out_names.index(probes[label])]) for label in labels}
        points.append(SweepPoint(float(value), v_nodes if keep_voltages else np.zeros(0), currents, it, True))
    return points


def dc_sweep(
    circuit: Circuit,
    plan: BiasPlan,
    options: SolveOptions | None = None,
    probes: Mapping[str, str] | None = None,
    workers: int = 1,
    keep_voltages: bool = True,
) -> SweepResult:
    """One DC solve per sweep value, warm-started from the previous point.

    ``probes`` maps result labels to source names (or grounded-source
    nodes); each point records the current those sources deliver into the
    circuit at their positive terminal.  With ``workers > 1`` the grid is
    cut into contiguous chunks solved on separate workspaces; points come
    back in bias order either way.
    """
    if plan.sweep is None:
        raise DomainError("bias plan has no sweep")
    base = _resolved_values(circuit, plan.sources)
    targets = tuple(resolve_source(circuit, t) for t in plan.sweep.targets)
    if probes is None:
        probes = {s.name: s.name for s in circuit.of_type(VSource)}
    else:
        probes = {label: resolve_source(circuit, src) for label, src in probes.items()}
    grid = plan.sweep.values()
    if workers <= 1 or len(grid) < 2 * workers:
        engine = Engine(circuit, options)
        points = _sweep_chunk(engine, base, targets, grid, probes, keep_voltages)
    else:
        chunks = np.array_split(grid, workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_sweep_chunk, Engine(circuit, options), base, targets, chunk, probes, keep_voltages)
                for chunk in chunks
            ]
            points = [p for fut in futures for p in fut.result()]
    return SweepResult(targets, circuit.nodes, points)


def transient_solve(
    circuit: Circuit,
    plan: BiasPlan | None,
    t_end: float,
    dt: float,
    options: SolveOptions | None = None,
) -> TransientResult:
    """Fixed-step backward-Euler transient from the DC point at t = 0."""
    if not dt > 0 or not t_end > 0:
        raise DomainError("dt and t_end must be positive")
    plan = plan or BiasPlan()
    options = options or SolveOptions()
    values = _resolved_values(circuit, plan.sources)

    tr = Engine(circuit, options, with_caps=True)
    sys = tr.sys
    # the DC system has the same unknowns; only the block partition differs
    dc = Engine(circuit, options)
    x, ctx0, it0 = dc.operating_point(values, t=0.0)
    op0 = dc._assemble(x, ctx0, it0)

    n_steps = int(math.ceil(t_end / dt - 1e-9))
    times = dt * np.arange(n_steps + 1)
    volts = np.zeros((n_steps + 1, len(sys.node_names)))
    volts[0] = op0.voltages
    src_i = {name: np.zeros(n_steps + 1) for name in sys.out_names}
    for name, i in op0.source_currents.items():
        src_i[name][0] = i
    iters = np.zeros(n_steps + 1, int)
    iters[0] = it0

    inv_dt = 1.0 / dt
    cap_u = {}
    for blk in sys.blocks:
        cu = blk.cap[:, : blk.nu]
        cap_u[id(blk)] = cu.toarray() if blk.dense else cu.tocsc()
    fixed_prev = ctx0.fixed
    for k in range(1, n_steps + 1):
        t = times[k]
        ctx = tr.context(values, t)
        ctx.cap_scale = inv_dt
        ctx.cap_u = cap_u
        gv_prev = np.concatenate([x, fixed_prev, [0.0]])
        for blk in sys.blocks:
            ctx.xe_prev[id(blk)] = np.concatenate([x[blk.unknowns], fixed_prev, [0.0]])
        try:
            x, it = tr._solve(ctx, x)
        except ConvergenceError as exc:
            raise ConvergenceError(
                f"transient step at t={t:.6e} s failed: {exc}", exc.last_iterate, exc.residual_norm, time=t
            ) from None
        v_nodes, out, _, _ = sys.recover(x, ctx.fixed, options.gmin, gv_prev, inv_dt)
        volts[k] = v_nodes
        for name, i in zip(sys.out_names, out):
            src_i[name][k] = i
        iters[k] = it
        fixed_prev = ctx.fixed
    return TransientResult(times, sys.node_names, volts, src_i, iters)


def ac_admittance(circuit: Circuit, terminals: Sequence[str], omega: float) -> np.ndarray:
    """Terminal admittance matrix of a linear circuit at angular frequency ``omega``.

    Entry ``[i, j]`` is the current flowing into the network at terminal
    ``i`` per volt of AC drive at terminal ``j`` with every other terminal
    held at AC ground.  Existing voltage sources are AC shorts.
    """
    if not omega > 0:
        raise DomainError("omega must be > 0")
    if any(isinstance(e, Transistor) for e in circuit):
        raise DomainError("ac_admittance needs a linear circuit (no transistors)")
    nodes = list(circuit.nodes)
    for t in terminals:
        if t not in nodes:
            raise DomainError(f"terminal {t!r} is not a circuit node")
    idx = {n: i for i, n in enumerate(nodes)}
    branches = [e for e in circuit if isinstance(e, (VSource, VCVS))]
    nn, nb, nt = len(nodes), len(branches), len(terminals)
    size = nn + nb + nt
    rows, cols, vals = [], [], []

    def stamp(r, c, v):
        if r is not None and c is not None:
            rows.append(r)
            cols.append(c)
            vals.append(v)

    def node(n):
        return None if n == GROUND else idx[n]

    for e in circuit:
        if isinstance(e, (Resistor, Capacitor)):
            y = 1.0 / e.value if isinstance(e, Resistor) else 1j * omega * e.value
            a, b = node(e.a), node(e.b)
            stamp(a, a, y)
            stamp(b, b, y)
            stamp(a, b, -y)
            stamp(b, a, -y)
    for k, e in enumerate(branches):
        br = nn + k
        p, n = node(e.terminals[0]), node(e.terminals[1])
        stamp(p, br, 1.0)
        stamp(n, br, -1.0)
        stamp(br, p, 1.0)
        stamp(br, n, -1.0)
        if isinstance(e, VCVS):
            stamp(br, node(e.ctrl_p), -e.gain)
            stamp(br, node(e.ctrl_n), e.gain)
    for k, t in enumerate(terminals):
        br = nn + nb + k
        stamp(idx[t], br, 1.0)
        stamp(br, idx[t], 1.0)
    mat = sp.csc_matrix((np.array(vals, complex), (rows, cols)), shape=(size, size))
    rhs = np.zeros((size, nt), complex)
    for j in range(nt):
        rhs[nn + nb + j, j] = 1.0
    try:
        lu = spla.splu(mat)
    except RuntimeError as exc:
        raise SingularCircuitError(f"AC system is singular: {exc}") from None
    sol = lu.solve(rhs)
    if not np.all(np.isfinite(sol)):
        raise SingularCircuitError("AC system is singular")
    # branch current flows + -> - inside the source; delivered current is its negative
    return -sol[nn + nb :, :]
