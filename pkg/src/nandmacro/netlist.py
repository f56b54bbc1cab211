"""Hierarchical SPICE-style netlist for built arrays, and its parser.

Layout of an emitted deck::

    * header comments
    .MODEL CELLMOD / BSLMOD / SSLMOD   behavioral transistor stubs
    .SUBCKT CELL D G S WL              state source, gain-1 VCVS, transistor
    .SUBCKT STRING BL SL BSL SSL WL.. G..
    .SUBCKT ARRAY WL.. BL.. SL BSL SSL string instances + coupling capacitors
    top-level sources, XARRAY instance
    .END

The parser reads this dialect only and flattens it back to the element
names and order produced by :func:`nandmacro.array.build_array`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from . import __version__
from .array import (
    ArraySpec,
    CellStateGrid,
    bl_node,
    build_array,
    channel_node,
    gate_node,
    state_node,
    state_source,
    wl_node,
)
from .circuit import GROUND, VCVS, Capacitor, Circuit, Ramp, Resistor, Transistor, VSource, round_sig
from .device import DeviceModelParams
from .errors import NetlistError, NetlistParseError

MODEL_KEYS = (("VT0", "vt0"), ("N", "n"), ("KP", "k"), ("LAMBDA", "lam"), ("RS", "r_s"),
              ("VTH", "v_th"), ("W", "w"), ("L", "l"))
MODEL_TYPE = "NBEHAV"


def fmt(x: float) -> str:
    """Six significant digits in scientific notation."""
    return f"{float(x):.5e}".replace("-0.00000e+00", "0.00000e+00")


def _value_text(value) -> str:
    if isinstance(value, Ramp):
        return f"PWL({fmt(value.t0)} {fmt(value.v0)} {fmt(value.t1)} {fmt(value.v1)})"
    return f"DC {fmt(value)}"


@dataclass(frozen=True)
class NetlistDocument:
    header: tuple[str, ...]
    models: tuple[str, ...]
    subcircuits: tuple[str, ...]
    top: tuple[str, ...]

    @property
    def text(self) -> str:
        lines = [*self.header, "", *self.models, "", *self.subcircuits, *self.top, ".END"]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.text)


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------


def _structure(circuit: Circuit):
    """Element skeleton with source values, states and capacitor values blanked."""
    out = []
    for e in circuit:
        if isinstance(e, VSource):
            out.append((type(e), e.name, e.a, e.b))
        elif isinstance(e, Capacitor):
            out.append((type(e), e.name, e.a, e.b))
        else:
            out.append(e)
    return out


def _check_array_shaped(circuit: Circuit, spec: ArraySpec, states: CellStateGrid) -> None:
    # compared at print precision so parsed circuits can be re-emitted
    expected = build_array(spec, states).rounded()
    if _structure(circuit.rounded()) != _structure(expected):
        raise NetlistError("circuit does not match build_array(spec, states); only built arrays can be emitted")
    for r, c, l in spec.cells():
        if round_sig(circuit.element(state_source(r, c, l)).value) != round_sig(states[r, c, l]):
            raise NetlistError(f"state source of cell ({r}, {c}, {l}) disagrees with the state grid")


def _model_card(name: str, p: DeviceModelParams) -> str:
    body = " ".join(f"{key}={fmt(getattr(p, attr))}" for key, attr in MODEL_KEYS)
    return f".MODEL {name} {MODEL_TYPE} ({body})"


def emit_netlist(circuit: Circuit, spec: ArraySpec, states: CellStateGrid | None = None) -> NetlistDocument:
    """Deterministic hierarchical netlist of an array built by ``build_array``.

    Source values and capacitor values are taken from ``circuit``, so a
    circuit whose sources were re-biased still emits faithfully.
    """
    states = states if states is not None else CellStateGrid(spec)
    _check_array_shaped(circuit, spec, states)
    n = spec.n_wl
    cc = spec.coupling
    header = (
        f"* nandmacro {__version__} array macro-model netlist",
        f"* array rows={spec.rows} cols={spec.cols} n_wl={n} neglect_cd={str(spec.neglect_cd).lower()}",
        f"* coupling c_v={fmt(cc.c_v)} c_h={fmt(cc.c_h)} c_s={fmt(cc.c_s)} c_d={fmt(cc.c_d)}",
        f"* transistors reference behavioral {MODEL_TYPE} model stubs; another simulator",
        "* substitutes its own compact model for CELLMOD, BSLMOD and SSLMOD",
        "* cell gate G = WL - DVT (gain-1 VCVS in series with the state source)",
    )
    models = (
        _model_card("CELLMOD", circuit.element("M_r0c0l0").params),
        _model_card("BSLMOD", circuit.element("MB_r0c0").params),
        _model_card("SSLMOD", circuit.element("MS_r0c0").params),
    )

    cell = (
        ".SUBCKT CELL D G S WL PARAMS: DVT=0",
        "VT T 0 DC {DVT}",
        f"E G 0 WL T {fmt(1.0)}",
        "M D G S CELLMOD",
        ".ENDS CELL",
        "",
    )
    wl_ports = " ".join(f"WL{l}" for l in range(n))
    g_ports = " ".join(f"G{l}" for l in range(n))
    dvt_params = " ".join(f"DVT{l}=0" for l in range(n))
    string = [f".SUBCKT STRING BL SL BSL SSL {wl_ports} {g_ports} PARAMS: {dvt_params}", "MB BL BSL N0 BSLMOD"]
    for l in range(n):
        string.append(f"XC{l} N{l} G{l} N{l + 1} WL{l} CELL PARAMS: DVT={{DVT{l}}}")
    string += [f"MS N{n} SSL SL SSLMOD", ".ENDS STRING", ""]

    strings = spec.strings()
    array_ports = " ".join([*(wl_node(l) for l in range(n)), *(bl_node(r, c) for r, c in strings), "SL", "BSL", "SSL"])
    array = [f".SUBCKT ARRAY {array_ports}"]
    for r, c in strings:
        wls = " ".join(wl_node(l) for l in range(n))
        gates = " ".join(gate_node(r, c, l) for l in range(n))
        dvts = " ".join(f"DVT{l}={fmt(circuit.element(state_source(r, c, l)).value)}" for l in range(n))
        array.append(f"XS_r{r}c{c} {bl_node(r, c)} SL BSL SSL {wls} {gates} STRING PARAMS: {dvts}")
    for e in circuit.of_type(Capacitor):
        array.append(f"{e.name} {e.a} {e.b} {fmt(e.value)}")
    array += [".ENDS ARRAY", ""]

    top = []
    for e in circuit.of_type(VSource):
        if e.name.startswith("VT_"):
            continue
        top.append(f"{e.name} {e.a} {e.b} {_value_text(e.value)}")
    top.append(f"XARRAY {array_ports} ARRAY")
    return NetlistDocument(header, models, (*cell, *string, *array), tuple(top))


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_PWL = re.compile(rf"^PWL\(\s*({_NUM})\s+({_NUM})\s+({_NUM})\s+({_NUM})\s*\)$", re.IGNORECASE)
_XS = re.compile(r"^XS_r(\d+)c(\d+)$")
_XC = re.compile(r"^XC(\d+)$")


def _num(token: str, lineno: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise NetlistParseError(f"bad number {token!r}", lineno) from None


def _params(tokens: list[str], lineno: int) -> dict[str, str]:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise NetlistParseError(f"expected KEY=VALUE, got {tok!r}", lineno)
        k, v = tok.split("=", 1)
        out[k.upper()] = v
    return out


@dataclass
class _Subckt:
    name: str
    ports: list[str]
    defaults: dict[str, str]
    cards: list[tuple[int, list[str]]]


def _lines(text: str):
    logical: list[tuple[int, str]] = []
    for lineno, raw in enumerate(text.split("\n"), 1):
        line = raw.rstrip("\r").strip()
        if not line or line.startswith("*"):
            continue
        if line.startswith("+"):
            if not logical:
                raise NetlistParseError("continuation line without a card", lineno)
            prev_no, prev = logical[-1]
            logical[-1] = (prev_no, prev + " " + line[1:].strip())
            continue
        logical.append((lineno, line))
    return logical


def _tokenize(line: str) -> list[str]:
    # keep PWL(...) and (model ...) groups as single tokens where needed
    line = re.sub(r"\(\s*", "(", line)
    line = re.sub(r"\s*\)", ")", line)
    out, depth, cur = [], 0, ""
    for ch in line:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch.isspace() and depth == 0:
            if cur:
                out.append(cur)
                cur = ""
        else:
            cur += ch
    if cur:
        out.append(cur)
    return out


def _parse_model(tokens: list[str], lineno: int) -> tuple[str, DeviceModelParams]:
    if len(tokens) < 3 or tokens[2].split("(")[0].upper() != MODEL_TYPE:
        raise NetlistParseError(f"unsupported .MODEL card (expected type {MODEL_TYPE})", lineno)
    rest = " ".join(tokens[2:])
    m = re.match(rf"^{MODEL_TYPE}\s*\((.*)\)$", rest, re.IGNORECASE)
    if not m:
        raise NetlistParseError("malformed .MODEL parameter list", lineno)
    values = _params(m.group(1).split(), lineno)
    kwargs = {}
    for key, attr in MODEL_KEYS:
        if key not in values:
            raise NetlistParseError(f".MODEL {tokens[1]} lacks {key}", lineno)
        kwargs[attr] = _num(values.pop(key), lineno)
    if values:
        raise NetlistParseError(f"unknown model parameters {sorted(values)}", lineno)
    try:
        return tokens[1], DeviceModelParams(**kwargs)
    except ValueError as exc:
        raise NetlistParseError(str(exc), lineno) from None


def _parse_structure(text: str):
    models: dict[str, DeviceModelParams] = {}
    subckts: dict[str, _Subckt] = {}
    top: list[tuple[int, list[str]]] = []
    current: _Subckt | None = None
    ended = False
    for lineno, line in _lines(text):
        if ended:
            raise NetlistParseError("content after .END", lineno)
        tokens = _tokenize(line)
        head = tokens[0].upper()
        if head == ".END":
            if current is not None:
                raise NetlistParseError(f".END inside subcircuit {current.name}", lineno)
            ended = True
        elif head == ".MODEL":
            name, params = _parse_model(tokens, lineno)
            models[name] = params
        elif head == ".SUBCKT":
            if current is not None:
                raise NetlistParseError("nested .SUBCKT definitions are not supported", lineno)
            if len(tokens) < 2:
                raise NetlistParseError(".SUBCKT without a name", lineno)
            upper = [t.upper() for t in tokens]
            if "PARAMS:" in upper:
                k = upper.index("PARAMS:")
                ports, defaults = tokens[2:k], _params(tokens[k + 1 :], lineno)
            else:
                ports, defaults = tokens[2:], {}
            current = _Subckt(tokens[1], ports, defaults, [])
        elif head == ".ENDS":
            if current is None:
                raise NetlistParseError(".ENDS without .SUBCKT", lineno)
            if len(tokens) > 1 and tokens[1] != current.name:
                raise NetlistParseError(f".ENDS {tokens[1]} closes {current.name}", lineno)
            subckts[current.name] = current
            current = None
        elif head.startswith("."):
            raise NetlistParseError(f"unknown control card {tokens[0]!r}", lineno)
        elif head[0] in "VEMCRX":
            (current.cards if current is not None else top).append((lineno, tokens))
        else:
            raise NetlistParseError(f"unknown card {tokens[0]!r}", lineno)
    if current is not None:
        raise NetlistParseError(f"subcircuit {current.name} is not closed by .ENDS")
    if not ended:
        raise NetlistParseError("missing .END card (truncated netlist?)")
    return models, subckts, top


class _Scope:
    """Naming context of one subcircuit instance during flattening."""

    def __init__(self, path: tuple[str, ...], nodes: dict[str, str], params: dict[str, str]):
        self.path = path
        self.nodes = nodes
        self.params = params

    def node(self, name: str, lineno: int) -> str:
        if name == GROUND:
            return GROUND
        if name in self.nodes:
            return self.nodes[name]
        return _canonical_node(self.path, name, lineno)

    def value(self, token: str, lineno: int) -> float:
        m = re.fullmatch(r"\{(\w+)\}", token)
        if m:
            key = m.group(1).upper()
            if key not in self.params:
                raise NetlistParseError(f"undefined parameter {key}", lineno)
            return self.value(self.params[key], lineno)
        return _num(token, lineno)


def _string_cell(path, lineno):
    """Decode ``(XARRAY, XS_r..c.., [XC..])`` instance paths."""
    if len(path) >= 2 and path[0] == "XARRAY":
        m = _XS.match(path[1])
        if m:
            rc = (int(m.group(1)), int(m.group(2)))
            if len(path) == 2:
                return rc, None
            if len(path) == 3:
                mc = _XC.match(path[2])
                if mc:
                    return rc, int(mc.group(1))
    raise NetlistParseError(f"instance hierarchy {'.'.join(path)} is outside the array dialect", lineno)


def _canonical_node(path, name, lineno):
    if not path:
        return name
    if path == ("XARRAY",):
        # cell gates are the only nodes local to ARRAY; they keep global names
        if re.fullmatch(r"G_r\d+c\d+l\d+", name):
            return name
        raise NetlistParseError(f"unexpected node {name!r} inside ARRAY", lineno)
    (r, c), layer = _string_cell(path, lineno)
    if layer is None:
        m = re.fullmatch(r"N(\d+)", name)
        if m:
            return channel_node(r, c, int(m.group(1)))
    elif name == "T":
        return state_node(r, c, layer)
    raise NetlistParseError(f"unexpected internal node {name!r}", lineno)


def _canonical_element(path, name, lineno):
    if not path or path == ("XARRAY",):
        return name
    (r, c), layer = _string_cell(path, lineno)
    if layer is None and name in ("MB", "MS"):
        return f"{name}_r{r}c{c}"
    if layer is not None and name in ("VT", "E", "M"):
        return f"{name}_r{r}c{c}l{layer}"
    raise NetlistParseError(f"unexpected element {name!r} in {'.'.join(path)}", lineno)


def _source_value(tokens: list[str], scope: _Scope, lineno: int):
    if len(tokens) == 2 and tokens[0].upper() == "DC":
        return scope.value(tokens[1], lineno) + 0.0
    if len(tokens) == 1:
        m = _PWL.match(tokens[0])
        if m:
            t0, v0, t1, v1 = (float(g) for g in m.groups())
            return Ramp(t0, t1, v0, v1)
        return scope.value(tokens[0], lineno) + 0.0
    raise NetlistParseError("voltage source value must be 'DC <v>' or 'PWL(t0 v0 t1 v1)'", lineno)


def parse_netlist(text: str) -> Circuit:
    """Flatten a netlist written by :func:`emit_netlist` into a ``Circuit``."""
    models, subckts, top = _parse_structure(text)
    elements: list = []

    def instantiate(cards, scope: _Scope, depth=0):
        if depth > 8:
            raise NetlistParseError("subcircuit recursion too deep")
        pending_state: str | None = None
        for lineno, tokens in cards:
            kind = tokens[0][0].upper()
            name = tokens[0] if kind == "X" else _canonical_element(scope.path, tokens[0], lineno)
            args = tokens[1:]
            try:
                if kind == "V":
                    if len(args) < 3:
                        raise NetlistParseError("V card needs two nodes and a value", lineno)
                    a, b = scope.node(args[0], lineno), scope.node(args[1], lineno)
                    elements.append(VSource(name, a, b, _source_value(args[2:], scope, lineno)))
                    pending_state = name
                elif kind == "E":
                    if len(args) != 5:
                        raise NetlistParseError("E card needs four nodes and a gain", lineno)
                    nodes = [scope.node(t, lineno) for t in args[:4]]
                    elements.append(VCVS(name, *nodes, scope.value(args[4], lineno)))
                elif kind == "M":
                    if len(args) != 4:
                        raise NetlistParseError("M card needs drain, gate, source and a model", lineno)
                    if args[3] not in models:
                        raise NetlistParseError(f"undefined model {args[3]!r}", lineno)
                    d, g, s = (scope.node(t, lineno) for t in args[:3])
                    in_cell = bool(scope.path) and _XC.match(scope.path[-1]) is not None
                    elements.append(Transistor(name, d, g, s, models[args[3]], pending_state if in_cell else None))
                elif kind in "CR":
                    if len(args) != 3:
                        raise NetlistParseError(f"{kind} card needs two nodes and a value", lineno)
                    a, b = scope.node(args[0], lineno), scope.node(args[1], lineno)
                    cls = Capacitor if kind == "C" else Resistor
                    elements.append(cls(name, a, b, scope.value(args[2], lineno)))
                elif kind == "X":
                    upper = [t.upper() for t in args]
                    k = upper.index("PARAMS:") if "PARAMS:" in upper else len(args)
                    if k < 1:
                        raise NetlistParseError("X card needs a subcircuit name", lineno)
                    sub_name = args[k - 1]
                    if sub_name not in subckts:
                        raise NetlistParseError(f"undefined subcircuit {sub_name!r}", lineno)
                    sub = subckts[sub_name]
                    conns = args[: k - 1]
                    if len(conns) != len(sub.ports):
                        raise NetlistParseError(
                            f"{tokens[0]} connects {len(conns)} nodes to {sub_name} with {len(sub.ports)} ports", lineno
                        )
                    overrides = _params(args[k + 1 :], lineno)
                    unknown = set(overrides) - set(sub.defaults)
                    if unknown:
                        raise NetlistParseError(f"unknown parameters {sorted(unknown)} for {sub_name}", lineno)
                    params = {**sub.defaults}
                    for key, val in overrides.items():
                        params[key] = str(scope.value(val, lineno))
                    port_map = {p: scope.node(cn, lineno) for p, cn in zip(sub.ports, conns)}
                    instantiate(sub.cards, _Scope(scope.path + (tokens[0],), port_map, params), depth + 1)
            except NetlistParseError:
                raise
            except ValueError as exc:
                raise NetlistParseError(str(exc), lineno) from None

    instantiate(top, _Scope((), {}, {}))
    try:
        return Circuit(tuple(elements))
    except ValueError as exc:
        raise NetlistParseError(str(exc)) from None
