"""``nandmacro`` command line.

Exit codes
----------
0  success
2  bad command line or configuration
3  solver failure (non-convergence, singular system, failed fit, or more
   than 10 % of sweep points unconverged)
4  file could not be read or written
5  malformed input data (network, reference or netlist file)
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .errors import (
    BuildError,
    ConfigError,
    ConvergenceError,
    DomainError,
    FitError,
    NetlistError,
    NetlistParseError,
    SingularCircuitError,
    SingularReductionError,
)
from . import experiments as ex

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_IO = 4
EXIT_INPUT = 5

log = logging.getLogger("nandmacro")


def _config(args) -> RunConfig:
    return load_config(args.config) if args.config else RunConfig()


def _emit(text: str, out) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _curve_status(curve: ex.CurveCSV) -> int:
    frac = curve.failed_fraction
    if frac > ex.FAILURE_LIMIT:
        log.error("%.1f%% of sweep points failed to converge", 100 * frac)
        return EXIT_SOLVER
    return EXIT_OK


def _single_wl(args) -> int:
    cfg = _config(args)
    curve = ex.cmd_single_wl(cfg, args.layer)
    _emit(curve.to_text(), args.out)
    return _curve_status(curve)


def _multi_wl(args) -> int:
    curve = ex.cmd_multi_wl(_config(args))
    _emit(curve.to_text(), args.out)
    return _curve_status(curve)


def _disturb(args) -> int:
    res = ex.cmd_disturb(_config(args), args.layer, args.ramp_rate, args.t_end)
    _emit(res.to_text(), args.out)
    for node in res.excursions:
        log.info("%s: simulated %.4e, divider %.4e", node, res.ratio(node), res.predicted_ratio[node])
    return EXIT_OK


def _export(args) -> int:
    cfg = _config(args)
    if args.out in (None, "-"):
        spec = cfg.array_spec()
        states = cfg.cell_states(spec)
        sys.stdout.write(ex.emit_netlist(ex.build_array(spec, states), spec, states).text)
    else:
        ex.cmd_export_netlist(cfg, args.out)
    return EXIT_OK


def _extract(args) -> int:
    result = ex.cmd_extract_caps(args.network)
    _emit(result.to_csv(), args.out)
    return EXIT_OK


def _fit(args) -> int:
    report, reference = ex.cmd_fit(_config(args), args.reference)
    _emit(report.to_csv(reference), args.out)
    sys.stderr.write(report.summary() + "\n")
    return EXIT_OK


def _synth(args) -> int:
    from .extraction import add_noise, synthesize_reference
    from .protocols import SingleWLProtocol

    cfg = _config(args)
    b = cfg.bias
    grid = ex.Sweep("", b.sweep_start, b.sweep_stop, b.sweep_step).values()
    protocol = SingleWLProtocol(args.layer, b.v_pass, b.v_bl, tuple(grid), b.v_select, b.v_sl)
    ref = synthesize_reference(cfg.array_spec(), cfg.cell, protocol, cfg.solver)
    if args.noise > 0:
        ref = add_noise(ref, args.noise, args.seed)
    _emit(ref.to_csv(), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nandmacro", description="3D NAND string macro-model simulator.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def cmd(name, func, help_, config=True):
        s = sub.add_parser(name, help=help_)
        if config:
            s.add_argument("-c", "--config", help="TOML run configuration (defaults if omitted)")
        s.add_argument("-o", "--out", help="output file ('-' or omitted: stdout)")
        s.set_defaults(func=func)
        return s

    s = cmd("single-wl", _single_wl, "sweep one WL with the others at the pass voltage")
    s.add_argument("-l", "--layer", type=int, required=True, help="probed layer index")
    cmd("multi-wl", _multi_wl, "sweep all WLs together")
    s = cmd("disturb", _disturb, "ramp one WL and record neighbor gate excursions")
    s.add_argument("-l", "--layer", type=int, default=None, help="ramped layer (default: config)")
    s.add_argument("--ramp-rate", type=float, default=None, help="V/s")
    s.add_argument("--t-end", type=float, default=None, help="s")
    cmd("export-netlist", _export, "write the array netlist")
    s = cmd("extract-caps", _extract, "reduce a capacitor network to its terminal matrix", config=False)
    s.add_argument("network", help="network file ('a b C' lines plus a '# terminals:' header)")
    s = cmd("fit", _fit, "fit cell parameters to a single-WL reference curve")
    s.add_argument("reference", help="reference CSV (v_wl,i_string or single-wl output)")
    s = cmd("synth-reference", _synth, "write a single-WL reference from the config's cell parameters")
    s.add_argument("-l", "--layer", type=int, required=True)
    s.add_argument("--noise", type=float, default=0.0, help="relative Gaussian noise sigma")
    s.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config: %s", exc)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        extra = f" at t={exc.time:.6e} s" if exc.time is not None else ""
        log.error("solver: %s%s (residual %.3e)", exc, extra, exc.residual_norm)
        return EXIT_SOLVER
    except (SingularCircuitError, SingularReductionError, FitError) as exc:
        log.error("solver: %s", exc)
        return EXIT_SOLVER
    except OSError as exc:
        log.error("io: %s", exc)
        return EXIT_IO
    except (NetlistParseError, NetlistError) as exc:
        log.error("input: %s", exc)
        return EXIT_INPUT
    except (DomainError, BuildError) as exc:
        # Bad CLI argument values land here too; both are user input problems.
        log.error("input: %s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
