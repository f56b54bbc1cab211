"""Single-WL sweeps of every layer in the central string, fresh and programmed.

Writes one CSV per layer and state to the output directory and prints the
gate voltage at which each curve crosses 100 nA.
"""

import argparse
from pathlib import Path

import numpy as np

from nandmacro import experiments as ex
from nandmacro.config import RunConfig, load_config


def v_at(v, i, level=1e-7):
    return float(np.interp(np.log10(level), np.log10(i), v))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-c", "--config", help="TOML run configuration")
    ap.add_argument("-o", "--out-dir", default="out/single_wl")
    ap.add_argument("--delta-vt", type=float, default=1.0, help="threshold shift of the programmed cell")
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else RunConfig()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    r, c = cfg.rows // 2, cfg.cols // 2
    print(f"layer  V(100 nA) fresh  V(100 nA) programmed")
    for layer in range(cfg.n_wl):
        fresh = ex.cmd_single_wl(cfg, layer)
        prog = ex.cmd_single_wl(cfg.replace(states=((r, c, layer, args.delta_vt),)), layer)
        fresh.write(out / f"layer{layer}_fresh.csv")
        prog.write(out / f"layer{layer}_programmed.csv")
        print(f"{layer:5d}  {v_at(fresh.v, fresh.column(r, c)):16.3f}  {v_at(prog.v, prog.column(r, c)):20.3f}")


if __name__ == "__main__":
    main()
