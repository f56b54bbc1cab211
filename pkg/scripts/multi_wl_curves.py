"""Multi-WL sweep (all WLs tied) next to a single-WL sweep of the middle layer."""

import argparse
from pathlib import Path

import numpy as np

from nandmacro import experiments as ex
from nandmacro.config import RunConfig, load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-c", "--config")
    ap.add_argument("-o", "--out-dir", default="out/multi_wl")
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else RunConfig()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    multi = ex.cmd_multi_wl(cfg)
    single = ex.cmd_single_wl(cfg, cfg.n_wl // 2)
    multi.write(out / "multi_wl.csv")
    single.write(out / "single_wl_middle.csv")

    r, c = cfg.rows // 2, cfg.cols // 2
    i_m, i_s = multi.column(r, c), single.column(r, c)
    print("v_wl    multi-WL     single-WL")
    for k in np.linspace(0, len(multi.v) - 1, 11).astype(int):
        print(f"{multi.v[k]:4.2f}  {i_m[k]:.3e}  {i_s[k]:.3e}")


if __name__ == "__main__":
    main()
