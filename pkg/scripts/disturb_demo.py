"""Ramp one WL with every device off and compare neighbor excursions to the divider."""

import argparse

from nandmacro import experiments as ex
from nandmacro.config import RunConfig, load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-c", "--config")
    ap.add_argument("-l", "--layer", type=int, help="ramped layer (default: middle)")
    ap.add_argument("-o", "--out", help="CSV of the transient waveforms")
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else RunConfig()
    c = cfg.coupling()
    print(f"coupling caps: C_V={c.c_v:.3e} C_H={c.c_h:.3e} C_S={c.c_s:.3e} C_D={c.c_d:.3e} F")
    for label, run_cfg in (("estimated caps", cfg), ("vertical only", cfg.replace(
        coupling_overrides={"c_h": 0.0, "c_s": 0.0, "c_d": 0.0}))):
        res = ex.cmd_disturb(run_cfg, args.layer)
        print(f"{label}: ramp {res.delta_v:.2f} V")
        for node in res.excursions:
            print(f"  {node}: dv/dV = {res.ratio(node):.4f}  divider = {res.predicted_ratio[node]:.4f}")
        if args.out and label == "estimated caps":
            res.write(args.out)


if __name__ == "__main__":
    main()
