"""Synthesize a reference curve from known cell parameters, then fit it back.

Starts from each parameter perturbed by +-20 % (random signs) and optionally
applies multiplicative noise to the reference.
"""

import argparse
import time

import numpy as np

from nandmacro.config import RunConfig, load_config
from nandmacro.extraction import add_noise, fit_device_params, synthesize_reference
from nandmacro.protocols import SingleWLProtocol, default_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-c", "--config")
    ap.add_argument("--starts", type=int, default=3)
    ap.add_argument("--noise", type=float, default=0.0, help="relative sigma of reference noise")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else RunConfig()
    spec = cfg.array_spec()
    truth = cfg.cell
    b = cfg.bias
    protocol = SingleWLProtocol(
        probed_wl=cfg.n_wl // 2, grid=default_grid(b.sweep_start, b.sweep_stop, b.sweep_step),
        v_pass=b.v_pass, v_bl=b.v_bl, v_select=b.v_select, v_sl=b.v_sl,
    )
    reference = synthesize_reference(spec, truth, protocol, cfg.solver)
    if args.noise > 0:
        reference = add_noise(reference, args.noise, args.seed)

    rng = np.random.default_rng(args.seed)
    for run in range(args.starts):
        f = 1 + 0.2 * rng.choice([-1.0, 1.0], 5)
        start = truth.replace(
            vt0=truth.vt0 * f[0], n=max(1.0, truth.n * f[1]), k=truth.k * f[2],
            lam=truth.lam * f[3], r_s=truth.r_s * f[4],
        )
        t0 = time.perf_counter()
        rep = fit_device_params(reference, spec, start, seed=run, options=cfg.solver)
        p = rep.params
        print(
            f"start {run}: {time.perf_counter() - t0:5.1f} s  "
            f"dvt0={1e3 * (p.vt0 - truth.vt0):+.2f} mV  dK={100 * (p.k / truth.k - 1):+.3f} %  "
            f"n={p.n:.4f}  lam={p.lam:.4f}  r_s={p.r_s:.0f}  objective={rep.objective:.2e}"
        )


if __name__ == "__main__":
    main()
