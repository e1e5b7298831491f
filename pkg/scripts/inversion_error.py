#!/usr/bin/env python3
"""Round-trip latent error of EDICT and DDIM inversion across mixing factors."""
import argparse

import numpy as np

from gsedict.edict import (DiffusionSchedule, ddim_invert, ddim_sample, edict_invert,
                           edict_sample, relative_error)
from gsedict.latent import make_rng, standard_normal_tensor
from gsedict.toy import ToyDenoiser


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=50)
    ap.add_argument("--latents", type=int, default=10)
    ap.add_argument("--p", type=float, nargs="+", default=[0.5, 0.7, 0.9, 0.93, 0.97])
    ap.add_argument("--prior", action="store_true", help="use the pipeline denoiser, not bare tanh")
    args = ap.parse_args()

    sched = DiffusionSchedule.linear(args.steps)
    den = ToyDenoiser(sched if args.prior else None)
    zs = [standard_normal_tensor((4, 64, 64), make_rng(i)) for i in range(args.latents)]
    ddim = np.mean([relative_error(ddim_invert(ddim_sample(z, den, sched), den, sched), z) for z in zs])
    print(f"ddim            mean rel err {ddim:.3e}")
    with np.errstate(over="ignore", invalid="ignore"):
        for p in args.p:
            pair = [relative_error(edict_invert(edict_sample(z, den, sched, p, return_pair=True),
                                                den, sched, p), z) for z in zs]
            single = [relative_error(edict_invert(edict_sample(z, den, sched, p), den, sched, p), z)
                      for z in zs]
            print(f"edict p={p:<5}   pair {np.mean(pair):.3e}   x-only restart {np.mean(single):.3e}")


if __name__ == "__main__":
    main()
