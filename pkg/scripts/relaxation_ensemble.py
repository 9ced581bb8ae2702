"""Round-trip statistics of the relaxation-rate estimate in the model trap.

Simulates ``--seeds`` thermal relaxations of a 75 nm gold sphere (forces
calibrated to a 3 pN/mm mean 1 mW stiffness) at 8 mW, renders each to a
kymograph, analyzes it and compares the fitted rate with S/gamma.
"""
import argparse
from dataclasses import replace

import numpy as np

from tapertrap.dynamics import render_kymograph, simulate_overdamped, tabulate_axial_force
from tapertrap.tracking import analyze_kymograph
from tapertrap.trap_model import FiberGeometry, ParticleSpec, calibrate_force_scale, find_trap, two_color_modes


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--ratio", type=float, default=0.15)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--offset-um", type=float, default=25.0)
    ap.add_argument("--gamma", type=float, default=1.3e-8)
    ap.add_argument("--noise", type=float, default=0.05)
    args = ap.parse_args()

    geo = FiberGeometry()
    bare = ParticleSpec(75e-9)
    particle = replace(bare, force_scale=calibrate_force_scale(geo, bare, [0.1, 0.15, 0.2, 0.25], 3e-9))
    modes = two_color_modes(args.ratio, 8e-3)
    sol = find_trap(geo, modes, particle)
    force = tabulate_axial_force(geo, modes, particle, sol.z0 - 200e-6, sol.z0 + 200e-6)
    expected = sol.stiffness / args.gamma
    rates = []
    for seed in range(args.seeds):
        tr = simulate_overdamped(force, args.gamma, 293.0, sol.z0 - args.offset_um * 1e-6, n_steps=60000,
                                 seed=seed)
        kymo = render_kymograph([tr], sol.z0 - 300e-6, 120, 5e-6, 180, background_noise_sigma=args.noise,
                                seed=seed + 1000)
        fits = analyze_kymograph(kymo, min_height=0.3).trap_fits(min_amplitude=5e-6)
        rates.append(fits[0].rate if fits else np.nan)
        print(f"seed {seed:3d}  Lambda = {rates[-1]:.4f} 1/s")
    rates = np.array(rates)
    print(f"S/gamma = {expected:.4f} 1/s; median = {np.nanmedian(rates):.4f} "
          f"({np.nanmedian(rates) / expected - 1:+.1%}); IQR = {np.subtract(*np.nanpercentile(rates, [75, 25])):.4f}")


if __name__ == "__main__":
    main()
