"""C_P versus relative polarization angle for several fiber diameters.

Writes ``polarization_correction.csv`` and ``.svg`` into ``--out``.
"""
import argparse
import csv
from pathlib import Path

import numpy as np

from tapertrap import svgplot
from tapertrap.fiber_modes import polarization_correction


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--out", default="results/polarization")
    ap.add_argument("--probe-offset-nm", type=float, default=75.0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    angles = np.arange(0, 90.001, 5.0)
    diameters = np.arange(400, 1001, 100) * 1e-9
    table = {d: [polarization_correction(d, 640e-9, 785e-9, np.radians(a), args.probe_offset_nm * 1e-9)
                 for a in angles] for d in diameters}
    with open(out / "polarization_correction.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["angle_deg", *(f"C_P[D={d * 1e9:.0f}nm]" for d in diameters)])
        for i, a in enumerate(angles):
            w.writerow([a, *(repr(table[d][i]) for d in diameters)])
    svgplot.line_plot({f"{d * 1e9:.0f} nm": (angles, table[d]) for d in diameters},
                      out / "polarization_correction.svg", "relative angle (deg)", "C_P",
                      "intensity correction for rotated polarization")
    cp90 = [table[d][-1] for d in diameters]
    print(f"C_P(90 deg) ranges over [{min(cp90):.3f}, {max(cp90):.3f}]")


if __name__ == "__main__":
    main()
