"""Run every shipped config through the CLI into ``results/<config>/``.

    python3 scripts/reproduce_all.py [--out results] [--jobs N]

crossover.cfg       -> modes (surface-intensity crossover vs R)
small_particle.cfg  -> trap-scan (normalized potentials of a 10 nm sphere)
experiment_scale.cfg     -> modes, trap-scan, simulate, analyze (75 nm sphere)
each directory then gets a report.md.
"""
import argparse
import sys
from pathlib import Path

from tapertrap.cli import main

ROOT = Path(__file__).resolve().parents[1]
PLAN = {
    "crossover": ["modes"],
    "small_particle": ["trap-scan"],
    "experiment_scale": ["modes", "trap-scan", "simulate", "analyze"],
}


def run(out: Path, jobs: int) -> int:
    worst = 0
    for name, commands in PLAN.items():
        cfg = ROOT / "configs" / f"{name}.cfg"
        target = out / name
        for cmd in [*commands, "report"]:
            code = main([cmd, "--config", str(cfg), "--out", str(target), "--jobs", str(jobs)])
            print(f"{name:15s} {cmd:10s} exit {code}")
            worst = max(worst, code)
    return worst


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--out", default=str(ROOT / "results"))
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    sys.exit(run(Path(args.out), args.jobs))
