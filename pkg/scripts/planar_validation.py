"""Planar convergence experiments: Beltrami coefficient, covariance predictions, angle distortion.

Writes one JSON convergence report per experiment.
"""

import argparse
from pathlib import Path

from pcqc.convergence import ExperimentSpec, run_convergence

SERIES = [17, 25, 33, 49, 65, 97]
EXPERIMENTS = [
    ExperimentSpec("bc_fig2_map", "fig2_map", SERIES, ["bc"], metric="sup"),
    ExperimentSpec("covariance_fig2_map", "fig2_map", SERIES, ["covariance"], metric="sup"),
    ExperimentSpec("angle_f3", "f3", SERIES, ["angle"]),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results", help="output directory")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for spec in EXPERIMENTS:
        rep = run_convergence(spec)
        (out / f"{spec.name}.json").write_text(rep.to_json() + "\n")
        slopes = ", ".join(f"{k} {v:.3f}" for k, v in sorted(rep.slopes.items()))
        print(f"{spec.name}: {slopes}" + (f"  failures {rep.failures}" if rep.failures else ""))
        for k, v in sorted(rep.per_interval_slopes.items()):
            print(f"    {k} per interval: " + " ".join(f"{s:.3f}" for s in v))


if __name__ == "__main__":
    main()
