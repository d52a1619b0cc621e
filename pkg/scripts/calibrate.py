"""Calibrated censoring parameters for every scenario and a fresh-draw check.

Example::

    python scripts/calibrate.py --targets 0.25,0.5
"""

import argparse

from rocsurv._rng import stream
from rocsurv.scenarios import SCENARIOS, ScenarioSpec, calibrate_censoring, censoring_rate, iae_horizon


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenarios", default=",".join(SCENARIOS))
    ap.add_argument("--targets", default="0.25,0.5")
    args = ap.parse_args()

    print(f"{'scenario':>8} {'target':>7} {'eta':>10} {'fresh':>7} {'s':>8}")
    for sc in args.scenarios.split(","):
        spec = ScenarioSpec(sc)
        for target in (float(v) for v in args.targets.split(",")):
            eta = calibrate_censoring(spec, target)
            fresh = censoring_rate(spec, eta, rng=stream(1, "calibrate-script", SCENARIOS.index(sc)))
            print(f"{sc:>8} {target:>7.2f} {eta:>10.4f} {fresh:>7.4f} {iae_horizon(sc):>8.3f}")


if __name__ == "__main__":
    main()
