"""Attention matching accuracy as a function of camera separation angle.

Sweeps the ring separation on a two-camera rig and reports the fraction of
mutually visible joints whose attention argmax lands on the true
correspondence. Matching stays near-perfect on clean synthetic maps at any
baseline; the sweep exists to expose geometry bugs at extreme angles, not
to reproduce any particular learned-model curve.
"""

from __future__ import annotations

import argparse
import dataclasses
import statistics

from epifuse.synth import ScenarioConfig, run_scenario


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--angles", type=float, nargs="+", default=[6, 12, 24, 45, 90, 135, 170]
    )
    parser.add_argument("--seeds", type=int, default=10)
    parser.add_argument("--out", default=None, help="optional CSV path")
    args = parser.parse_args()

    base = ScenarioConfig(cameras=2, image_wh=96, focal_px=120.0, channels=8, k=32)
    rows = []
    for angle in args.angles:
        scores = []
        for seed in range(args.seeds):
            config = dataclasses.replace(
                base, angle_deg=angle, target_angle_deg=angle, seed=seed
            )
            report = run_scenario(config)
            if report.matching_accuracy is not None:
                scores.append(report.matching_accuracy)
        median = statistics.median(scores) if scores else float("nan")
        rows.append((angle, len(scores), median))
        print(f"angle {angle:6.1f}  runs {len(scores):3d}  median matching {median:6.3f}")

    if args.out:
        with open(args.out, "w") as fh:
            fh.write("angle_deg,runs,median_matching_accuracy\n")
            for angle, runs, median in rows:
                fh.write(f"{angle!r},{runs},{median!r}\n")
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
