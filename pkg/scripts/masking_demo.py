#!/usr/bin/env python3
"""Show how pooled calibration masks per-subject miscalibration.

Generates a pair of subjects that are individually miscalibrated in opposite
directions but pool into near-perfectly calibrated dataset-level bins, then
prints the per-subject and merged reliability tables side by side.
"""

import argparse

from seguq.calibration import (
    bin_predictions,
    classify_subject_calibration,
    ece,
    make_report,
    merge_bins,
    reliability_rows,
)
from seguq.synth import generate_masking_pair


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--delta", type=float, default=0.15, help="confidence shift")
    parser.add_argument("--side", type=int, default=256, help="square image side")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    a, b = generate_masking_pair(args.delta, dims=(args.side, args.side), seed=args.seed)
    bins_a = bin_predictions(a.prob, a.ground_truth)
    bins_b = bin_predictions(b.prob, b.ground_truth)
    merged = merge_bins([bins_a, bins_b])

    print(f"delta={args.delta}  voxels per subject={args.side * args.side}")
    print()
    print(f"{'bin':>12} {'A accuracy':>11} {'B accuracy':>11} {'merged':>8} {'conf':>6}")
    rows_a = {r[0]: r for r in reliability_rows(bins_a)}
    rows_b = {r[0]: r for r in reliability_rows(bins_b)}
    for lo, hi, _, mean_conf, acc in reliability_rows(merged):
        acc_a = rows_a[lo][4] if lo in rows_a else float("nan")
        acc_b = rows_b[lo][4] if lo in rows_b else float("nan")
        print(
            f"[{lo:4.2f},{hi:4.2f}) {acc_a:>11.3f} {acc_b:>11.3f} {acc:>8.3f} {mean_conf:>6.3f}"
        )
    print()
    for name, bins in (("subject A", bins_a), ("subject B", bins_b), ("merged", merged)):
        level = "dataset" if name == "merged" else "subject"
        report = make_report(bins, level, None if level == "dataset" else name)
        line = f"{name:>9}: ECE={report.ece:.4f}  signed_gap={report.signed_gap:+.4f}"
        if level == "subject":
            line += f"  -> {classify_subject_calibration(report).label}"
        print(line)
    print()
    print(
        "Each subject is miscalibrated by about delta, yet the pooled bins look "
        f"calibrated (merged ECE {ece(merged):.4f})."
    )


if __name__ == "__main__":
    main()
