#!/usr/bin/env python3
"""Render the training-progress figure from a run's metrics.csv.

Solid curves: per-commodity timely throughput (packets per slot, smoothed).
Dashed curves: the constraint prices. Dotted horizontal lines: each
commodity's throughput target. Usage:

    python3 plot_training.py --in runs/edge/metrics.csv --out figures/
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from metricsio import SchemaError, load_metrics

OUT_NAME = "training_progress.png"


def render_training(metrics_path, out_dir) -> Path:
    df, n = load_metrics(metrics_path)
    learning = df[df["phase"].isin(["train", "improve"])]
    if len(learning) == 0:
        raise SchemaError(f"{metrics_path}: no train/improve rows to plot")

    window = max(1, min(200, len(learning) // 20))
    fig, (ax_thr, ax_lam) = plt.subplots(
        2, 1, figsize=(8, 6), sharex=True, height_ratios=[3, 2]
    )
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    x = learning["episode"]
    for c in range(1, n + 1):
        color = colors[(c - 1) % len(colors)]
        thr = learning[f"throughput_c{c}"]
        smooth = thr.rolling(window, min_periods=1).mean()
        ax_thr.plot(x, thr, color=color, alpha=0.15, linewidth=0.6)
        ax_thr.plot(x, smooth, color=color, linestyle="-", label=f"commodity {c}")
        target = learning[f"target_throughput_c{c}"].iloc[0]
        ax_thr.axhline(target, color=color, linestyle=":", linewidth=1.2)
        ax_lam.plot(
            x,
            learning[f"lambda_c{c}"],
            color=color,
            linestyle="--",
            label=f"commodity {c}",
        )
    boundary = learning[learning["phase"] == "improve"]
    if len(boundary):
        for ax in (ax_thr, ax_lam):
            ax.axvline(boundary["episode"].iloc[0], color="gray", linewidth=0.8, alpha=0.6)
    ax_thr.set_ylabel("timely throughput (packets/slot)")
    ax_thr.legend(loc="lower right", fontsize=8)
    ax_lam.set_ylabel("constraint price")
    ax_lam.set_xlabel("episode")
    fig.tight_layout()

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / OUT_NAME
    fig.savefig(out_path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return out_path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--in", dest="src", required=True, help="metrics.csv from a run")
    parser.add_argument("--out", dest="out", required=True, help="directory for figures")
    args = parser.parse_args(argv)
    try:
        path = render_training(args.src, args.out)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
