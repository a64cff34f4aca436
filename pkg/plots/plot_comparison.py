#!/usr/bin/env python3
"""Render per-commodity policy comparisons from a sweep's summary.csv.

One figure per commodity: reliability versus arrival rate on top (with the
reliability target as a dashed line), cost per episode versus arrival rate
below, one curve per policy. Usage:

    python3 plot_comparison.py --in runs/sweep/summary.csv --out figures/
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from metricsio import SchemaError, load_summary

MARKERS = {"cdrl": "o", "bp": "s", "umw": "^"}


def out_name(commodity: int) -> str:
    return f"comparison_c{commodity}.png"


def render_comparison(summary_path, out_dir) -> list[Path]:
    df, n = load_summary(summary_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    policies = list(dict.fromkeys(df["policy"]))
    for c in range(1, n + 1):
        fig, (ax_rel, ax_cost) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
        for policy in policies:
            rows = df[df["policy"] == policy].sort_values("rate")
            marker = MARKERS.get(policy, "x")
            ax_rel.plot(
                rows["rate"], rows[f"reliability_c{c}"], marker=marker, label=policy
            )
            ax_cost.plot(
                rows["rate"], rows["cost_per_episode"], marker=marker, label=policy
            )
        ax_rel.axhline(
            df[f"target_c{c}"].iloc[0], color="black", linestyle="--", linewidth=1.2
        )
        ax_rel.set_ylabel(f"reliability, commodity {c}")
        ax_rel.set_ylim(0, 1.05)
        ax_rel.legend(fontsize=8)
        ax_cost.set_ylabel("cost per episode")
        ax_cost.set_xlabel("arrival rate (packets/slot)")
        fig.tight_layout()
        path = out_dir / out_name(c)
        fig.savefig(path, dpi=120, metadata={"Software": None})
        plt.close(fig)
        written.append(path)
    return written


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--in", dest="src", required=True, help="summary.csv from a sweep")
    parser.add_argument("--out", dest="out", required=True, help="directory for figures")
    args = parser.parse_args(argv)
    try:
        paths = render_comparison(args.src, args.out)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
