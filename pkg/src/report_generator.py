"""
Comparison report outputs: per-cell CSV, JSON summary, plain-text tables, plot
"""
import logging
import os

import pandas as pd

from evaluation import REGIME_ORDER, REPORT_COLUMNS, VARIANT_ORDER
from utils import FLOAT_FORMAT, ensure_output_dir, round_sig, write_json

logger = logging.getLogger(__name__)

CELLS_FILE = "comparison_cells.csv"
SUMMARY_FILE = "comparison_summary.json"
TEXT_FILE = "comparison_report.txt"
PLOT_FILE = "comparison_plot.png"

METRICS = ["accuracy", "response_time_s", "steps_to_threshold"]


def _ordered(values, order):
    ranks = {member.value: i for i, member in enumerate(order)}
    return sorted(set(values), key=lambda v: ranks.get(v, len(ranks)))


def round_frame(frame):
    """Round float columns to what the CSV will hold, so summaries agree with it"""
    frame = frame.copy()
    for col in ("accuracy", "response_time_s"):
        frame[col] = frame[col].map(round_sig)
    return frame


def summarize(frame):
    """Mean and (population) standard deviation per variant x regime"""
    summary = {"seeds": sorted(int(s) for s in frame["seed"].unique()), "metrics": {}}
    for variant in _ordered(frame["variant"], VARIANT_ORDER):
        summary["metrics"][variant] = {}
        for regime in _ordered(frame["regime"], REGIME_ORDER):
            group = frame[(frame["variant"] == variant) & (frame["regime"] == regime)]
            if group.empty:
                continue
            cell = {"n": int(len(group))}
            for metric in METRICS:
                cell[metric] = {
                    "mean": round_sig(group[metric].astype(float).mean()),
                    "sd": round_sig(group[metric].astype(float).std(ddof=0)),
                }
            summary["metrics"][variant][regime] = cell
    return summary


def _table(summary, metric, fmt):
    regimes = []
    for per_regime in summary["metrics"].values():
        regimes += list(per_regime)
    regimes = _ordered(regimes, REGIME_ORDER)
    header = f"{'Model':<14}" + "".join(f"{r + ' Traffic':>22}" for r in regimes)
    lines = [header, "-" * len(header)]
    for variant, per_regime in summary["metrics"].items():
        row = f"{variant:<14}"
        for regime in regimes:
            cell = per_regime.get(regime)
            row += f"{'n/a':>22}" if cell is None else f"{fmt(cell[metric]):>22}"
        lines.append(row)
    return "\n".join(lines)


def render_text(summary):
    acc = _table(summary, "accuracy",
                 lambda m: f"{100 * m['mean']:.1f}% +/- {100 * m['sd']:.1f}")
    rt = _table(summary, "response_time_s",
                lambda m: f"{m['mean']:.4f}s +/- {m['sd']:.4f}")
    steps = _table(summary, "steps_to_threshold",
                   lambda m: f"{m['mean']:.1f} +/- {m['sd']:.1f}")
    seeds = ", ".join(str(s) for s in summary["seeds"])
    return f"""
META-FEDERATED TRAFFIC COMPARISON
=================================
Seeds: {seeds}

ACCURACY AFTER REGIME SHIFT (query set, after adaptation)
{acc}

RESPONSE TIME (simulated seconds from shift to threshold)
{rt}

ADAPTATION STEPS TO THRESHOLD
{steps}
"""


def write_comparison_outputs(report, out_dir):
    """CSV of every cell, JSON summary and text tables; returns the paths"""
    ensure_output_dir(out_dir)
    frame = round_frame(report.to_frame())
    csv_path = os.path.join(out_dir, CELLS_FILE)
    frame.to_csv(csv_path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info("comparison cells saved to %s (%d rows)", csv_path, len(frame))

    summary = summarize(frame)
    json_path = write_json(summary, os.path.join(out_dir, SUMMARY_FILE))
    text_path = write_text_report(summary, out_dir)
    return csv_path, json_path, text_path


def write_text_report(summary, out_dir):
    path = os.path.join(ensure_output_dir(out_dir), TEXT_FILE)
    with open(path, "w", newline="\n") as f:
        f.write(render_text(summary))
    return path


def read_cells(csv_path):
    frame = pd.read_csv(csv_path)
    missing = [c for c in REPORT_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"{csv_path} is missing columns {missing}")
    return frame


def plot_summary(summary, out_dir):
    """Grouped bars of mean accuracy and response time; skipped if plotting fails"""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        variants = list(summary["metrics"])
        regimes = _ordered([r for v in variants for r in summary["metrics"][v]], REGIME_ORDER)
        fig, axes = plt.subplots(1, 2, figsize=(11, 4.5))
        width = 0.8 / max(len(variants), 1)
        for ax, metric, title in ((axes[0], "accuracy", "Accuracy after shift"),
                                  (axes[1], "response_time_s", "Response time (s)")):
            for i, variant in enumerate(variants):
                means = [summary["metrics"][variant].get(r, {}).get(metric, {}).get("mean", 0.0)
                         for r in regimes]
                sds = [summary["metrics"][variant].get(r, {}).get(metric, {}).get("sd", 0.0)
                       for r in regimes]
                xs = [j + i * width for j in range(len(regimes))]
                ax.bar(xs, means, width, yerr=sds, label=variant, capsize=3)
            ax.set_xticks([j + width * (len(variants) - 1) / 2 for j in range(len(regimes))])
            ax.set_xticklabels(regimes)
            ax.set_title(title)
        axes[0].set_ylim(0, 1)
        axes[0].legend()
        plt.tight_layout()
        path = os.path.join(ensure_output_dir(out_dir), PLOT_FILE)
        plt.savefig(path, dpi=150)
        plt.close(fig)
        print(f"Plot saved to: {path}")
        return path
    except Exception as e:
        print(f"Note: Could not create plot: {e}")
        return None


def rerender_report(csv_path, out_dir, plot=True):
    """Rebuild summary JSON, text tables and (optionally) the plot from a cells CSV"""
    frame = read_cells(csv_path)
    summary = summarize(frame)
    json_path = write_json(summary, os.path.join(ensure_output_dir(out_dir), SUMMARY_FILE))
    text_path = write_text_report(summary, out_dir)
    plot_path = plot_summary(summary, out_dir) if plot else None
    return summary, json_path, text_path, plot_path
