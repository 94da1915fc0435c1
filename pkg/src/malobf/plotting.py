"""Figures for an experiment report: validation curves and per-scenario bar charts."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import SCENARIOS, ExperimentReport  # noqa: E402

SCENARIO_COLORS = {
    "baseline_clean": "tab:blue",
    "baseline_obf": "tab:green",
    "hardened_obf": "tab:red",
    "hardened_clean": "tab:gray",
}
METRIC_LABELS = {"accuracy": "Accuracy (%)", "fnr": "False negative rate (%)", "fpr": "False positive rate (%)"}

plt.rcParams.update({"font.size": 9, "axes.labelsize": 9, "legend.fontsize": 8, "figure.dpi": 100})


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_curves(report: ExperimentReport, kind: str, path) -> Path:
    """Validation accuracy per epoch for every ``<config>_<kind>`` model."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for name, hist in report.histories.items():
        fc, model_kind = name.rsplit("_", 1)
        if model_kind != kind or not hist.val_accuracy:
            continue
        ax.plot(np.arange(1, len(hist.val_accuracy) + 1), hist.val_accuracy, label=fc, lw=1.2)
    ax.set_xlabel("Epoch")
    ax.set_ylabel("Validation accuracy (%)")
    ax.set_title(f"{kind} model (clean validation set)")
    ax.grid(alpha=0.3)
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_metric(report: ExperimentReport, metric: str, path) -> Path:
    configs = list(dict.fromkeys(fc for fc, _ in report.cells))
    scenarios = [s for s in SCENARIOS if any((fc, s) in report.cells for fc in configs)]
    width = 0.8 / max(len(scenarios), 1)
    x = np.arange(len(configs))
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for k, sc in enumerate(scenarios):
        vals = []
        for fc in configs:
            v = getattr(report.cells[(fc, sc)], metric) if (fc, sc) in report.cells else None
            vals.append(np.nan if v is None else v)
        ax.bar(x + (k - (len(scenarios) - 1) / 2) * width, vals, width, label=sc, color=SCENARIO_COLORS[sc])
    ax.set_xticks(x)
    ax.set_xticklabels(configs)
    ax.set_ylabel(METRIC_LABELS[metric])
    ax.set_ylim(0, 100)
    ax.legend(frameon=False, ncol=2)
    return _save(fig, path)


def render_figures(report: ExperimentReport, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [
        plot_curves(report, "baseline", out / "curves_baseline.png"),
        plot_curves(report, "hardened", out / "curves_hardened.png"),
    ]
    paths += [plot_metric(report, m, out / f"{m}.png") for m in METRIC_LABELS]
    return paths
