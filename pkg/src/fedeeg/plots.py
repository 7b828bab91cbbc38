"""Figure rendering for evaluation reports and subset-size sweeps.

Figures are written next to the delimited output so a run directory is
self-contained; the CSVs stay the canonical record.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import MetricsReport, summarize_reports

_METRICS = ("accuracy", "f1", "auroc")


def render_report_figure(
    reports: list[MetricsReport], path: str | Path, title: str = ""
) -> Path:
    """Grouped bars of mean accuracy/F1/AUROC per scope, error bars = std."""
    path = Path(path)
    summary = summarize_reports(reports)
    scopes = list(summary)
    x = np.arange(len(scopes))
    width = 0.8 / len(_METRICS)

    fig, ax = plt.subplots(figsize=(1.8 + 1.4 * len(scopes), 4.2))
    for i, metric in enumerate(_METRICS):
        means = [summary[s][metric][0] for s in scopes]
        stds = [summary[s][metric][1] for s in scopes]
        ax.bar(x + (i - 1) * width, means, width, yerr=stds, capsize=3, label=metric)
    ax.set_xticks(x)
    ax.set_xticklabels(scopes, rotation=20, ha="right")
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("score")
    ax.grid(axis="y", alpha=0.3)
    ax.legend(frameon=False)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_sweep_figure(
    per_m: dict[int, list[MetricsReport]], path: str | Path
) -> Path:
    """Accuracy against the per-round sample budget M.

    Solid line with a band: macro accuracy (mean +/- std over repeats);
    thin lines: each client's own mean accuracy.
    """
    path = Path(path)
    m_values = sorted(per_m)
    summaries = {m: summarize_reports(per_m[m]) for m in m_values}
    macro_mean = np.array([summaries[m]["macro"]["accuracy"][0] for m in m_values])
    macro_std = np.array([summaries[m]["macro"]["accuracy"][1] for m in m_values])

    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.fill_between(m_values, macro_mean - macro_std, macro_mean + macro_std,
                    alpha=0.2, color="C0")
    ax.plot(m_values, macro_mean, "o-", color="C0", label="macro")
    clients = [s for s in summaries[m_values[0]] if s not in ("pooled", "macro")]
    for i, client in enumerate(clients):
        means = [summaries[m][client]["accuracy"][0] for m in m_values]
        ax.plot(m_values, means, ":", lw=1.2, color=f"C{i + 1}", label=client)
    pooled = [summaries[m]["pooled"]["accuracy"][0] for m in m_values]
    ax.plot(m_values, pooled, "s--", color="0.3", lw=1.2, label="pooled")

    ax.set_xscale("log")
    ax.set_xticks(m_values)
    ax.set_xticklabels([str(m) for m in m_values])
    ax.set_xlabel("per-round subset size M")
    ax.set_ylabel("test accuracy")
    ax.grid(alpha=0.3)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
