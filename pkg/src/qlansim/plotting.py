"""Figure rendering for run reports.

The `report` CLI verb renders these to PNG files next to the delimited
output: reconstructed density matrices per link, a per-link metric
summary, the recovered clock-offset distribution, and a sample
coincidence-lag histogram per link.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .harness import RunReport, format_channels
from .timing import BIN_NS

BASIS_TICKS = ["HH", "HV", "VH", "VV"]


def density_matrix_figure(report: RunReport) -> plt.Figure:
    n = len(report.links)
    fig, axes = plt.subplots(n, 2, figsize=(7.0, 3.0 * n), squeeze=False)
    for i, row in enumerate(report.links):
        m = row.state.matrix
        for j, (part, label) in enumerate(((np.real(m), "Re"), (np.imag(m), "Im"))):
            ax = axes[i][j]
            im = ax.imshow(part, vmin=-0.5, vmax=0.5, cmap="RdBu_r")
            ax.set_xticks(range(4), BASIS_TICKS, fontsize=8)
            ax.set_yticks(range(4), BASIS_TICKS, fontsize=8)
            ax.set_title(
                f"{row.link} (ch {format_channels(row.channels)}) {label}", fontsize=9
            )
            for (r, c), v in np.ndenumerate(part):
                ax.text(c, r, f"{v:.2f}", ha="center", va="center", fontsize=7)
            fig.colorbar(im, ax=ax, shrink=0.8)
    fig.suptitle(f"Reconstructed states, {report.scenario}")
    fig.tight_layout()
    return fig


def metrics_figure(report: RunReport) -> plt.Figure:
    links = [r.link for r in report.links]
    x = np.arange(len(links))
    fig, axes = plt.subplots(1, 3, figsize=(10, 3.2))
    series = [
        ("Fidelity", [r.metrics.fidelity for r in report.links],
         [r.metrics.fidelity_sigma for r in report.links]),
        ("$E_N$ [ebits]", [r.metrics.log_negativity for r in report.links],
         [r.metrics.log_negativity_sigma for r in report.links]),
        ("$R_E$ [ebits/s]", [r.metrics.ebit_rate for r in report.links],
         [r.metrics.ebit_rate_sigma for r in report.links]),
    ]
    for ax, (title, vals, errs) in zip(axes, series):
        ax.bar(x, vals, yerr=errs, capsize=3, color="#4878b0")
        ax.set_xticks(x, links)
        ax.set_title(title, fontsize=10)
        ax.grid(axis="y", alpha=0.3)
    fig.suptitle(f"Link metrics, {report.scenario}")
    fig.tight_layout()
    return fig


def timing_figure(report: RunReport) -> plt.Figure:
    offsets_ns = np.array([d.offset_bins for d in report.timing], dtype=float) * BIN_NS
    shifts = [d.epoch_shift_bins for d in report.timing]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    bins = np.arange(offsets_ns.min() - 7.5, offsets_ns.max() + 12.5, BIN_NS)
    axes[0].hist(offsets_ns, bins=bins, color="#4878b0", edgecolor="white")
    axes[0].set_xlabel("recovered relative delay [ns]")
    axes[0].set_ylabel("captures")
    axes[0].set_title("Per-capture clock offsets", fontsize=10)
    axes[1].plot(shifts, ".", ms=4)
    axes[1].set_xlabel("capture index")
    axes[1].set_ylabel("epoch shift [bins]")
    axes[1].set_title("Corrected discrete timestamp shifts", fontsize=10)
    fig.suptitle(f"Timing diagnostics, {report.scenario}")
    fig.tight_layout()
    return fig


def lag_histogram_figure(report: RunReport) -> plt.Figure:
    fig, axes = plt.subplots(1, len(report.links), figsize=(3.4 * len(report.links), 3.0))
    if len(report.links) == 1:
        axes = [axes]
    for ax, row in zip(axes, report.links):
        lags = sorted(row.lag_histogram_sample)
        counts = [row.lag_histogram_sample[k] for k in lags]
        ax.bar(lags, counts, width=1.0, color="#4878b0")
        ax.set_xlabel("lag [bins]")
        ax.set_ylabel("pairs")
        ax.set_title(f"{row.link}", fontsize=10)
    fig.suptitle(f"Coincidence-peak histograms, {report.scenario}")
    fig.tight_layout()
    return fig


def render_figures(report: RunReport, out_dir: str | Path) -> list[Path]:
    """Render every report figure to PNG; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    figures = {
        "density_matrices.png": density_matrix_figure,
        "link_metrics.png": metrics_figure,
        "timing.png": timing_figure,
        "lag_histograms.png": lag_histogram_figure,
    }
    written = []
    for fname, builder in figures.items():
        fig = builder(report)
        path = out_dir / fname
        fig.savefig(path, dpi=130)
        plt.close(fig)
        written.append(path)
    return written
