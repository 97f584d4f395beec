"""Figures for rate reports and Bernstein tables, rendered to files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_rate_report(report, path) -> Path:
    """Log-log plot of mean excess risk against ``n_eff`` with the fitted line."""
    rows = np.array([r[1:] for r in report.rows], dtype=float)
    n_eff, mean, se = rows[:, 0], rows[:, 3], rows[:, 4]
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.errorbar(n_eff, mean, yerr=2 * se, fmt="o", capsize=3, label="mean excess ± 2 se")
    if np.isfinite(report.fitted_slope) and np.all(mean > 0):
        b = np.mean(np.log(mean)) - report.fitted_slope * np.mean(np.log(n_eff))
        grid = np.geomspace(n_eff.min(), n_eff.max(), 50)
        ax.plot(grid, np.exp(b) * grid**report.fitted_slope, "-",
                label=f"fit slope {report.fitted_slope:.3f}")
        ax.plot(grid, np.exp(b) * n_eff[0] ** (report.fitted_slope + report.target)
                * grid ** (-report.target), "--", label=f"target slope {-report.target:.3f}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("effective observations")
    ax.set_ylabel("excess risk")
    ax.set_title(f"verdict: {report.verdict}")
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_bernstein_table(table, path) -> Path:
    """Empirical tail, its Wilson upper limit and the bound against eps."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    tail = np.where(table.empirical_tail > 0, table.empirical_tail, np.nan)
    ax.semilogy(table.eps, table.bound, "-", label="bound")
    ax.semilogy(table.eps, table.wilson_upper, "s--", label=f"Wilson upper ({table.level:g})")
    ax.semilogy(table.eps, tail, "o", label="empirical tail")
    ax.set_xlabel("eps")
    ax.set_ylabel("probability")
    ax.set_title(f"{table.meta.get('class', '')}, n={table.n}, reps={table.reps}")
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
