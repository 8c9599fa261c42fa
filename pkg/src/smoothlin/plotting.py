"""Deterministic SVG figures for the reports."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["save_svg", "plot_spectrum_scan", "plot_holder", "plot_dyadic", "plot_foliation"]


def save_svg(fig, path):
    """Write ``fig`` without timestamps and with fixed element ids."""
    with matplotlib.rc_context({"svg.hashsalt": "smoothlin", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_spectrum_scan(scan, spectrum, path):
    mu = np.array([r[0] for r in scan])
    margin = np.array([r[2] for r in scan])
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(np.log(mu), margin, lw=1, color="k")
    for lo, hi in spectrum.log_intervals:
        ax.axvspan(lo - 1e-3, hi + 1e-3, color="tab:red", alpha=0.3)
    ax.axvline(0.0, color="0.6", ls=":")
    ax.set_xlabel(r"$\ln \mu$")
    ax.set_ylabel("dichotomy margin")
    fig.tight_layout()
    save_svg(fig, path)


def plot_holder(fits, path):
    """``fits``: mapping label -> (dx, dF, HolderFit)."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, (dx, dF, fit) in fits.items():
        ax.loglog(dx, dF, ".", ms=2, label=f"{label}: slope {fit.slope:.3f}")
        xs = np.array(fit.radius_range)
        ax.loglog(xs, np.exp(fit.intercept) * xs ** fit.slope, "-", lw=1)
    ax.set_xlabel(r"$|x-y|$")
    ax.set_ylabel(r"$|F(x)-F(y)|$")
    ax.legend(fontsize=8)
    fig.tight_layout()
    save_svg(fig, path)


def plot_dyadic(reports, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, rep in reports.items():
        ax.semilogy(-np.log2(rep.radii), np.maximum(rep.ratios, 1e-300), "o-", ms=3, label=label)
    ax.set_xlabel("j  (radius $2^{-j}$)")
    ax.set_ylabel("normalized ratio")
    ax.legend(fontsize=8)
    fig.tight_layout()
    save_svg(fig, path)


def plot_foliation(log, path):
    it = [r[0] for r in log]
    val = [r[1] for r in log]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(it, val, "o-", ms=3)
    ax.set_xlabel("Picard iteration")
    ax.set_ylabel("weighted sup norm")
    fig.tight_layout()
    save_svg(fig, path)
