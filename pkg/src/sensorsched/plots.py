"""Best-effort SVG figures.

Plotting never affects program flow: each helper returns True when the
file was written and False on any failure (including matplotlib being
unimportable), so experiment runs succeed even on plot trouble.
"""

from __future__ import annotations

import warnings

import numpy as np


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _best_effort(fn):
    def wrapped(*args, **kwargs):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                fn(*args, **kwargs)
            return True
        except Exception:
            return False

    return wrapped


def _ramp(i: int, n: int):
    """Blue-to-red color for iterate i of n."""
    s = 0.0 if n <= 1 else i / (n - 1)
    return (s, 0.15, 1.0 - s)


@_best_effort
def schedule_evolution(path, cell_centers, densities, final_label="final"):
    """Overlay of schedule densities per iteration, early blue to late red."""
    plt = _figure()
    fig, ax = plt.subplots(figsize=(7, 4))
    n = len(densities)
    for i, dens in enumerate(densities):
        ax.plot(cell_centers, dens, color=_ramp(i, n), lw=1.0,
                alpha=0.55 if 0 < i < n - 1 else 1.0)
    ax.set_xlabel("t")
    ax.set_ylabel("schedule density")
    ax.set_title(f"schedule evolution (blue = initial, red = {final_label})")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


@_best_effort
def bar_chart(path, labels, values, ylabel):
    plt = _figure()
    fig, ax = plt.subplots(figsize=(6, 4))
    pos = np.arange(len(labels))
    ax.bar(pos, values, color="#3465a4")
    ax.set_xticks(pos)
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


@_best_effort
def curves(path, x, named_y, xlabel, ylabel, logy=False):
    """Labeled line plot; ``named_y`` maps legend label to y-array."""
    plt = _figure()
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, y in named_y.items():
        ax.plot(x, y, lw=1.4, label=label)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


@_best_effort
def filtered_path(path, times, truth, mean, sd, labels):
    """Per-component truth vs conditional mean with +-2 sd bands."""
    plt = _figure()
    dim = truth.shape[1]
    fig, axes = plt.subplots(dim, 1, figsize=(7, 2.6 * dim), sharex=True)
    axes = np.atleast_1d(axes)
    for i, ax in enumerate(axes):
        ax.fill_between(times, mean[:, i] - 2 * sd[:, i], mean[:, i] + 2 * sd[:, i],
                        color="#3465a4", alpha=0.25, label="±2 sd")
        ax.plot(times, mean[:, i], color="#3465a4", lw=1.3, label="filter mean")
        ax.plot(times, truth[:, i], color="#cc0000", lw=1.0, label="signal")
        ax.set_ylabel(labels[i])
        if i == 0:
            ax.legend(loc="best", fontsize=8)
    axes[-1].set_xlabel("t")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


@_best_effort
def density_overlay(path, x, named_densities, xlabel="x"):
    plt = _figure()
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, vals in named_densities.items():
        ax.plot(x, vals, lw=1.4, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("density")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
