"""Figure rendering for the report path: boundaries, value surfaces and
single-path traces, written as PNG files next to the delimited outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["render_boundary", "render_field", "render_trace"]


def render_boundary(path, boundaries, alpha=0.0):
    """boundaries: mapping label -> Boundary; stopping regions lie above."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, b in boundaries.items():
        ax.plot(b.r, b.values, label=label)
    ax.axhline(alpha, color="k", lw=0.8, ls=":")
    ax.set_xlabel("interest rate r")
    ax.set_ylabel("barrier b(r)")
    ax.legend(frameon=False)
    ax.set_title("free boundary (continuation below, payout above)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_field(path, field, title, zlabel="value"):
    fig, ax = plt.subplots(figsize=(6.0, 4.4))
    mesh = ax.pcolormesh(field.grid.r, field.grid.z, field.values.T, shading="auto")
    fig.colorbar(mesh, ax=ax, label=zlabel)
    ax.set_xlabel("interest rate r")
    ax.set_ylabel("surplus z")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_trace(path, trace, boundary):
    fig, axes = plt.subplots(2, 1, figsize=(7.0, 5.5), sharex=True)
    t = trace["t"]
    axes[0].plot(t, trace["Z"] - trace["D"], lw=0.7, label="surplus Z - D")
    axes[0].plot(t, boundary(trace["R"]), lw=0.7, label="barrier b(R)")
    axes[0].plot(t, trace["D"], lw=0.9, label="dividends D")
    axes[0].legend(frameon=False, fontsize=8)
    axes[0].set_ylabel("level")
    axes[1].plot(t, trace["R"], lw=0.7, color="tab:red")
    axes[1].set_ylabel("rate R")
    axes[1].set_xlabel("time")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
