"""Figure rendering for the CLI report paths (written to files, Agg backend)."""
import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "save_spectrum_plot",
    "save_region_plot",
    "save_locus_plot",
    "save_trajectory_plot",
]


def save_spectrum_plot(spectrum, path, title=None):
    """spectrum: a Spectrum, or any object with .values, or a complex array."""
    fig, ax = plt.subplots(figsize=(6, 5))
    vals = np.asarray(getattr(spectrum, "values", spectrum))
    if vals.size:
        ax.plot(vals.real, vals.imag, "x", color="tab:blue", ms=8, mew=1.8)
    ax.axvline(0.0, color="k", lw=0.8, alpha=0.6)
    ax.set_xlabel(r"$\Re(s)$")
    ax.set_ylabel(r"$\Im(s)$")
    ax.grid(True, alpha=0.3)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_region_plot(region, path, title=None):
    fig, ax = plt.subplots(figsize=(6, 5))
    T, tau = np.meshgrid(region.t_axis, region.tau_axis, indexing="ij")
    ax.pcolormesh(T, tau, region.stable.astype(float), shading="auto",
                  cmap="Greens", vmin=0, vmax=1.6)
    for line in region.boundary:
        pts = np.asarray(line)
        ax.plot(pts[:, 0], pts[:, 1], "k-", lw=1.2)
    ax.set_xlabel("filter constant T")
    ax.set_ylabel(r"input delay $\tau_0$")
    ax.set_title(title or "stable region (shaded)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_locus_plot(locus, path, title=None):
    fig, ax = plt.subplots(figsize=(6, 5))
    cmap = plt.get_cmap("viridis")
    span = max(locus.values[-1] - locus.values[0], 1e-30)
    for trace in locus.traces:
        if not trace:
            continue
        vals = np.array([v for v, _ in trace])
        roots = np.array([r for _, r in trace])
        ax.scatter(roots.real, roots.imag, c=cmap((vals - locus.values[0]) / span),
                   s=8)
    ax.axvline(0.0, color="k", lw=0.8, alpha=0.6)
    ax.set_xlabel(r"$\Re(s)$")
    ax.set_ylabel(r"$\Im(s)$")
    ax.set_title(title or f"rightmost roots vs {locus.param}")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_trajectory_plot(traj, path, title=None):
    fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    norms = np.linalg.norm(traj.states, axis=1)
    axes[0].semilogy(traj.times, np.maximum(norms, 1e-300), "b-")
    axes[0].set_ylabel(r"$\|\xi(t)\|$")
    axes[0].grid(True, alpha=0.3)
    label = f"fitted slope {traj.norm_log_slope:.4g}"
    if traj.diverged:
        label += " (diverged)"
    axes[0].set_title(title or label)
    axes[1].plot(traj.times, traj.states)
    axes[1].set_xlabel("t")
    axes[1].set_ylabel("components")
    axes[1].grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
