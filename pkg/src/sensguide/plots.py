"""Optional matplotlib rendering for CLI outputs.

Imported lazily by the CLI so the core library never needs matplotlib.
Every function writes a PNG and closes its figure.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_trajectory(traj, path, title: str | None = None) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    for i in range(traj.dimension):
        ax.plot(traj.times, traj.samples[:, i], label=f"x{i + 1}")
    ax.set_xlabel("t")
    ax.set_ylabel("state")
    if title:
        ax.set_title(title)
    ax.legend()
    ax.grid(True, alpha=0.3)
    _save(fig, path)


def plot_reach(result, path) -> None:
    two_d = result.target.shape[0] == 2
    fig, axes = plt.subplots(1, 2 if two_d else 1, figsize=(9 if two_d else 6, 4))
    ax = axes[0] if two_d else axes
    ks = [it.k for it in result.iterations]
    ds = [it.d_a for it in result.iterations]
    ax.semilogy(ks, ds, marker="o")
    ax.axhline(result.delta, color="red", linestyle="--", label="delta")
    ax.set_xlabel("simulations")
    ax.set_ylabel("distance to target")
    ax.legend()
    ax.grid(True, alpha=0.3)
    if two_d:
        ax2 = axes[1]
        pts = np.array([it.x_t for it in result.iterations])
        ax2.plot(pts[:, 0], pts[:, 1], marker=".", label="reached states")
        ax2.plot(*result.target, marker="*", markersize=12, linestyle="none",
                 color="red", label="target")
        ax2.set_xlabel("x1")
        ax2.set_ylabel("x2")
        ax2.legend()
        ax2.grid(True, alpha=0.3)
    _save(fig, path)


def plot_coverage(report, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 5))
    if report.box.dimension == 2:
        corners = np.vstack([report.corners, report.corners[0]])
        ax.plot(corners[:, 0], corners[:, 1], color="black", label="extent box")
        good = np.array([c.target for c in report.targets if c.converged])
        bad = np.array([c.target for c in report.targets if not c.converged])
        if good.size:
            ax.plot(good[:, 0], good[:, 1], ".", color="tab:green", label="reached")
        if bad.size:
            ax.plot(bad[:, 0], bad[:, 1], "x", color="tab:red", label="missed")
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
    else:
        ax.bar(["fraction reached"], [report.fraction])
        ax.set_ylim(0, 1)
    ax.set_title(f"t={report.t}, fraction={report.fraction:.2f}")
    ax.legend(loc="best")
    ax.grid(True, alpha=0.3)
    _save(fig, path)


def plot_error_curve(curve, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.loglog(curve.radii, np.maximum(curve.eps_abs, 1e-16), marker="o")
    ax.set_xlabel("perturbation radius")
    ax.set_ylabel("mean absolute error")
    ax.grid(True, which="both", alpha=0.3)
    _save(fig, path)


def plot_falsification(result, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(len(result.rho_history)), result.rho_history, marker="o")
    ax.axhline(0.0, color="red", linestyle="--")
    ax.set_xlabel("simulations")
    ax.set_ylabel("robustness")
    ax.set_title(f"{result.method}: rho={result.rho:.4g}")
    ax.grid(True, alpha=0.3)
    _save(fig, path)


def plot_prediction(times, states, path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    states = np.asarray(states)
    for i in range(states.shape[1]):
        ax.plot(times, states[:, i], label=f"x{i + 1} (predicted)")
    ax.set_xlabel("t")
    ax.set_ylabel("state")
    ax.legend()
    ax.grid(True, alpha=0.3)
    _save(fig, path)
